"""SAM-class model behind the Predictor interface."""

import numpy as np

from .config import AdapterConfig, ConfigError


class SamPredictor:
    """Feeds box and points jointly as positive prompts and returns the
    single highest-scoring mask as sigmoid probabilities."""

    def __init__(self, config: AdapterConfig):
        config.validate()
        try:
            from segment_anything import SamPredictor as _Predictor
            from segment_anything import sam_model_registry
        except ImportError as e:
            raise ConfigError("segment_anything is not installed; install sam-adapter[sam]") from e
        model = sam_model_registry[config.model_variant](checkpoint=str(config.checkpoint))
        model.to(device=config.device)
        self._predictor = _Predictor(model)

    def predict(self, image, box, points):
        self._predictor.set_image(image)
        coords = np.array(points, dtype=np.float32) if points else None
        labels = np.ones(len(points), dtype=np.int64) if points else None
        logits, _, _ = self._predictor.predict(
            point_coords=coords,
            point_labels=labels,
            box=None if box is None else np.array(box, dtype=np.float32),
            multimask_output=False,
            return_logits=True,
        )
        return 1.0 / (1.0 + np.exp(-logits[0].astype(np.float64)))
