"""Request decoding and response encoding for the promptable role.

One JSON request per line in, one JSON response per line out. Masks are
written to ``{out_dir}/{request_id}.pfm`` and returned by path.
"""

import json
import re
import sys
from pathlib import Path
from typing import List, Optional, Protocol, Sequence, TextIO, Tuple

import numpy as np
from PIL import Image

from .pfm import write_pfm

_ID = re.compile(r"[A-Za-z0-9_.\-]{1,200}")


class Predictor(Protocol):
    def predict(
        self, image: np.ndarray, box: Optional[Sequence[int]], points: Sequence[Tuple[int, int]]
    ) -> np.ndarray:
        """Foreground probability map with the image's height and width."""
        ...


class RequestError(Exception):
    pass


def _valid_id(rid: str) -> bool:
    return bool(_ID.fullmatch(rid)) and not rid.startswith(".")


def _parse_prompts(raw) -> Tuple[Optional[List[int]], List[Tuple[int, int]]]:
    if not isinstance(raw, dict) or set(raw) - {"points", "box"}:
        raise RequestError("malformed request: prompts must be an object with points and/or box")
    points = raw.get("points") or []
    box = raw.get("box")

    def is_uint(v):
        return isinstance(v, int) and not isinstance(v, bool) and v >= 0

    if not all(isinstance(p, list) and len(p) == 2 and all(map(is_uint, p)) for p in points):
        raise RequestError("malformed request: points must be [x, y] pairs of non-negative integers")
    if box is not None:
        if not (isinstance(box, list) and len(box) == 4 and all(map(is_uint, box))):
            raise RequestError("malformed request: box must be [x_min, y_min, x_max, y_max]")
        if box[0] > box[2] or box[1] > box[3]:
            raise RequestError(f"malformed request: inverted box {box}")
    if box is None and not points:
        raise RequestError("malformed request: prompt set has neither box nor points")
    return box, [tuple(p) for p in points]


def _check_bounds(box, points, w: int, h: int) -> None:
    if box is not None and (box[2] >= w or box[3] >= h):
        raise RequestError(f"box {box} exceeds {w}x{h}")
    for x, y in points:
        if x >= w or y >= h:
            raise RequestError(f"point ({x}, {y}) outside {w}x{h}")


def _response(rid: str, status: str, message: str = "", mask_path: Optional[Path] = None) -> str:
    out = {"request_id": rid}
    if mask_path is not None:
        out["mask_path"] = str(mask_path)
    out["status"] = status
    out["message"] = message
    return json.dumps(out)


def handle_line(predictor: Predictor, out_dir: Path, line: str) -> str:
    try:
        req = json.loads(line)
    except json.JSONDecodeError as e:
        return _response("", "error", f"malformed request: {e}")
    if not isinstance(req, dict):
        return _response("", "error", "malformed request: expected an object")
    rid = req.get("request_id")
    if not isinstance(rid, str):
        return _response("", "error", "malformed request: missing field `request_id`")
    image_path = req.get("image_path")
    if not isinstance(image_path, str):
        return _response(rid, "error", "malformed request: missing field `image_path`")
    if not _valid_id(rid):
        return _response(rid, "error", f"invalid request_id {json.dumps(rid)}")
    try:
        if req.get("prompts") is None:
            raise RequestError("promptable role requires prompts")
        box, points = _parse_prompts(req["prompts"])
        try:
            with Image.open(image_path) as im:
                image = np.asarray(im.convert("RGB"))
        except OSError as e:
            raise RequestError(f"{image_path}: {e}") from e
        h, w = image.shape[:2]
        _check_bounds(box, points, w, h)
        prob = np.asarray(predictor.predict(image, box, points), dtype=np.float64)
        if prob.shape != (h, w):
            raise RequestError(f"model returned {prob.shape[1]}x{prob.shape[0]} for a {w}x{h} image")
        if not np.all(np.isfinite(prob)):
            raise RequestError("model returned non-finite values")
        out = Path(out_dir) / f"{rid}.pfm"
        write_pfm(out, np.clip(prob, 0.0, 1.0))
        return _response(rid, "ok", mask_path=out.resolve())
    except RequestError as e:
        return _response(rid, "error", str(e))
    except Exception as e:  # inference failures are reported, the server keeps running
        return _response(rid, "error", f"inference failed: {e}")


def serve(predictor: Predictor, out_dir: Path, reader: TextIO = sys.stdin, writer: TextIO = sys.stdout) -> None:
    """Answers requests one at a time until end of input."""
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    for line in reader:
        if not line.strip():
            continue
        writer.write(handle_line(predictor, out_dir, line) + "\n")
        writer.flush()
