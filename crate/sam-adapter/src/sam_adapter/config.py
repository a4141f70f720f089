from dataclasses import dataclass
from pathlib import Path

VARIANTS = ("vit_h", "vit_l", "vit_b")


class ConfigError(ValueError):
    pass


@dataclass
class AdapterConfig:
    model_variant: str
    checkpoint: Path
    out_dir: Path
    device: str = "cpu"
    # "stdio" or "tcp:HOST:PORT"
    listen: str = "stdio"

    def validate(self) -> None:
        if self.model_variant not in VARIANTS:
            raise ConfigError(f"unknown model_variant {self.model_variant!r}, expected one of {VARIANTS}")
        if not Path(self.checkpoint).is_file():
            raise ConfigError(f"checkpoint {self.checkpoint} does not exist")
        # released checkpoints carry the variant in their name, e.g. sam_vit_h_4b8939.pth
        if self.model_variant not in Path(self.checkpoint).name:
            raise ConfigError(f"checkpoint {Path(self.checkpoint).name} does not match variant {self.model_variant}")
        self.listen_address()

    def listen_address(self):
        """None for stdio, else a (host, port) pair."""
        if self.listen == "stdio":
            return None
        if self.listen.startswith("tcp:"):
            host, sep, port = self.listen[4:].rpartition(":")
            if sep and port.isdigit():
                return (host or "127.0.0.1", int(port))
        raise ConfigError(f"listen must be 'stdio' or 'tcp:HOST:PORT', got {self.listen!r}")
