import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from sam_adapter import AdapterConfig, ConfigError
from sam_adapter.pfm import read_pfm, write_pfm


def test_config_checks_weights_and_variant(tmp_path):
    ckpt = tmp_path / "sam_vit_h_4b8939.pth"
    cfg = AdapterConfig("vit_h", ckpt, tmp_path)
    with pytest.raises(ConfigError, match="does not exist"):
        cfg.validate()
    ckpt.write_bytes(b"")
    cfg.validate()
    with pytest.raises(ConfigError, match="does not match"):
        AdapterConfig("vit_b", ckpt, tmp_path).validate()
    with pytest.raises(ConfigError, match="unknown"):
        AdapterConfig("vit_x", ckpt, tmp_path).validate()


@pytest.mark.parametrize(
    "listen,addr", [("stdio", None), ("tcp:0.0.0.0:9000", ("0.0.0.0", 9000)), ("tcp::9001", ("127.0.0.1", 9001))]
)
def test_listen_selector(tmp_path, listen, addr):
    assert AdapterConfig("vit_h", tmp_path, tmp_path, listen=listen).listen_address() == addr


def test_bad_listen_selector(tmp_path):
    with pytest.raises(ConfigError):
        AdapterConfig("vit_h", tmp_path, tmp_path, listen="udp:1").listen_address()


def test_pfm_layout(tmp_path):
    data = np.array([[0.0, 0.25, 0.5], [0.75, 1.0, 0.125]])
    p = tmp_path / "m.pfm"
    write_pfm(p, data)
    raw = p.read_bytes()
    assert raw.startswith(b"Pf\n3 2\n-1.0\n")
    # bottom row first
    assert np.frombuffer(raw[len(b"Pf\n3 2\n-1.0\n"):], "<f4")[:3].tolist() == [0.75, 1.0, 0.125]
    assert read_pfm(p).tolist() == data.tolist()


def test_maps_are_readable_by_the_rust_tools(tmp_path):
    exe = Path(__file__).resolve().parents[2] / "target" / "debug" / "stsam"
    if not exe.exists():
        exe = shutil.which("stsam")
        if exe is None:
            pytest.skip("stsam binary not built")
    p = tmp_path / "m.pfm"
    write_pfm(p, np.tile(np.linspace(0, 1, 16), (16, 1)))
    out = subprocess.run([str(exe), "prompts", str(p)], capture_output=True, text=True, check=True)
    assert '"box"' in out.stdout


def test_startup_aborts_without_weights(tmp_path, capsys):
    from sam_adapter.__main__ import main

    assert main(["--checkpoint", str(tmp_path / "sam_vit_h.pth"), "--out-dir", str(tmp_path)]) == 2
    assert "does not exist" in capsys.readouterr().err
