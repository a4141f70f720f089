import argparse
import socketserver
import sys
from pathlib import Path

from .config import AdapterConfig, ConfigError
from .protocol import handle_line, serve


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="sam-adapter", description="Promptable segmenter over the stsam protocol")
    p.add_argument("--model-variant", default="vit_h")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--device", default="cpu")
    p.add_argument("--listen", default="stdio", help="stdio or tcp:HOST:PORT")
    args = p.parse_args(argv)
    config = AdapterConfig(args.model_variant, args.checkpoint, args.out_dir, args.device, args.listen)
    try:
        from .backend import SamPredictor

        predictor = SamPredictor(config)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"error: model load failed: {e}", file=sys.stderr)
        return 1

    addr = config.listen_address()
    if addr is None:
        serve(predictor, config.out_dir)
        return 0
    config.out_dir.mkdir(parents=True, exist_ok=True)

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            for raw in self.rfile:
                line = raw.decode("utf-8", "replace")
                if line.strip():
                    out = handle_line(predictor, config.out_dir, line) + "\n"
                    self.wfile.write(out.encode("utf-8"))

    # one connection at a time: a single instance has one request in flight
    with socketserver.TCPServer(addr, Handler) as server:
        print(f"listening on {server.server_address[0]}:{server.server_address[1]}", file=sys.stderr)
        server.serve_forever()
    return 0


if __name__ == "__main__":
    sys.exit(main())
