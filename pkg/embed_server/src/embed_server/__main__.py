"""Command line entry point: embed-server [--config run.yaml] [--port N].

The port comes from the command line; model revision, device, and pool
size come from the config file, so deployments pin them in one place.
"""
import argparse
import sys

from .app import create_app
from .config import build_backend, load_server_config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="embed-server", description="sentence embedding HTTP service")
    parser.add_argument("--config", default=None,
                        help="YAML config file (model, revision, device)")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8230)
    args = parser.parse_args(argv)

    try:
        config = load_server_config(args.config)
        backend = build_backend(config)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    import uvicorn
    app = create_app(config, backend)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    sys.exit(main())
