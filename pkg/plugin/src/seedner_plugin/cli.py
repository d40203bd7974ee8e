"""Command line entry point: serve either protocol role in the foreground."""

from __future__ import annotations

import argparse
import json
import sys

from . import mlm_server, tagger_server
from .models import PluginConfig


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument(
        "--endpoint", default="tcp:127.0.0.1:0",
        help="tcp:host:port or unix:/path.sock; port 0 picks a free port")
    sub.add_argument("--config", help="JSON file of PluginConfig fields")
    sub.add_argument("--model", help="override the model identifier for this role")


def _config(args: argparse.Namespace, role: str) -> PluginConfig:
    cfg = PluginConfig.load(args.config) if args.config else PluginConfig()
    if args.model:
        payload = {f.name: getattr(cfg, f.name) for f in cfg.__dataclass_fields__.values()}
        payload["encoder_model" if role == "tagger" else "mlm_model"] = args.model
        cfg = PluginConfig(**payload)
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="seedner-plugin",
        description="neural tagger and masked-LM scorer servers for the "
                    "seedner wire protocol")
    subs = parser.add_subparsers(dest="command", required=True)
    _add_common(subs.add_parser("serve-tagger", help="run the tagger role"))
    _add_common(subs.add_parser("serve-mlm", help="run the masked-LM scorer role"))
    args = parser.parse_args(argv)

    role = "tagger" if args.command == "serve-tagger" else "mlm"
    try:
        cfg = _config(args, role)
    except (OSError, ValueError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    serve = tagger_server.serve if role == "tagger" else mlm_server.serve
    try:
        server = serve(args.endpoint, cfg)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"serving {role} on {server.endpoint}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
