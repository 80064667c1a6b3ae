"""Command-line entry point: frame directory in, flow files out."""
from __future__ import annotations

import argparse
import logging
import sys

from .bridge import BridgeConfig, export_flows


def _parse_size(text: str) -> tuple[int, int]:
    parts = [int(p) for p in text.replace(",", " ").split()]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected H,W; got {text!r}")
    return parts[0], parts[1]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowbridge",
        description="Export reference-to-frame optical flow with a "
                    "pretrained model, in the interchange flow format")
    parser.add_argument("--frames", required=True,
                        help="directory of numbered raster frames")
    parser.add_argument("--ref", type=int, default=0,
                        help="reference frame index (default 0)")
    parser.add_argument("--out", default="flow", help="output directory")
    parser.add_argument("--model", choices=("raft_small", "raft_large"),
                        default="raft_small")
    parser.add_argument("--checkpoint",
                        help="local state-dict file (otherwise the packaged "
                             "pretrained weights are downloaded)")
    parser.add_argument("--resize", type=_parse_size, metavar="H,W",
                        help="inference resolution override, multiples of 8")
    parser.add_argument("--batch", type=int, default=4, help="batch size")
    parser.add_argument("--iters", type=int, default=12,
                        help="refinement iterations")
    parser.add_argument("--device", help="torch device (default: auto)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        config = BridgeConfig(frames_dir=args.frames,
                              reference_index=args.ref,
                              out_dir=args.out,
                              model=args.model,
                              checkpoint=args.checkpoint,
                              resize_to=args.resize,
                              batch_size=args.batch,
                              iterations=args.iters,
                              device=args.device)
        written = export_flows(config)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"flowbridge: {len(written)} flow files -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
