"""Shared entry-point glue for runnable modules."""

from __future__ import annotations

import logging
import signal
import sys
from typing import Callable

from ..frame import frame_from_data_dir, read_staged_params


def run_module(handler_factory: Callable[[dict], object]):
    """Standard module main: build the handler from staged parameters and
    run the frame until SIGTERM/SIGINT."""
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if len(sys.argv) != 2:
        print(f"usage: {sys.argv[0]} <data_dir>", file=sys.stderr)
        raise SystemExit(2)
    data_dir = sys.argv[1]
    params = read_staged_params(data_dir)
    frame = frame_from_data_dir(data_dir, handler_factory(params))
    for sig in (signal.SIGTERM, signal.SIGINT):
        signal.signal(sig, lambda *_: frame.stop())
    frame.run()
