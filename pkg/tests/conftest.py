import socket
import threading
import time
from contextlib import contextmanager

import pytest


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def pump(loop, cond, timeout=5.0):
    """Drive a netio loop until cond() holds; fail the test on timeout."""
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if cond():
            return
        loop.step(0.02)
    pytest.fail("condition not reached within %.1fs" % timeout)


def wait_for(cond, timeout=5.0, interval=0.01):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if cond():
            return
        time.sleep(interval)
    pytest.fail("condition not reached within %.1fs" % timeout)


@contextmanager
def run_frame_in_thread(frame):
    thread = threading.Thread(target=frame.run, daemon=True)
    thread.start()
    try:
        yield frame
    finally:
        frame.stop()
        thread.join(timeout=5.0)
        assert not thread.is_alive(), "frame thread failed to stop"
