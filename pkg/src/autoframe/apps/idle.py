"""A module that does nothing but keep its frame alive.

Useful as a deployment smoke-test target and as the smallest possible
module template."""

from __future__ import annotations


class IdleHandler:
    def process(self, port, payload, t_us):
        return []


def create_config(manifest, vehicle_cfg) -> dict:
    return {}


def main():
    from ._runtime import run_module
    run_module(lambda params: IdleHandler())


if __name__ == "__main__":
    main()
