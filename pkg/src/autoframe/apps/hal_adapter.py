"""Generic HAL adapter module: direction, device and topic come from the
staged configuration written by the deployment's config-creation hook."""

from __future__ import annotations

from ..hal import adapter_from_params


def main():
    from ._runtime import run_module
    run_module(adapter_from_params)


if __name__ == "__main__":
    main()
