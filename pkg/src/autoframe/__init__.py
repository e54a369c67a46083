"""autoframe: centralized vehicle middleware with a config-driven HAL,
compiled dataflow deployments, sandboxed modules and a demo driving stack."""

__version__ = "0.1.0"
