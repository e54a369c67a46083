"""Application modules of the demo driving stack.

Each module is runnable as ``python -m autoframe.apps.<name> <data_dir>``
against a staged data directory, and exposes its processing core as plain
functions so it can be tested without any deployment machinery.
"""
