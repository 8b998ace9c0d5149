"""yacsim: the YAC consensus state machine, a deterministic network simulator and an experiment harness."""

__version__ = "0.1.0"


def main() -> None:
    import sys

    from yacsim.cli import main as cli_main

    sys.exit(cli_main())
