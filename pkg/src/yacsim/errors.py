"""Exception types shared across yacsim."""


class ProtocolFault(ValueError):
    """A protocol rule was broken by an input (not by a bug in this code).

    Attributes:
        code: Stable short identifier, e.g. ``"chain-gap"`` or ``"bad-commit"``.
    """

    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)


class ConfigError(ValueError):
    """A scenario, grid or command line description cannot be used."""
