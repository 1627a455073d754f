"""Exception hierarchy.

The CLI maps these onto exit codes: ``InputError`` -> 1, ``ModelError``
and ``PreconditionError`` -> 2, ``ConvergenceError`` -> 3.
"""


class MdpLabError(Exception):
    """Base class for every error raised by the library."""


class InputError(MdpLabError):
    """Malformed input: unreadable file, bad JSON, unknown identifiers."""


class ModelError(InputError):
    """Structurally invalid model. ``ident`` names the offending state or action."""

    def __init__(self, message, ident=None):
        self.ident = ident
        super().__init__(f"{message}: {ident}" if ident is not None else message)


class PreconditionError(MdpLabError):
    """The input is well formed but the requested operation does not apply."""


class ConvergenceError(MdpLabError):
    """An iterative solver stopped without meeting its tolerance."""


class LPError(MdpLabError):
    """Base class for linear-programming failures."""


class LPInfeasible(LPError):
    pass


class LPUnbounded(LPError):
    pass
