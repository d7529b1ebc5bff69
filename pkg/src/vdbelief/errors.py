"""Exception hierarchy.

Domain errors (bad parameters, infeasible requests) derive from
:class:`VDBeliefError`; malformed input files raise :class:`ModelFormatError`
so the CLI can tell the two apart when picking an exit code.
"""


class VDBeliefError(Exception):
    """Base class for every error raised by this package."""


class ModelError(VDBeliefError, ValueError):
    """A model or request violates a structural invariant."""


class ModelFormatError(ModelError):
    """A model/belief/assignment document does not match its schema.

    ``path`` locates the offending node, e.g. ``actions[3].transitions.F1``.
    """

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class BeliefError(VDBeliefError, ValueError):
    pass


class LPError(VDBeliefError, RuntimeError):
    """The simplex engine gave up; ``diagnostics`` holds pivot counts etc."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class CapacityError(VDBeliefError):
    """A combinatorial cap (state space, backup size, enumeration) was hit."""
