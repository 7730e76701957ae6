# errors.py
# Exception hierarchy shared by every module. The CLI maps ScorerError to
# exit code 2 and every other RescoreError to exit code 1.


class RescoreError(Exception):
    """Base class for all lattice-rescore failures."""


class ConfigError(RescoreError):
    """A parameter is outside its legal range (epsilon, lambda, order...)."""


class LatticeError(RescoreError):
    """A lattice violates a structural invariant."""


class ParseError(LatticeError):
    """Malformed lattice text. line_no is 1-based, None for document-level problems."""

    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class CycleError(LatticeError):
    pass


class UnreachableStateError(LatticeError):
    pass


class NondeterminismError(LatticeError):
    pass


class TooManyPathsError(LatticeError):
    def __init__(self, count, limit):
        self.count = count
        self.limit = limit
        super().__init__(f"lattice has {count} paths, limit is {limit}")


class UncoveredArcError(RescoreError):
    """An arc (or final termination) has no neural score candidates."""


class MissingReferenceError(RescoreError):
    pass


class HypothesisError(RescoreError, ValueError):
    """A hypothesis batch is empty, repeats an id or carries a structural token."""


class ScorerError(RescoreError):
    pass


class ScorerProtocolError(ScorerError):
    """Malformed scorer response: bad JSON, id mismatch, wrong token count."""


class ScorerUnavailableError(ScorerError):
    """The scorer process or service could not be reached."""
