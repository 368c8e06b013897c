"""Exception hierarchy shared across the package."""


class SynplanError(Exception):
    pass


class ChemSyntaxError(SynplanError, ValueError):
    """Malformed SMILES or reaction-pattern text.

    ``position`` is the 0-based character offset where parsing failed.
    """

    def __init__(self, message: str, text: str = "", position: int = -1):
        self.text = text
        self.position = position
        if position >= 0:
            message = f"{message} at position {position}: {text!r}"
        super().__init__(message)


class ValenceError(SynplanError, ValueError):
    pass


class UnsupportedFeature(SynplanError, ValueError):
    pass


class MappingError(SynplanError, ValueError):
    pass


class ArityError(SynplanError, ValueError):
    pass


class NoMatch(SynplanError):
    pass


class InvalidAction(SynplanError):
    pass


class ReplayDivergence(SynplanError):
    pass


class FormatError(SynplanError, ValueError):
    pass


class DimensionError(SynplanError, ValueError):
    pass


class CompatibilityError(SynplanError):
    pass


class EmptyCandidateSet(SynplanError):
    pass


class InsufficientYield(SynplanError):
    pass


class NonFiniteLoss(SynplanError, FloatingPointError):
    pass


class OracleFailure(SynplanError):
    pass


class DegenerateVariance(SynplanError, ValueError):
    pass


class EmptyAfterExclusion(SynplanError, ValueError):
    pass
