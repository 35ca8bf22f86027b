"""Exception types shared across the package."""


class S2TError(Exception):
    """Base class for all errors raised by s2tower."""


class InvalidInputError(S2TError, ValueError):
    pass


class InvalidInvolutionError(InvalidInputError):
    pass


class InvalidBasisError(InvalidInputError):
    pass


class InvalidSchemeError(InvalidInputError):
    pass


class EmptySetError(InvalidInputError):
    pass


class MissingAssignmentError(S2TError, KeyError):
    pass


class PreconditionError(S2TError):
    """A mathematical hypothesis of a construction does not hold.

    ``witness`` carries whatever object demonstrates the failure (usually a
    word in JSON form), so callers can report it verbatim.
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class SearchFailure(S2TError):
    """A randomized search exhausted its retry budget."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class EmbeddingSearchFailure(SearchFailure):
    pass


class MissingConjugatorError(SearchFailure):
    pass
