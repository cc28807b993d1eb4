"""Exception types shared across the package."""


class EmptyReductionError(ValueError):
    """A mean/fraction was requested over an empty pixel set."""


class DivergenceError(RuntimeError):
    """An optimizer produced a non-finite or exploding value.

    ``trace`` carries whatever iteration history was recorded before the abort.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
