"""Exception hierarchy shared by all detbench modules."""


class DetbenchError(Exception):
    """Base class for domain errors (CLI exit code 1)."""


class ParseError(DetbenchError, ValueError):
    """A label or detection file line could not be parsed."""

    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class InvalidBoxError(DetbenchError, ValueError):
    pass


class UnplaceableError(DetbenchError):
    """An asset cannot fit in the background's top band at minimum scale."""


class RecipeError(DetbenchError):
    """A composite recipe is inconsistent with the background it targets."""


class KernelParameterError(DetbenchError, ValueError):
    pass


class SplitError(DetbenchError):
    pass


class UndefinedAPError(DetbenchError):
    """Average precision requested for a dataset with no ground-truth objects."""


class BackendError(DetbenchError):
    """A detector backend failed on one frame."""


class BenchError(DetbenchError):
    pass
