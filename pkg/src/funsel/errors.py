"""Exception types raised across the package."""


class FunselError(Exception):
    """Base class for all funsel errors."""


class InvalidGridError(FunselError):
    pass


class GridMismatchError(FunselError):
    pass


class DegenerateKernelError(FunselError):
    pass


class NumericError(FunselError):
    pass


class NumericDivergenceError(NumericError):
    def __init__(self, message, sweep=None):
        super().__init__(message)
        self.sweep = sweep


class IngestionError(FunselError):
    pass


class DegeneratePredictorError(FunselError):
    pass


class InsufficientDataError(FunselError):
    pass


class InvalidWeightsError(FunselError):
    pass


class DegeneratePathError(FunselError):
    pass


class SingularDesignError(FunselError):
    def __init__(self, message, smallest_singular_value=None):
        super().__init__(message)
        self.smallest_singular_value = smallest_singular_value


class FoldError(FunselError):
    pass


class ScenarioError(FunselError):
    pass


class DegenerateSignalError(FunselError):
    pass
