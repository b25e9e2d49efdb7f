class RetargetError(Exception):
    pass


class InvalidArgument(RetargetError, ValueError):
    pass


class DegenerateInput(RetargetError, ValueError):
    pass


class InputNotAligned(RetargetError, ValueError):
    pass


class GenerationFailure(RetargetError, RuntimeError):
    pass


class NotWarmedUp(RetargetError, RuntimeError):
    pass


class NumericFailure(RetargetError, ArithmeticError):
    def __init__(self, message, tensor=None):
        super().__init__(message)
        self.tensor = tensor


class StageError(RetargetError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the original error."""

    def __init__(self, stage, error):
        super().__init__(f"{stage}: {error}")
        self.stage = stage
