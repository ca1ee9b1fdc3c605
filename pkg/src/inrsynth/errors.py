"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    pass


class FormatError(ValueError):
    """A file on disk does not follow its declared binary layout."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class NumericError(ArithmeticError):
    """Non-finite values showed up during training or sampling."""

    def __init__(self, message, *, step=None, name=None):
        self.step = step
        self.name = name
        parts = [message]
        if name is not None:
            parts.append(f"param={name}")
        if step is not None:
            parts.append(f"step={step}")
        super().__init__(" ".join(parts))


class StateError(RuntimeError):
    pass


class StageError(RuntimeError):
    """Failure inside one pipeline stage, tagged with the stage and item index."""

    def __init__(self, stage, index, cause):
        self.stage, self.index, self.cause = stage, index, cause
        where = stage if index is None else f"{stage}[{index}]"
        super().__init__(f"{where}: {type(cause).__name__}: {cause}")
