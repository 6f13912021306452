"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands with incompatible shapes. The message names both operands."""


class ConfigError(ValueError):
    """Invalid configuration value, empty batch, or unusable argument."""


class FormatError(ValueError):
    """Malformed binary container. Carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int = -1):
        super().__init__(f"{message} (byte offset {offset})" if offset >= 0 else message)
        self.offset = offset


class NonFiniteLossError(RuntimeError):
    """A loss component became NaN or infinite. Names the first bad component."""

    def __init__(self, component: str, value: float):
        super().__init__(f"non-finite loss component '{component}': {value!r}")
        self.component = component
