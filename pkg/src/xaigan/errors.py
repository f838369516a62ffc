class XaiganError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(XaiganError, ValueError):
    def __init__(self, where, expected, actual):
        self.where, self.expected, self.actual = where, tuple(expected), tuple(actual)
        super().__init__(f"{where}: expected shape {self.expected}, got {self.actual}")


class StateError(XaiganError, RuntimeError):
    pass


class NonFiniteError(XaiganError, FloatingPointError):
    def __init__(self, message, layer=None):
        self.layer = layer
        super().__init__(message if layer is None else f"{message} (layer {layer})")


class ConfigError(XaiganError, ValueError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")
