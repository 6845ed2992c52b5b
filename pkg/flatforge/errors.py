class FlatforgeError(Exception):
    """Base class for errors raised by flatforge."""


class LoopAlgebraError(FlatforgeError, ValueError):
    pass


class InvariantError(FlatforgeError):
    """A hard invariant failed. `module` names where it was detected."""

    def __init__(self, message, module=None, magnitude=None):
        super().__init__(message)
        self.module = module
        self.magnitude = magnitude

    def __str__(self):
        text = super().__str__()
        if self.module:
            text = f"[{self.module}] {text}"
        if self.magnitude is not None:
            text += f" (magnitude {self.magnitude:.3e})"
        return text


class IntegrationError(FlatforgeError):
    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} at t={tuple(float(v) for v in t)}")
        self.t = t


class SpectralError(FlatforgeError):
    pass


class ConjugacyError(FlatforgeError):
    def __init__(self, message, nullity=None, residual=None):
        super().__init__(message)
        self.nullity = nullity
        self.residual = residual


class GridError(FlatforgeError, ValueError):
    pass


class ConfigError(FlatforgeError):
    """Config parse/validation failure with line and field diagnostics."""

    def __init__(self, message, line=None, field=None):
        super().__init__(message)
        self.line = line
        self.field = field

    def __str__(self):
        where = []
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.field is not None:
            where.append(f"field '{self.field}'")
        prefix = ", ".join(where)
        return f"{prefix}: {super().__str__()}" if prefix else super().__str__()
