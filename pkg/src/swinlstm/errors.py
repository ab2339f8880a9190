"""Exception hierarchy shared across the package."""


class SwinLSTMError(Exception):
    """Base class for all package errors."""


class ShapeError(SwinLSTMError, ValueError):
    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes " + " vs ".join(str(s) for s in self.shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(SwinLSTMError, FloatingPointError):
    def __init__(self, op, detail=""):
        self.op = op
        super().__init__(f"{op}: non-finite values{': ' + detail if detail else ''}")


class NonDeterministicError(SwinLSTMError):
    pass


class GradientCheckError(SwinLSTMError):
    def __init__(self, name, error, tol):
        self.name = name
        self.error = error
        self.tol = tol
        super().__init__(f"{name}: max relative error {error:.3e} exceeds {tol:.1e}")


class ConfigError(SwinLSTMError, ValueError):
    """Raised with every validation problem found, not just the first."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


class CheckpointError(SwinLSTMError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointConfigError(CheckpointError):
    pass


class DataFormatError(SwinLSTMError):
    pass


class TruncatedDataError(DataFormatError):
    pass
