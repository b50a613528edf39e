class QSDEError(Exception):
    """Base class for every error raised by the qsde package."""


class DimensionError(QSDEError, ValueError):
    pass


class ModelError(QSDEError, ValueError):
    pass


class DilationError(QSDEError):
    pass


class CCPFailure(QSDEError):
    pass


class NumericalAbort(QSDEError, ArithmeticError):
    """A propagator left the finite range. Carries where it happened."""

    def __init__(self, message: str, step: int, trajectory: int | None = None):
        self.step = step
        self.trajectory = trajectory
        where = f"step {step}" if trajectory is None else f"trajectory {trajectory}, step {step}"
        super().__init__(f"{message} ({where})")

    def __reduce__(self):
        # keeps the indices when the error crosses a process boundary
        return _rebuild_abort, (self.args[0], self.step, self.trajectory)


def _rebuild_abort(text: str, step: int, trajectory: int | None) -> NumericalAbort:
    err = NumericalAbort.__new__(NumericalAbort)
    Exception.__init__(err, text)
    err.step, err.trajectory = step, trajectory
    return err
