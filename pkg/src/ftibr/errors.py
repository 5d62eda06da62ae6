"""Exception types raised across the package."""


class FtibrError(Exception):
    """Base class for all package errors."""


class ConfigError(FtibrError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DisconnectedGraph(FtibrError):
    pass


class BadTau(FtibrError):
    pass


class FaultedPlant(FtibrError):
    pass


class DimensionMismatch(FtibrError):
    pass


class ZeroGridVoltage(FtibrError):
    pass


class NoConvergence(FtibrError):
    def __init__(self, message, residual_p, residual_q, iterations):
        self.residual_p = residual_p
        self.residual_q = residual_q
        self.iterations = iterations
        super().__init__(
            f"{message} (iters={iterations}, residual_p={residual_p:.3e}, "
            f"residual_q={residual_q:.3e})"
        )


class NumericalDivergence(FtibrError):
    def __init__(self, t, ibr, value):
        self.t = t
        self.ibr = ibr
        self.value = value
        super().__init__(f"state of IBR {ibr} reached {value:.3e} at t={t:.6g} s")
