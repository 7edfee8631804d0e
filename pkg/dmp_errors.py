"""
Exception hierarchy cho DMP++ simulator
"""


class DmpError(Exception):
    """Base class for every library error"""


class DmpArgumentError(DmpError, ValueError):
    """Invalid argument (kernel count, width factor, gains, shapes)"""


class TrainingError(DmpError):
    """Least-squares training failed (too few samples, deficient basis)"""


class ConditioningError(DmpError):
    """Gain matrix of a recursive update could not be factorized"""


class DowndateError(DmpError):
    """Downdate gain lost negative definiteness"""


class OracleError(DmpError):
    """Batch oracle could not solve the exact constrained problem"""


class ExecutionError(DmpError):
    """Non-finite value produced during a rollout"""


class PenetrationError(ExecutionError):
    """State reached or crossed an obstacle surface"""


class ScalingSingularityError(DmpError):
    """Classical spatial scaling divides by a zero demo displacement"""


class ScenarioError(DmpError):
    """Scenario file could not be loaded or is inconsistent"""
