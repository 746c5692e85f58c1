"""Exception hierarchy."""


class PgdkError(Exception):
    """Base class for every error raised by this package."""


class InvalidInput(PgdkError, ValueError):
    """Shape mismatch, non-finite data or otherwise malformed argument."""


class ConfigError(PgdkError):
    """Bad configuration file, override or hyperparameter combination."""


class ParseError(PgdkError):
    """Malformed data file (transition dump, checkpoint, train log)."""


class BatchTooSmall(PgdkError):
    """Fewer samples than the least-squares fit needs (N < r + m)."""


class RankDeficient(PgdkError):
    """A stacked data matrix lost full row rank.

    ``which`` names the offending matrix (``"G"`` or ``"[G;U]"``).
    """

    def __init__(self, which, rank, required):
        self.which = which
        self.rank = rank
        self.required = required
        super().__init__(f"{which} has row rank {rank}, need {required}")


class DivergedRollout(PgdkError):
    def __init__(self, step):
        self.step = step
        super().__init__(f"rollout produced a non-finite state at step {step}")


class NumericalDivergence(PgdkError):
    """A parameter vector or gradient became non-finite."""

    def __init__(self, what):
        self.what = what
        super().__init__(f"non-finite values in {what}")


class InsufficientData(PgdkError):
    """Replay buffer holds fewer tuples than requested."""


class InsufficientHistory(PgdkError):
    """Training log too short for a convergence report."""


class EnvDiverged(PgdkError):
    pass


class OracleDiverged(PgdkError):
    pass


class OracleError(PgdkError):
    """Finite-difference oracle hit a non-finite loss value."""
