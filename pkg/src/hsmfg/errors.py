"""Exception types shared across the solver, sequencer and simulator."""


class HsmfgError(Exception):
    """Base class for all package errors."""


class DimensionError(HsmfgError, ValueError):
    """A matrix or vector does not have the dimensions the model requires."""


class WeightError(HsmfgError, ValueError):
    """A cost weight fails its symmetry / definiteness requirement."""


class FiniteEscapeError(HsmfgError, RuntimeError):
    """A backward Riccati sweep blew up before reaching the window start."""

    def __init__(self, mode: str, t: float, norm: float):
        super().__init__(
            f"Riccati solution escaped in mode {mode!r} near t={t:.6g} "
            f"(||Pi||_F={norm:.3e})"
        )
        self.mode = mode
        self.t = t
        self.norm = norm


class DefinitenessError(HsmfgError, RuntimeError):
    """A monitored Riccati solution lost positive semidefiniteness."""


class AmbiguousEventError(HsmfgError, RuntimeError):
    """An event-time search found more than one sign-definite crossing."""

    def __init__(self, candidates, context: str = ""):
        msg = "multiple candidate event times: " + ", ".join(
            f"{t:.6g}" for t in candidates
        )
        if context:
            msg = f"{context}: {msg}"
        super().__init__(msg)
        self.candidates = list(candidates)


class ConsistencyError(HsmfgError, RuntimeError):
    """The mean-field fixed point iteration failed to converge."""

    def __init__(self, residuals, tol: float):
        super().__init__(
            f"consistency iteration did not reach tol={tol:g} after "
            f"{len(residuals)} iterations (last residual {residuals[-1]:.3e})"
        )
        self.residuals = list(residuals)


class InstabilityError(HsmfgError, RuntimeError):
    """A simulated state became non-finite."""

    def __init__(self, agent: str, step: int, t: float):
        super().__init__(
            f"non-finite state for agent {agent} at step {step} (t={t:.6g})"
        )
        self.agent = agent
        self.step = step
        self.t = t


class ScenarioError(HsmfgError, ValueError):
    """A scenario file is malformed or violates the schema."""
