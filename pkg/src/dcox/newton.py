"""Newton-Raphson driver with the XCONV relative convergence rule."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import MaxIterationsExceeded, NonFiniteLikelihood
from .linalg import solve_newton_step
from .model import ModelSpec
from .site import ScoreContribution

log = logging.getLogger(__name__)

#: A score provider maps beta to the global (loglik, gradient, Hessian).
ScoreProvider = Callable[[np.ndarray], ScoreContribution]


@dataclass(frozen=True, eq=False)
class IterationRecord:
    iteration: int
    beta: np.ndarray
    loglik: float
    max_delta: float | None = None


@dataclass(eq=False)
class FitResult:
    beta_hat: np.ndarray
    covariance: np.ndarray | None
    history: list
    converged: bool
    iterations_used: int
    loglik_null: float
    loglik_final: float
    provider_calls: int = 0
    info_final: np.ndarray | None = None
    reason: str = ""
    metadata: dict = field(default_factory=dict)

    @property
    def stderr(self) -> np.ndarray | None:
        if self.covariance is None:
            return None
        return np.sqrt(np.diag(self.covariance))


def update_beta(beta_n, step) -> np.ndarray:
    beta_n = np.asarray(beta_n, dtype=float)
    step = np.asarray(step, dtype=float)
    if beta_n.shape != step.shape:
        raise ValueError(f"beta has shape {beta_n.shape} but step has {step.shape}")
    return beta_n + step


def relative_change(beta_n, beta_next) -> np.ndarray:
    """Per-parameter change: absolute below |beta| = 0.01, relative above."""
    beta_n = np.asarray(beta_n, dtype=float)
    diff = np.asarray(beta_next, dtype=float) - beta_n
    small = np.abs(beta_n) < 0.01
    safe = np.where(small, 1.0, beta_n)
    return np.where(small, diff, diff / safe)


def check_convergence(beta_n, beta_next, xconv: float) -> tuple[bool, float]:
    max_delta = float(np.max(np.abs(relative_change(beta_n, beta_next)))) if len(beta_n) else 0.0
    return max_delta < xconv, max_delta


def _evaluate(provider: ScoreProvider, beta: np.ndarray, final: bool = False) -> ScoreContribution:
    call = getattr(provider, "evaluate_final", None) if final else None
    score = (call or provider)(beta.copy())
    if not score.is_finite():
        raise NonFiniteLikelihood(f"non-finite loglik/gradient/Hessian at beta={beta.tolist()}")
    return score


def run_fit(provider: ScoreProvider, spec: ModelSpec) -> FitResult:
    """Plain Newton-Raphson from ``spec.initial_estimates``.

    Each iteration costs one provider call. After convergence one more call
    at the final estimate yields the information matrix whose inverse is
    the covariance; providers that define ``evaluate_final`` get that method
    called for this round instead. The null loglik l(0) is read off
    iteration 0 when the start is the zero vector and costs one extra call
    otherwise.
    """
    beta = np.asarray(spec.initial_estimates, dtype=float)
    calls = 0
    history: list[IterationRecord] = []
    zero_start = not np.any(beta)

    score = _evaluate(provider, beta)
    calls += 1
    history.append(IterationRecord(0, beta.copy(), score.loglik))
    loglik_null = score.loglik if zero_start else None

    converged = False
    for n in range(spec.max_iter):
        step = solve_newton_step(-score.hessian, score.gradient).step
        beta_next = update_beta(beta, step)
        converged, max_delta = check_convergence(beta, beta_next, spec.xconv)
        log.debug("iteration %d: loglik=%.10g max_delta=%.3g", n + 1, score.loglik, max_delta)
        beta = beta_next
        score = _evaluate(provider, beta, final=converged)
        calls += 1
        history.append(IterationRecord(n + 1, beta.copy(), score.loglik, max_delta))
        if converged:
            break

    if loglik_null is None:
        loglik_null = _evaluate(provider, np.zeros_like(beta)).loglik
        calls += 1

    if not converged:
        result = FitResult(
            beta_hat=beta, covariance=None, history=history, converged=False,
            iterations_used=len(history) - 1, loglik_null=loglik_null,
            loglik_final=score.loglik, provider_calls=calls,
            reason=f"XCONV not met after {spec.max_iter} iterations",
        )
        raise MaxIterationsExceeded(result.reason, result)

    info = -score.hessian
    covariance = solve_newton_step(info, score.gradient, want_inverse=True).inverse
    return FitResult(
        beta_hat=beta, covariance=covariance, history=history, converged=True,
        iterations_used=len(history) - 1, loglik_null=loglik_null,
        loglik_final=score.loglik, provider_calls=calls, info_final=info,
        reason="Convergence criterion (XCONV) satisfied",
    )
