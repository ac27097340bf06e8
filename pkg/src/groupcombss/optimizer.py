"""Adam on the sigmoid-reparameterized objective, then thresholding."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .design import GroupedDesign, refit_at_corner
from .errors import DomainError, OptimizerError, SingularityError
from .objective import GradientWorkspace, gradient_g, sigmoid_map

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_iterations: int = 1000
    convergence_tol: float = 1e-4
    patience: int = 10

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise DomainError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise DomainError("beta1 and beta2 must lie in [0, 1)")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be at least 1")
        if self.patience < 1:
            raise DomainError("patience must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamTrace:
    values: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def adam_minimize(grad_fn: Callable[[NDArray], tuple[float, NDArray]], w0,
                  config: AdamConfig = AdamConfig()) -> tuple[NDArray, AdamTrace]:
    """Bias-corrected Adam on ``w``, stopping on stalled sigmoid activations.

    ``grad_fn(w)`` returns ``(value, gradient)``; the value only feeds the
    trace.  Convergence is declared once ``max |sigmoid(w_i) - sigmoid(w_{i-1})|``
    stays below ``convergence_tol`` for ``patience`` consecutive steps.
    """
    w = np.array(w0, dtype=float)
    if not np.all(np.isfinite(w)):
        raise DomainError("initial point must be finite")
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    trace = AdamTrace()
    t_prev = sigmoid_map(w)
    quiet = 0
    b1, b2 = config.beta1, config.beta2
    for i in range(1, config.max_iterations + 1):
        value, grad = grad_fn(w)
        grad = np.asarray(grad, dtype=float)
        if not np.all(np.isfinite(grad)):
            raise OptimizerError(f"non-finite gradient at iteration {i}", iteration=i)
        trace.values.append(float(value))
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        m_hat = m / (1 - b1**i)
        v_hat = v / (1 - b2**i)
        w = w - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
        trace.iterations = i

        t_now = sigmoid_map(w)
        step = np.max(np.abs(t_now - t_prev)) if t_now.size else 0.0
        t_prev = t_now
        quiet = quiet + 1 if step < config.convergence_tol else 0
        if quiet >= config.patience:
            trace.converged = True
            break
    return w, trace


@dataclass
class CombssResult:
    selection: NDArray
    t_final: NDArray
    w_final: NDArray
    refit_coefficients: NDArray | None
    objective_trace: list[float]
    iterations_used: int
    converged: bool
    lam: float
    gamma: float
    tau: float
    refit_error: str | None = None

    @property
    def n_selected(self) -> int:
        return int(self.selection.sum())


def threshold_selection(t: NDArray, tau: float) -> NDArray:
    return (np.asarray(t) > tau).astype(int)


def run_group_combss(design: GroupedDesign, lam: float, gamma: float = 0.0,
                     tau: float = 0.5, w0=None,
                     adam_config: AdamConfig = AdamConfig(),
                     solver_strategy: str = "auto") -> CombssResult:
    """Optimize the relaxed objective for one penalty level and threshold.

    The selection keeps group ``j`` when ``sigmoid(w_j) > tau``.  Coefficients
    are refit on the selected groups with the same ridge strength; a rank
    deficient refit leaves ``refit_coefficients`` as ``None`` and records the
    reason in ``refit_error``.
    """
    if not 0.0 < tau < 1.0:
        raise DomainError("tau must lie in (0, 1)")
    if lam < 0:
        raise DomainError("lambda must be non-negative")
    J = design.n_groups
    w0 = np.zeros(J) if w0 is None else np.asarray(w0, dtype=float)
    ws = GradientWorkspace.for_design(design)

    def value_and_grad(w):
        grad = gradient_g(design, w, lam, gamma, ws, solver_strategy)
        return ws.value, grad

    w, trace = adam_minimize(value_and_grad, w0, adam_config)
    t = sigmoid_map(w)
    s = threshold_selection(t, tau)
    refit, refit_error = None, None
    try:
        refit = refit_at_corner(design, s, gamma)
    except SingularityError as exc:
        refit_error = str(exc)
        logger.debug("refit failed at lambda=%g: %s", lam, exc)
    return CombssResult(
        selection=s,
        t_final=t,
        w_final=w,
        refit_coefficients=refit,
        objective_trace=trace.values,
        iterations_used=trace.iterations,
        converged=trace.converged,
        lam=float(lam),
        gamma=float(gamma),
        tau=float(tau),
        refit_error=refit_error,
    )
