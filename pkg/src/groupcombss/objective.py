"""Penalized relaxed objective and its exact gradient.

    f(t) = (1/n) ||y - X T_t beta_tilde(t)||^2 + lam * sum_j sqrt(p_j) t_j
    g(w) = f(sigmoid(w))

The gradient needs two solves with ``L_t``: one for ``beta_tilde`` and one
for ``c = L_t^{-1} (t * a)``.  Group-level reductions are per-block dot
products, so the ``p x J`` block matrices of the derivation never exist.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from .design import (
    GroupedDesign,
    RelaxedSystem,
    _check_activation,
    expand_activation,
    group_dot,
    solve_beta_tilde,
)
from .errors import DimensionError, DomainError

T_CLAMP = 1e-12


@dataclass
class GradientWorkspace:
    """Scratch vectors of one gradient evaluation.

    Every field is overwritten on each call; keep one workspace per
    concurrent evaluation.
    """

    p: int
    J: int
    value: float = np.nan
    residual_mse: float = np.nan
    n_solves: int = 0
    beta_tilde: NDArray = field(init=False)
    eta: NDArray = field(init=False)
    a: NDArray = field(init=False)
    b: NDArray = field(init=False)
    c: NDArray = field(init=False)
    d: NDArray = field(init=False)
    grad_t: NDArray = field(init=False)
    grad_w: NDArray = field(init=False)

    def __post_init__(self):
        for name in ("beta_tilde", "eta", "a", "b", "c", "d"):
            setattr(self, name, np.zeros(self.p))
        self.grad_t = np.zeros(self.J)
        self.grad_w = np.zeros(self.J)

    @classmethod
    def for_design(cls, design: GroupedDesign) -> "GradientWorkspace":
        return cls(design.p, design.n_groups)


def _check_params(lam: float, gamma: float):
    if lam < 0:
        raise DomainError("lambda must be non-negative")
    if gamma < 0:
        raise DomainError("gamma must be non-negative")


def penalty(design: GroupedDesign, t: NDArray, lam: float) -> float:
    return float(lam * (design.penalty_weights @ t))


def objective_f(design: GroupedDesign, t, lam: float, gamma: float = 0.0,
                solver_strategy: str = "auto") -> float:
    _check_params(lam, gamma)
    fit = solve_beta_tilde(design, t, gamma, solver_strategy)
    return fit.residual_mse + penalty(design, fit.t, lam)


def gradient_f(design: GroupedDesign, t, lam: float, gamma: float = 0.0,
               workspace: GradientWorkspace | None = None,
               solver_strategy: str = "auto") -> NDArray:
    """Gradient of ``f`` with respect to the group activations.

    Component ``j`` is ``2 (beta_j . (a_j - d_j) - b_j . c_j) + lam sqrt(p_j)``
    where

    * ``eta = t * beta_tilde``
    * ``a = X^T X eta / n - X^T y / n``
    * ``b = Z_gamma eta - X^T y / n``
    * ``c = L_t^{-1} (t * a)``
    * ``d = Z_gamma (t * c)``

    and the ``_j`` subscript slices group ``j``'s block.  The objective value
    is left in ``workspace.value``.
    """
    _check_params(lam, gamma)
    t = _check_activation(design, t)
    ws = workspace if workspace is not None else GradientWorkspace.for_design(design)
    te = expand_activation(t, design.group_sizes)
    system = RelaxedSystem(design, te, gamma, solver_strategy)
    fit = solve_beta_tilde(design, t, gamma, system=system)

    n = design.n
    shift = 1.0 - gamma / n
    ws.beta_tilde[:] = fit.beta_tilde
    ws.eta[:] = fit.eta
    ws.a[:] = -(design.X.T @ fit.residual) / n
    ws.b[:] = ws.a - shift * ws.eta
    ws.c[:] = system.solve(te * ws.a)
    tc = te * ws.c
    ws.d[:] = design.gram_apply(tc) - shift * tc

    offsets = design.group_offsets
    ws.grad_t[:] = 2.0 * (group_dot(ws.beta_tilde, ws.a - ws.d, offsets)
                          - group_dot(ws.b, ws.c, offsets))
    ws.grad_t += lam * design.penalty_weights
    ws.residual_mse = fit.residual_mse
    ws.value = fit.residual_mse + penalty(design, t, lam)
    ws.n_solves = system.n_solves
    return ws.grad_t.copy()


def sigmoid_map(w) -> NDArray:
    """Map unconstrained weights to activations in ``(0, 1)``."""
    return expit(np.asarray(w, dtype=float))


def logit_map(t) -> NDArray:
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0.0) or np.any(t >= 1.0):
        raise DomainError("logit is defined only on the open interval (0, 1)")
    return np.log(t) - np.log1p(-t)


def activation_from_weights(w) -> NDArray:
    """Sigmoid activations clamped to ``[1e-12, 1 - 1e-12]`` for the solver."""
    return np.clip(sigmoid_map(w), T_CLAMP, 1.0 - T_CLAMP)


def sigmoid_slope(w) -> NDArray:
    """``t (1 - t)`` evaluated without cancellation for large ``|w|``."""
    w = np.asarray(w, dtype=float)
    return expit(w) * expit(-w)


def _check_weights(design: GroupedDesign, w) -> NDArray:
    w = np.asarray(w, dtype=float)
    if w.shape != (design.n_groups,):
        raise DimensionError(f"weights have length {w.size}, expected {design.n_groups}")
    return w


def objective_g(design: GroupedDesign, w, lam: float, gamma: float = 0.0,
                solver_strategy: str = "auto") -> float:
    w = _check_weights(design, w)
    return objective_f(design, activation_from_weights(w), lam, gamma, solver_strategy)


def gradient_g(design: GroupedDesign, w, lam: float, gamma: float = 0.0,
               workspace: GradientWorkspace | None = None,
               solver_strategy: str = "auto") -> NDArray:
    """Chain rule through the sigmoid: ``grad_t f(t(w)) * t(w) (1 - t(w))``."""
    w = _check_weights(design, w)
    ws = workspace if workspace is not None else GradientWorkspace.for_design(design)
    gradient_f(design, activation_from_weights(w), lam, gamma, ws, solver_strategy)
    ws.grad_w[:] = ws.grad_t * sigmoid_slope(w)
    return ws.grad_w.copy()
