"""Grouped regression data and the relaxed normal equations.

The relaxed coefficient vector for an activation ``t`` in ``[0, 1]^J`` solves

    L_t u = T_t X^T y / n,    L_t = T_t Z_gamma T_t + I,

with ``Z_gamma = X^T X / n - I + (gamma / n) I`` and ``T_t`` the diagonal
matrix repeating ``t_j`` over the columns of group ``j``.  At a corner
``s`` of the cube the fitted values ``X T_s u`` coincide with the least
squares (or ridge, for ``gamma > 0``) fit on the selected groups.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
from numpy.typing import NDArray
from scipy.linalg.lapack import dpotrf as _potrf, dpotrs as _potrs
from scipy.sparse.linalg import LinearOperator, cg

from .errors import (
    DataError,
    DimensionError,
    DomainError,
    SingularityError,
    SizeError,
    SolverError,
)

DENSE_MAX_P = 512
CG_RTOL = 1e-8
CG_MAXITER_FACTOR = 10
ORACLE_MAX_SUBSETS = 10**6
# the low-rank solve is used for n < p while every diagonal entry of
# I - (1 - gamma/n) T^2 stays above this floor; results are residual-checked
LOWRANK_MIN_DIAG = 1e-6
LOWRANK_RTOL = 1e-9

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GroupedDesign:
    """Response, design matrix and contiguous group partition.

    Instances are read-only after construction; the Gram matrix ``X^T X / n``
    is materialized only when ``gram_mode == "dense"``.
    """

    X: NDArray
    y: NDArray
    group_sizes: tuple[int, ...]
    gram_mode: str = "auto"
    group_offsets: NDArray = field(init=False, repr=False)
    penalty_weights: NDArray = field(init=False, repr=False)
    xty: NDArray = field(init=False, repr=False)
    gram: NDArray | None = field(init=False, repr=False)

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float).ravel()
        if X.ndim != 2:
            raise DimensionError(f"design matrix must be 2-D, got shape {X.shape}")
        n, p = X.shape
        if y.shape[0] != n:
            raise DimensionError(f"response has {y.shape[0]} rows, design has {n}")
        sizes = tuple(int(s) for s in self.group_sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise DimensionError(f"group sizes must be positive, got {sizes}")
        if sum(sizes) != p:
            raise DimensionError(f"group sizes sum to {sum(sizes)}, design has {p} columns")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError("design or response contains NaN or Inf")

        mode = self.gram_mode
        if mode == "auto":
            mode = "dense" if p <= DENSE_MAX_P else "matrix_free"
        if mode not in ("dense", "matrix_free"):
            raise ValueError(f"unknown gram_mode {self.gram_mode!r}")

        X.setflags(write=False)
        y.setflags(write=False)
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.intp)
        weights = np.sqrt(np.asarray(sizes, dtype=float))
        xty = X.T @ y / n
        gram = X.T @ X / n if mode == "dense" else None
        for arr in (offsets, weights, xty) + ((gram,) if gram is not None else ()):
            arr.setflags(write=False)

        set_ = object.__setattr__
        set_(self, "X", X)
        set_(self, "y", y)
        set_(self, "group_sizes", sizes)
        set_(self, "gram_mode", mode)
        set_(self, "group_offsets", offsets)
        set_(self, "penalty_weights", weights)
        set_(self, "xty", xty)
        set_(self, "gram", gram)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_groups(self) -> int:
        return len(self.group_sizes)

    def group_slice(self, j: int) -> slice:
        start = int(self.group_offsets[j])
        return slice(start, start + self.group_sizes[j])

    def selected_columns(self, s) -> NDArray:
        """Column indices covered by the groups switched on in ``s``."""
        mask = expand_activation(np.asarray(s, dtype=float), self.group_sizes) > 0.5
        return np.flatnonzero(mask)

    def gram_apply(self, v: NDArray) -> NDArray:
        """Return ``X^T X v / n`` without forming the Gram matrix in matrix-free mode."""
        if self.gram is not None:
            return self.gram @ v
        return self.X.T @ (self.X @ v) / self.n

    def fingerprint(self) -> dict:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        h.update(np.asarray(self.group_sizes, dtype=np.int64).tobytes())
        return {
            "n": self.n,
            "p": self.p,
            "J": self.n_groups,
            "group_sizes": list(self.group_sizes),
            "sha256": h.hexdigest(),
        }


@dataclass
class RelaxedFit:
    """Relaxed solution at one activation vector."""

    t: NDArray
    beta_tilde: NDArray
    eta: NDArray
    residual: NDArray
    residual_mse: float
    ridge_gamma: float


def expand_activation(t, group_sizes: Sequence[int]) -> NDArray:
    """Repeat ``t_j`` over the ``p_j`` columns of each group (the diagonal of ``T_t``)."""
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.shape[0] != len(group_sizes):
        raise DimensionError(
            f"activation has length {t.size}, expected {len(group_sizes)} groups"
        )
    return np.repeat(t, group_sizes)


def restrict_activation(expanded: NDArray, group_sizes: Sequence[int]) -> NDArray:
    """Inverse of :func:`expand_activation` on block-constant vectors."""
    offsets = np.concatenate([[0], np.cumsum(group_sizes)[:-1]]).astype(np.intp)
    return np.asarray(expanded, dtype=float)[offsets]


def group_dot(u: NDArray, v: NDArray, offsets: NDArray) -> NDArray:
    """Per-group inner products ``u_j . v_j`` over contiguous blocks."""
    return np.add.reduceat(u * v, offsets)


def _check_activation(design: GroupedDesign, t) -> NDArray:
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.shape[0] != design.n_groups:
        raise DimensionError(f"activation has length {t.size}, expected {design.n_groups}")
    if not np.all(np.isfinite(t)):
        raise DataError("activation contains NaN or Inf")
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise DataError("activation must lie in [0, 1]")
    return t


def apply_lt(design: GroupedDesign, t_expanded: NDArray, gamma: float, v: NDArray,
             matrix_free: bool | None = None) -> NDArray:
    """Return ``L_t v`` for the ridge-augmented relaxed operator.

    With ``matrix_free`` (the default for designs without a stored Gram
    matrix) the product goes through ``X`` twice and no ``p x p`` array is
    touched.
    """
    if gamma < 0:
        raise DomainError("gamma must be non-negative")
    t_expanded = np.asarray(t_expanded, dtype=float)
    v = np.asarray(v, dtype=float)
    if t_expanded.shape != (design.p,) or v.shape != (design.p,):
        raise DimensionError(f"expected vectors of length {design.p}")
    tv = t_expanded * v
    shift = 1.0 - gamma / design.n
    if matrix_free or design.gram is None:
        gtv = design.X.T @ (design.X @ tv) / design.n
    else:
        gtv = design.gram @ tv
    return t_expanded * (gtv - shift * tv) + v


class RelaxedSystem:
    """Factorized (or matrix-free) ``L_t`` for repeated solves at a fixed ``t``.

    ``n_solves`` counts the right-hand sides solved so far.
    """

    def __init__(self, design: GroupedDesign, t_expanded: NDArray, gamma: float,
                 strategy: str = "auto"):
        if gamma < 0:
            raise DomainError("gamma must be non-negative")
        self.design = design
        self.t_expanded = t_expanded
        self.gamma = float(gamma)
        self.n_solves = 0
        self._diag = 1.0 - (1.0 - self.gamma / design.n) * t_expanded * t_expanded
        if strategy == "auto":
            # n x n capacitance costs ~n^2 p against ~p^3/3 for the dense factor
            cheaper = design.gram is None or 3 * design.n**2 < design.p**2
            if design.n < design.p and cheaper and self._diag.min() >= LOWRANK_MIN_DIAG:
                strategy = "lowrank"
            else:
                strategy = "cholesky" if design.gram is not None else "cg"
        if strategy not in ("cholesky", "cg", "lowrank"):
            raise ValueError(f"unknown solver strategy {strategy!r}")
        if strategy == "cholesky" and design.gram is None:
            raise ValueError("cholesky strategy needs a dense-mode design")
        self.strategy = strategy
        self._factor = None
        self._lu = None
        self._capacitance = None
        if strategy == "cholesky":
            self._factorize()
        elif strategy == "lowrank":
            self._factorize_lowrank()

    def _dense_matrix(self) -> NDArray:
        d = self.design
        te = self.t_expanded
        L = d.gram * np.outer(te, te)
        L.flat[:: d.p + 1] += 1.0 - (1.0 - self.gamma / d.n) * te * te
        return L

    def _factorize(self):
        L = self._dense_matrix()
        chol, info = _potrf(L, lower=True, overwrite_a=True, clean=False)
        if info == 0:
            self._factor = chol
            return
        # near the cube boundary with p > n, L_t can lose definiteness to rounding
        try:
            self._lu = scipy.linalg.lu_factor(self._dense_matrix(), check_finite=False)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SolverError(f"relaxed system is singular: {exc}") from exc
        if np.any(np.abs(np.diag(self._lu[0])) == 0.0):
            raise SolverError("relaxed system is singular")

    def _factorize_lowrank(self):
        # L_t = D + U^T U with U = X T / sqrt(n) of rank <= n; factor the n x n
        # capacitance I + U D^{-1} U^T instead of the p x p system
        d = self.design
        if not self._diag.min() > 0:
            raise ValueError("lowrank strategy needs a positive diagonal part")
        self._U = d.X * (self.t_expanded / np.sqrt(d.n))
        C = (self._U / self._diag) @ self._U.T
        C.flat[:: d.n + 1] += 1.0
        chol, info = _potrf(C, lower=True, overwrite_a=True, clean=False)
        if info != 0:
            raise SolverError("capacitance matrix is not positive definite")
        self._capacitance = chol

    def _solve_lowrank(self, rhs: NDArray) -> NDArray:
        z = rhs / self._diag
        w, _ = _potrs(self._capacitance, self._U @ z, lower=True)
        return z - (self._U.T @ w) / self._diag

    def matvec(self, v: NDArray) -> NDArray:
        return apply_lt(self.design, self.t_expanded, self.gamma, v)

    def solve(self, rhs: NDArray) -> NDArray:
        self.n_solves += 1
        if self._capacitance is not None:
            x = self._solve_lowrank(rhs)
            scale = np.linalg.norm(rhs)
            if scale == 0.0 or np.linalg.norm(self.matvec(x) - rhs) <= LOWRANK_RTOL * scale:
                return x
            # cancellation near the cube boundary; switch for the rest of this t
            logger.debug("low-rank solve lost accuracy; falling back")
            self._capacitance = None
            if self.design.gram is not None:
                self.strategy = "cholesky"
                self._factorize()
            else:
                self.strategy = "cg"
        if self._factor is not None:
            x, _ = _potrs(self._factor, rhs, lower=True)
            return x
        if self._lu is not None:
            return scipy.linalg.lu_solve(self._lu, rhs, check_finite=False)
        return self._solve_cg(rhs)

    def _solve_cg(self, rhs: NDArray) -> NDArray:
        d = self.design
        p = d.p
        if not np.any(rhs):
            return np.zeros(p)
        te = self.t_expanded
        col_sq = np.einsum("ij,ij->j", d.X, d.X) / d.n
        diag = te * te * (col_sq - 1.0 + self.gamma / d.n) + 1.0
        op = LinearOperator((p, p), matvec=self.matvec, dtype=float)
        precond = LinearOperator((p, p), matvec=lambda r: r / diag, dtype=float)
        x, info = cg(op, rhs, rtol=CG_RTOL, atol=0.0, maxiter=CG_MAXITER_FACTOR * p,
                     M=precond)
        # scipy reports success on breakdown too, so check the residual directly
        achieved = np.linalg.norm(self.matvec(x) - rhs) / np.linalg.norm(rhs)
        if info != 0 or not achieved <= 10.0 * CG_RTOL:
            raise SolverError(
                f"conjugate gradient did not reach rtol {CG_RTOL:g} in {CG_MAXITER_FACTOR * p} iterations",
                residual=float(achieved),
            )
        return x


def solve_beta_tilde(design: GroupedDesign, t, gamma: float = 0.0,
                     solver_strategy: str = "auto",
                     system: RelaxedSystem | None = None) -> RelaxedFit:
    """Solve the relaxed normal equations at activation ``t``.

    Parameters
    ----------
    design : GroupedDesign
    t : array_like, shape (J,)
        Group activations in ``[0, 1]``.
    gamma : float
        Ridge strength; ``0`` gives the unpenalized relaxation.
    solver_strategy : {"auto", "cholesky", "cg", "lowrank"}
        ``auto`` uses the low-rank (Woodbury) solve when ``n`` is well below
        ``p`` and the diagonal part is safely positive, else a dense Cholesky factorization
        when the Gram matrix is materialized, else preconditioned conjugate
        gradient.
    system : RelaxedSystem, optional
        Pre-built system to reuse (must match ``t`` and ``gamma``).
    """
    t = _check_activation(design, t)
    te = expand_activation(t, design.group_sizes)
    if system is None:
        system = RelaxedSystem(design, te, gamma, solver_strategy)
    beta = system.solve(te * design.xty)
    eta = te * beta
    residual = design.y - design.X @ eta
    return RelaxedFit(
        t=t,
        beta_tilde=beta,
        eta=eta,
        residual=residual,
        residual_mse=float(residual @ residual) / design.n,
        ridge_gamma=float(gamma),
    )


def refit_at_corner(design: GroupedDesign, s, gamma: float = 0.0) -> NDArray:
    """Least squares (``gamma == 0``) or ridge coefficients on the selected groups.

    Returns a length-``p`` vector that is zero outside the selected blocks.

    Raises
    ------
    SingularityError
        If ``gamma == 0`` and the selected columns are rank deficient.
    """
    if gamma < 0:
        raise DomainError("gamma must be non-negative")
    s = np.asarray(s)
    if s.shape != (design.n_groups,):
        raise DimensionError(f"selection has length {s.size}, expected {design.n_groups}")
    cols = design.selected_columns(s)
    beta = np.zeros(design.p)
    if cols.size == 0:
        return beta
    Xs = design.X[:, cols]
    if gamma == 0.0:
        rank = np.linalg.matrix_rank(Xs)
        if rank < cols.size:
            raise SingularityError(
                f"selected columns are rank deficient (rank {rank} < {cols.size}); "
                "use a ridge penalty gamma > 0"
            )
    if design.gram is not None:
        G = design.gram[np.ix_(cols, cols)].copy()
    else:
        G = Xs.T @ Xs / design.n
    G[np.diag_indices_from(G)] += gamma / design.n
    try:
        factor = scipy.linalg.cho_factor(G, lower=True)
        beta[cols] = scipy.linalg.cho_solve(factor, design.xty[cols])
    except np.linalg.LinAlgError as exc:
        raise SingularityError(
            "selected block is numerically singular; use a ridge penalty gamma > 0"
        ) from exc
    return beta


def corner_residual_mse(design: GroupedDesign, beta: NDArray) -> float:
    r = design.y - design.X @ beta
    return float(r @ r) / design.n


def exhaustive_group_oracle(design: GroupedDesign, k: int, gamma: float = 0.0) -> NDArray:
    """Brute-force best group subset with at most ``k`` groups.

    Minimizes the corner refit residual.  Ties (up to rounding) go to the
    smaller cardinality, then to the lexicographically smallest indicator
    vector.  Rank-deficient subsets are skipped when ``gamma == 0``.
    """
    J = design.n_groups
    if k < 0:
        raise SizeError("k must be non-negative")
    k = min(k, J)
    total = sum(math.comb(J, i) for i in range(k + 1))
    if total > ORACLE_MAX_SUBSETS:
        raise SizeError(f"{total} subsets exceed the enumeration limit {ORACLE_MAX_SUBSETS}")

    tie_tol = 1e-12 * max(float(design.y @ design.y) / design.n, 1.0)
    best = np.zeros(J, dtype=int)
    best_key = (float(design.y @ design.y) / design.n, 0, tuple(best))
    for size in range(1, k + 1):
        for combo in itertools.combinations(range(J), size):
            s = np.zeros(J, dtype=int)
            s[list(combo)] = 1
            try:
                beta = refit_at_corner(design, s, gamma)
            except SingularityError:
                continue
            key = (corner_residual_mse(design, beta), size, tuple(s))
            if key[0] < best_key[0] - tie_tol:
                best, best_key = s, key
            elif abs(key[0] - best_key[0]) <= tie_tol and key[1:] < best_key[1:]:
                best, best_key = s, key
    return best
