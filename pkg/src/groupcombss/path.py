"""Penalty grids, solution paths and validation tuning."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .design import GroupedDesign, corner_residual_mse, refit_at_corner
from .errors import CombssError, DataError, DimensionError, DomainError, SingularityError
from .optimizer import AdamConfig, CombssResult, run_group_combss

logger = logging.getLogger(__name__)

DEFAULT_MIN_RATIO = 1e-4


@dataclass(frozen=True)
class LambdaGrid:
    values: tuple[float, ...]
    spacing: str
    lambda_max_estimate: float

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.size == 0 or np.any(v <= 0) or np.any(np.diff(v) >= 0):
            raise DomainError("lambda grid must be strictly descending and positive")

    def __len__(self):
        return len(self.values)


def lambda_max_estimate(design: GroupedDesign, gamma: float = 0.0) -> float:
    """Heuristic top of the grid: the largest single-group fit gain per unit weight.

    ``max_j (||y||^2/n - RSS_j/n) / sqrt(p_j)`` where ``RSS_j`` is the residual
    of the (ridge) refit on group ``j`` alone.  Above this value every
    one-group model scores worse than the empty model, which in practice
    also drives the relaxed optimum to the empty selection.  Groups whose
    columns are rank deficient are skipped.
    """
    base = float(design.y @ design.y) / design.n
    best = 0.0
    for j in range(design.n_groups):
        s = np.zeros(design.n_groups, dtype=int)
        s[j] = 1
        try:
            beta = refit_at_corner(design, s, gamma)
        except SingularityError:
            continue
        gain = base - corner_residual_mse(design, beta)
        best = max(best, gain / design.penalty_weights[j])
    return best


def make_lambda_grid(design: GroupedDesign, count: int = 100, spacing: str = "geometric",
                     min_ratio: float = DEFAULT_MIN_RATIO, gamma: float = 0.0) -> LambdaGrid:
    if count < 1:
        raise DomainError("grid count must be at least 1")
    if not 0 < min_ratio < 1:
        raise DomainError("min_ratio must lie in (0, 1)")
    top = lambda_max_estimate(design, gamma)
    if not top > 0:
        raise DataError("degenerate grid: no group reduces the residual")
    bottom = top * min_ratio
    if count == 1:
        values = np.array([top])
    elif spacing == "geometric":
        values = np.geomspace(top, bottom, count)
    elif spacing == "linear":
        values = np.linspace(top, bottom, count)
    else:
        raise DomainError(f"unknown grid spacing {spacing!r}")
    return LambdaGrid(tuple(float(v) for v in values), spacing, top)


@dataclass
class PathPoint:
    lam: float
    selection: NDArray
    t_final: NDArray
    w_final: NDArray
    refit_coefficients: NDArray | None
    train_mse: float | None
    iterations_used: int
    converged: bool
    validation_risk: float | None = None
    error: str | None = None

    @property
    def n_selected(self) -> int:
        return int(np.sum(self.selection))

    @classmethod
    def from_result(cls, design: GroupedDesign, res: CombssResult) -> "PathPoint":
        mse = None
        if res.refit_coefficients is not None:
            r = design.y - design.X @ res.refit_coefficients
            mse = float(r @ r) / design.n
        return cls(
            lam=res.lam,
            selection=res.selection,
            t_final=res.t_final,
            w_final=res.w_final,
            refit_coefficients=res.refit_coefficients,
            train_mse=mse,
            iterations_used=res.iterations_used,
            converged=res.converged,
            error=res.refit_error,
        )


@dataclass
class SolutionPath:
    points: list[PathPoint]
    metadata: dict = field(default_factory=dict)

    @property
    def lambdas(self) -> NDArray:
        return np.array([pt.lam for pt in self.points])


def solve_path(design: GroupedDesign, grid: LambdaGrid, gamma: float = 0.0, tau: float = 0.5,
               adam_config: AdamConfig = AdamConfig(), warm_start: bool = False,
               w0=None, solver_strategy: str = "auto", threads: int = 1) -> SolutionPath:
    """Run Group COMBSS at every grid value, largest penalty first.

    With ``warm_start`` each point starts from the previous point's final
    weights, which makes the sweep sequential.  Cold starts all begin at
    ``w0`` (zeros by default), are independent of one another and may be
    spread over ``threads`` workers without changing the result.
    """
    J = design.n_groups
    start = np.zeros(J) if w0 is None else np.asarray(w0, dtype=float)

    def one(lam, w_init):
        try:
            res = run_group_combss(design, lam, gamma, tau, w_init, adam_config,
                                   solver_strategy)
        except CombssError as exc:
            logger.warning("path point lambda=%g failed: %s", lam, exc)
            return None, PathPoint(lam=lam, selection=np.zeros(J, dtype=int),
                                   t_final=np.full(J, np.nan), w_final=np.full(J, np.nan),
                                   refit_coefficients=None, train_mse=None,
                                   iterations_used=0, converged=False, error=str(exc))
        return res, PathPoint.from_result(design, res)

    if warm_start:
        points = []
        w_init = start
        for lam in grid.values:
            res, pt = one(lam, w_init)
            points.append(pt)
            w_init = res.w_final if res is not None else start
    elif threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as pool:
            points = [pt for _, pt in pool.map(lambda lam: one(lam, start), grid.values)]
    else:
        points = [one(lam, start)[1] for lam in grid.values]

    metadata = {
        "config": {
            "gamma": float(gamma),
            "tau": float(tau),
            "adam": adam_config.to_dict(),
            "warm_start": bool(warm_start),
            "w0": [float(x) for x in start],
            "solver_strategy": solver_strategy,
            "grid": {
                "count": len(grid),
                "spacing": grid.spacing,
                "lambda_max_estimate": grid.lambda_max_estimate,
            },
        },
        "design": design.fingerprint(),
        "parallel_safe": not warm_start,
    }
    return SolutionPath(points, metadata)


def validation_mse(validation: GroupedDesign, beta: NDArray) -> float:
    r = validation.y - validation.X @ beta
    return float(r @ r) / validation.n


def select_lambda(path: SolutionPath, validation: GroupedDesign) -> tuple[float, NDArray]:
    """Pick the point with the smallest validation MSE of its refit coefficients.

    Ties go to the larger penalty.  Points without refit coefficients are
    skipped.  Each point's ``validation_risk`` is filled in as a side effect.
    """
    if not path.points:
        raise DataError("cannot select from an empty path")
    p = path.points[0].selection.shape[0]
    if path.metadata.get("design"):
        sizes = tuple(path.metadata["design"]["group_sizes"])
        if sizes != tuple(validation.group_sizes):
            raise DimensionError("validation design has a different group structure")
    elif validation.n_groups != p:
        raise DimensionError("validation design has a different number of groups")

    best = None
    for pt in path.points:
        if pt.refit_coefficients is None:
            pt.validation_risk = None
            continue
        pt.validation_risk = validation_mse(validation, pt.refit_coefficients)
        if best is None or pt.validation_risk < best.validation_risk:
            best = pt
        elif pt.validation_risk == best.validation_risk and pt.lam > best.lam:
            best = pt
    if best is None:
        raise DataError("no path point has refit coefficients")
    return best.lam, best.selection
