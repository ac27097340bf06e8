"""Simulation protocol: block-correlated designs, planted groups, metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.typing import NDArray

from .design import GroupedDesign
from .errors import CombssError, DataError, DomainError
from .optimizer import AdamConfig
from .path import make_lambda_grid, select_lambda, solve_path

logger = logging.getLogger(__name__)


# Default validation draws per training row; a large set makes the tuned
# lambda track the generalization risk rather than validation noise.
VALIDATION_MULTIPLIER = 10


@dataclass(frozen=True)
class SimulationSetting:
    n: int
    group_sizes: tuple[int, ...]
    rho: float
    psi: float
    k_true: int
    snr: float
    replicates: int = 50
    seed: int = 0
    planted_rule: str = "first_k"
    n_validation: int | None = None

    def __post_init__(self):
        if self.n_validation is not None and self.n_validation < 1:
            raise DomainError("n_validation must be positive")
        object.__setattr__(self, "group_sizes", tuple(int(s) for s in self.group_sizes))
        if self.snr <= 0:
            raise DomainError("snr must be positive")
        if not 0 <= self.k_true <= self.J:
            raise DomainError("k_true must lie between 0 and J")
        if self.planted_rule not in ("first_k", "random_k"):
            raise DomainError(f"unknown planted rule {self.planted_rule!r}")
        check_block_covariance(self.group_sizes, self.rho, self.psi)

    @property
    def p(self) -> int:
        return sum(self.group_sizes)

    @property
    def J(self) -> int:
        return len(self.group_sizes)

    @property
    def validation_size(self) -> int:
        if self.n_validation is not None:
            return self.n_validation
        return VALIDATION_MULTIPLIER * self.n

    def to_dict(self) -> dict:
        d = asdict(self)
        d["group_sizes"] = list(self.group_sizes)
        return d


def uniform_setting(n, p, group_size, rho, psi, k, snr, **kw) -> SimulationSetting:
    if p % group_size:
        raise DomainError("p must be a multiple of the group size")
    return SimulationSetting(n, (group_size,) * (p // group_size), rho, psi, k, snr, **kw)


# Settings 1-4 of the simulation study; SNR is supplied separately.
BENCHMARK_SETTINGS = {
    1: dict(n=100, p=40, group_size=4, rho=0.9, psi=0.2, k=4),
    2: dict(n=100, p=40, group_size=4, rho=0.9, psi=0.5, k=4),
    3: dict(n=400, p=600, group_size=4, rho=0.9, psi=0.2, k=15),
    4: dict(n=400, p=600, group_size=4, rho=0.9, psi=0.5, k=15),
}


def benchmark_setting(number: int, snr: float, **kw) -> SimulationSetting:
    try:
        base = BENCHMARK_SETTINGS[number]
    except KeyError:
        raise DomainError(f"unknown setting {number}; choose from 1-4") from None
    return uniform_setting(snr=snr, **{**base, **kw})


# Published competitor results, transcribed for report rendering only.
# Keys: (setting, snr) -> method -> (mcc, precision, recall, risk), each (mean, se).
REFERENCE_TABLE = {
    (1, 1): {
        "Group COMBSS": ((0.95, 0.02), (0.98, 0.01), (0.95, 0.02), (17.87, 1.06)),
        "L0 Group": ((0.91, 0.02), (0.97, 0.01), (0.92, 0.02), (20.41, 1.07)),
        "Group LASSO": ((0.46, 0.03), (0.55, 0.01), (0.99, 0.01), (16.89, 0.76)),
        "Group MCP": ((0.71, 0.03), (0.74, 0.02), (0.96, 0.01), (4.97, 0.20)),
        "Group SCAD": ((0.59, 0.03), (0.65, 0.02), (0.98, 0.01), (4.85, 0.20)),
    },
    (2, 1): {
        "Group COMBSS": ((0.74, 0.03), (0.94, 0.02), (0.74, 0.02), (28.62, 1.28)),
        "L0 Group": ((0.67, 0.03), (0.92, 0.02), (0.66, 0.02), (32.13, 1.18)),
        "Group LASSO": ((0.41, 0.03), (0.53, 0.01), (0.97, 0.01), (21.43, 0.94)),
        "Group MCP": ((0.47, 0.03), (0.67, 0.03), (0.74, 0.03), (7.31, 0.23)),
        "Group SCAD": ((0.49, 0.04), (0.62, 0.02), (0.91, 0.02), (6.67, 0.3)),
    },
    (1, 3): {
        "Group COMBSS": ((1.00, 0.00), (1.00, 0.00), (1.00, 0.00), (5.52, 0.27)),
        "L0 Group": ((1.00, 0.00), (1.00, 0.00), (1.00, 0.00), (5.49, 0.27)),
        "Group LASSO": ((0.41, 0.03), (0.52, 0.01), (0.52, 0.01), (6.75, 0.31)),
        "Group MCP": ((0.78, 0.02), (0.78, 0.02), (1.00, 0.00), (1.56, 0.07)),
        "Group SCAD": ((0.57, 0.03), (0.63, 0.02), (1.00, 0.00), (1.61, 0.08)),
    },
    (2, 3): {
        "Group COMBSS": ((0.97, 0.01), (0.98, 0.01), (0.98, 0.01), (9.26, 0.55)),
        "L0 Group": ((0.91, 0.02), (0.95, 0.02), (0.96, 0.01), (10.65, 0.57)),
        "Group LASSO": ((0.43, 0.03), (0.53, 0.01), (1.00, 0.00), (9.35, 0.44)),
        "Group MCP": ((0.65, 0.03), (0.70, 0.02), (0.95, 0.02), (3.09, 0.14)),
        "Group SCAD": ((0.55, 0.04), (0.62, 0.02), (0.98, 0.01), (3.09, 0.13)),
    },
    (3, 1): {
        "Group COMBSS": ((0.64, 0.01), (0.80, 0.02), (0.56, 0.01), (194.04, 4.89)),
        "L0 Group": ((0.56, 0.01), (0.83, 0.02), (0.42, 0.01), (238.72, 5.05)),
        "Group LASSO": ((0.39, 0.01), (0.28, 0.01), (0.87, 0.01), (132.93, 2.82)),
        "Group MCP": ((0.49, 0.01), (0.43, 0.01), (0.71, 0.02), (157.16, 3.37)),
        "Group SCAD": ((0.41, 0.01), (0.29, 0.01), (0.86, 0.01), (135.59, 2.88)),
    },
    (4, 1): {
        "Group COMBSS": ((0.30, 0.02), (0.51, 0.02), (0.23, 0.01), (313.71, 7.98)),
        "L0 Group": ((0.25, 0.02), (0.50, 0.03), (0.17, 0.01), (373.94, 7.04)),
        "Group LASSO": ((0.21, 0.01), (0.21, 0.01), (0.55, 0.02), (171.99, 3.95)),
        "Group MCP": ((0.20, 0.01), (0.28, 0.01), (0.30, 0.01), (259.55, 5.99)),
        "Group SCAD": ((0.21, 0.01), (0.21, 0.01), (0.53, 0.02), (173.23, 4.30)),
    },
    (3, 3): {
        "Group COMBSS": ((0.94, 0.01), (0.95, 0.01), (0.94, 0.01), (55.70, 1.70)),
        "L0 Group": ((0.88, 0.01), (0.96, 0.01), (0.84, 0.01), (69.27, 2.33)),
        "Group LASSO": ((0.47, 0.01), (0.30, 0.00), (1.00, 0.00), (58.61, 1.34)),
        "Group MCP": ((0.73, 0.01), (0.63, 0.01), (0.94, 0.01), (66.06, 2.05)),
        "Group SCAD": ((0.54, 0.01), (0.36, 0.01), (0.99, 0.00), (64.01, 1.54)),
    },
    (4, 3): {
        "Group COMBSS": ((0.57, 0.02), (0.74, 0.02), (0.49, 0.01), (139.57, 3.44)),
        "L0 Group": ((0.50, 0.02), (0.77, 0.02), (0.37, 0.01), (172.26, 3.44)),
        "Group LASSO": ((0.38, 0.01), (0.27, 0.01), (0.85, 0.01), (90.36, 1.95)),
        "Group MCP": ((0.36, 0.01), (0.38, 0.01), (0.49, 0.01), (153.58, 3.01)),
        "Group SCAD": ((0.41, 0.01), (0.30, 0.01), (0.83, 0.02), (97.67, 2.63)),
    },
}


def check_block_covariance(group_sizes, rho: float, psi: float):
    """Raise unless the block-equicorrelation matrix is positive definite.

    The eigenvalues are available in closed form: ``1 - rho`` (within-group
    contrasts) plus those of the ``J x J`` matrix acting on group means.
    """
    sizes = np.asarray(group_sizes, dtype=float)
    if not (-1 < rho < 1 and -1 < psi < 1):
        raise DomainError("correlations must lie in (-1, 1)")
    reduced = psi * np.sqrt(np.outer(sizes, sizes))
    reduced[np.diag_indices_from(reduced)] = 1 - rho + sizes * rho
    eig_min = np.linalg.eigvalsh(reduced).min()
    if np.any(sizes > 1):
        eig_min = min(eig_min, 1 - rho)
    if eig_min <= 0:
        raise DomainError(
            f"rho={rho}, psi={psi} give a covariance that is not positive definite"
        )


def block_covariance(group_sizes, rho: float, psi: float) -> NDArray:
    """Unit-diagonal covariance with ``rho`` within groups and ``psi`` across."""
    check_block_covariance(group_sizes, rho, psi)
    labels = np.repeat(np.arange(len(group_sizes)), group_sizes)
    cov = np.where(labels[:, None] == labels[None, :], rho, psi)
    np.fill_diagonal(cov, 1.0)
    return cov


def sample_design(rng: np.random.Generator, n: int, group_sizes, rho: float,
                  psi: float) -> NDArray:
    """Draw ``n`` rows from the block-equicorrelated Gaussian.

    For ``0 <= psi <= rho`` rows are built from a shared factor, a per-group
    factor and idiosyncratic noise, which is exact and needs no ``p x p``
    factorization.  Other valid parameters fall back to a Cholesky factor.
    """
    sizes = tuple(group_sizes)
    p, J = sum(sizes), len(sizes)
    if 0 <= psi <= rho:
        common = rng.standard_normal((n, 1))
        per_group = rng.standard_normal((n, J))
        noise = rng.standard_normal((n, p))
        return (math.sqrt(psi) * common
                + math.sqrt(rho - psi) * np.repeat(per_group, sizes, axis=1)
                + math.sqrt(1 - rho) * noise)
    chol = np.linalg.cholesky(block_covariance(sizes, rho, psi))
    return rng.standard_normal((n, p)) @ chol.T


def calibrate_sigma(beta_star: NDArray, covariance: NDArray, snr: float) -> float:
    """Noise variance giving ``beta^T Sigma beta / sigma^2 == snr``."""
    if not snr > 0:
        raise DomainError("snr must be positive")
    signal = float(beta_star @ covariance @ beta_star)
    if not signal > 0:
        raise DataError("beta_star carries no signal")
    return signal / snr


def planted_support(setting: SimulationSetting, rng: np.random.Generator | None = None) -> NDArray:
    support = np.zeros(setting.J, dtype=int)
    if setting.planted_rule == "first_k":
        support[: setting.k_true] = 1
    else:
        support[rng.choice(setting.J, setting.k_true, replace=False)] = 1
    return support


@dataclass
class SimulatedData:
    train: GroupedDesign
    validation: GroupedDesign
    beta_star: NDArray
    support: NDArray
    sigma2: float


def replicate_rng(seed: int, replicate_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, replicate_index]))


def generate_dataset(setting: SimulationSetting, replicate_index: int,
                     sigma2: float | None = None) -> SimulatedData:
    """Independent training and validation draws sharing ``beta*`` and ``sigma^2``.

    Passing ``sigma2`` overrides the SNR calibration (``0`` gives noiseless data).
    """
    rng = replicate_rng(setting.seed, replicate_index)
    support = planted_support(setting, rng)
    beta = np.repeat(support, setting.group_sizes).astype(float)
    if sigma2 is None:
        cov = block_covariance(setting.group_sizes, setting.rho, setting.psi)
        sigma2 = calibrate_sigma(beta, cov, setting.snr)
    sigma = math.sqrt(sigma2)

    def draw(n):
        X = sample_design(rng, n, setting.group_sizes, setting.rho, setting.psi)
        y = X @ beta + sigma * rng.standard_normal(n)
        return GroupedDesign(X, y, setting.group_sizes)

    train = draw(setting.n)
    validation = draw(setting.validation_size)
    return SimulatedData(train, validation, beta, support, float(sigma2))


@dataclass
class SelectionMetrics:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    mcc: float
    risk: float


def confusion_metrics(tp: int, fp: int, tn: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall and MCC; any 0/0 is reported as 0."""
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(denom) if denom else 0.0
    return precision, recall, mcc


def compute_metrics(selection, true_support, refit_coefficients: NDArray,
                    design: GroupedDesign, beta_star: NDArray) -> SelectionMetrics:
    sel = np.asarray(selection).astype(bool)
    truth = np.asarray(true_support).astype(bool)
    tp = int(np.sum(sel & truth))
    fp = int(np.sum(sel & ~truth))
    tn = int(np.sum(~sel & ~truth))
    fn = int(np.sum(~sel & truth))
    precision, recall, mcc = confusion_metrics(tp, fp, tn, fn)
    diff = design.X @ (refit_coefficients - beta_star)
    risk = float(diff @ diff) / design.n
    return SelectionMetrics(tp, fp, tn, fn, precision, recall, mcc, risk)


METRIC_NAMES = ("mcc", "precision", "recall", "risk")


@dataclass
class MetricsReport:
    per_replicate: list[SelectionMetrics]
    failures: list[dict] = field(default_factory=list)
    setting: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def values(self, name: str) -> NDArray:
        return np.array([getattr(m, name) for m in self.per_replicate], dtype=float)

    def mean(self, name: str) -> float:
        v = self.values(name)
        return float(v.mean()) if v.size else float("nan")

    def se(self, name: str) -> float:
        v = self.values(name)
        if v.size < 2:
            return float("nan")
        return float(v.std(ddof=1) / math.sqrt(v.size))

    def summary(self) -> dict:
        out = {}
        for name in METRIC_NAMES:
            out[name] = {"mean": self.mean(name), "se": self.se(name)}
        out["replicates"] = len(self.per_replicate)
        out["failures"] = len(self.failures)
        return out


@dataclass(frozen=True)
class PathConfig:
    grid_count: int = 100
    grid_min_ratio: float = 1e-4
    spacing: str = "geometric"
    gamma: float = 0.0
    tau: float = 0.5
    warm_start: bool = False
    adam: AdamConfig = AdamConfig()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam"] = self.adam.to_dict()
        return d


def run_replicate(setting: SimulationSetting, index: int, config: PathConfig,
                  sigma2: float | None = None):
    """One replicate of generate, path, validation tuning and scoring."""
    data = generate_dataset(setting, index, sigma2)
    grid = make_lambda_grid(data.train, config.grid_count, config.spacing,
                            config.grid_min_ratio, config.gamma)
    path = solve_path(data.train, grid, config.gamma, config.tau, config.adam,
                      config.warm_start)
    lam_star, selection = select_lambda(path, data.validation)
    point = next(pt for pt in path.points if pt.lam == lam_star)
    metrics = compute_metrics(selection, data.support, point.refit_coefficients,
                              data.train, data.beta_star)
    return metrics, lam_star


def run_setting(setting: SimulationSetting, config: PathConfig = PathConfig(),
                threads: int = 1, sigma2: float | None = None) -> MetricsReport:
    """Replicate the full pipeline and collect per-replicate metrics.

    Replicate ``i`` draws from its own ``(seed, i)`` stream, so the report does
    not depend on how replicates are scheduled across ``threads`` workers.
    Failed replicates are recorded and excluded from the aggregates.
    """
    def one(i):
        try:
            return i, run_replicate(setting, i, config, sigma2), None
        except CombssError as exc:
            logger.warning("replicate %d failed: %s", i, exc)
            return i, None, str(exc)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as pool:
            outcomes = list(pool.map(one, range(setting.replicates)))
    else:
        outcomes = [one(i) for i in range(setting.replicates)]

    report = MetricsReport([], setting=setting.to_dict(), config=config.to_dict())
    for i, out, err in sorted(outcomes, key=lambda o: o[0]):
        if err is not None:
            report.failures.append({"replicate": i, "error": err})
        else:
            report.per_replicate.append(out[0])
    return report
