import numpy as np
import pytest

from groupcombss.design import GroupedDesign


def random_design(seed, n=20, sizes=(2, 3, 3), gram_mode="auto", scale_y=1.0):
    rng = np.random.default_rng(seed)
    p = sum(sizes)
    X = rng.standard_normal((n, p))
    y = scale_y * rng.standard_normal(n)
    return GroupedDesign(X, y, sizes, gram_mode=gram_mode)


def dense_lt(design, t, gamma):
    """Explicit ``X_t^T X_t / n + (I - T^2) + (gamma / n) T^2``."""
    T = np.diag(np.repeat(t, design.group_sizes))
    Xt = design.X @ T
    n, p = design.X.shape
    return Xt.T @ Xt / n + (np.eye(p) - T @ T) + gamma / n * T @ T


def dense_beta_tilde(design, t, gamma):
    T = np.diag(np.repeat(t, design.group_sizes))
    rhs = T @ design.X.T @ design.y / design.n
    return np.linalg.inv(dense_lt(design, t, gamma)) @ rhs


def dense_objective(design, t, lam, gamma):
    T = np.diag(np.repeat(t, design.group_sizes))
    beta = dense_beta_tilde(design, t, gamma)
    r = design.y - design.X @ T @ beta
    return r @ r / design.n + lam * np.sum(np.sqrt(design.group_sizes) * t)


@pytest.fixture
def small_design():
    return random_design(0)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Record one summary line per acceptance criterion, printed at session end."""
    def record(label: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} {label}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
