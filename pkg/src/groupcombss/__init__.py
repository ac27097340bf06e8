"""Group-sparse best subset selection through a continuous Boolean relaxation."""

__version__ = "0.1.0"

from .design import (  # noqa: E402
    GroupedDesign,
    RelaxedFit,
    apply_lt,
    exhaustive_group_oracle,
    expand_activation,
    refit_at_corner,
    solve_beta_tilde,
)
from .objective import (  # noqa: E402
    GradientWorkspace,
    gradient_f,
    gradient_g,
    logit_map,
    objective_f,
    objective_g,
    sigmoid_map,
)
from .optimizer import AdamConfig, CombssResult, adam_minimize, run_group_combss  # noqa: E402
from .path import (  # noqa: E402
    LambdaGrid,
    SolutionPath,
    lambda_max_estimate,
    make_lambda_grid,
    select_lambda,
    solve_path,
)

__all__ = [
    "AdamConfig",
    "CombssResult",
    "GradientWorkspace",
    "GroupedDesign",
    "LambdaGrid",
    "RelaxedFit",
    "SolutionPath",
    "adam_minimize",
    "apply_lt",
    "exhaustive_group_oracle",
    "expand_activation",
    "gradient_f",
    "gradient_g",
    "lambda_max_estimate",
    "logit_map",
    "make_lambda_grid",
    "objective_f",
    "objective_g",
    "refit_at_corner",
    "run_group_combss",
    "select_lambda",
    "sigmoid_map",
    "solve_beta_tilde",
    "solve_path",
]
