"""Exception hierarchy.

Each class carries the process exit code the CLI uses when it surfaces the
error (2 usage, 3 data, 4 solver).
"""


class CombssError(Exception):
    exit_code = 1
    kind = "error"

    def to_record(self) -> dict:
        return {"error": self.kind, "message": str(self)}


class DimensionError(CombssError, ValueError):
    exit_code = 3
    kind = "dimension_error"


class DataError(CombssError, ValueError):
    exit_code = 3
    kind = "data_error"


class IngestionError(DataError):
    kind = "ingestion_error"


class DomainError(CombssError, ValueError):
    exit_code = 3
    kind = "domain_error"


class SizeError(CombssError, ValueError):
    exit_code = 2
    kind = "size_error"


class SolverError(CombssError, RuntimeError):
    exit_code = 4
    kind = "solver_error"

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual

    def to_record(self) -> dict:
        rec = super().to_record()
        rec["residual"] = self.residual
        return rec


class SingularityError(SolverError):
    kind = "singularity_error"


class OptimizerError(SolverError):
    kind = "optimizer_error"

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration

    def to_record(self) -> dict:
        rec = super().to_record()
        rec["iteration"] = self.iteration
        return rec
