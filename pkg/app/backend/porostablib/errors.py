from typing import List, Optional


class PorostabError(Exception):
    """
    Base class for every error raised by the porostab library
    """

    def __init__(self, error: str):
        super().__init__(error)
        self.error = error

    def __str__(self) -> str:
        return self.error or ""


class MeshError(PorostabError, ValueError):
    pass


class MaterialError(PorostabError, ValueError):
    pass


class ProblemError(PorostabError, ValueError):
    """
    Raised for inconsistent problem definitions: schedules, wells, boundary conditions or unknown benchmarks
    """


class ContractError(PorostabError):
    """
    Raised when an operation is called outside of its documented preconditions
    """


class ConfigError(PorostabError, ValueError):
    def __init__(self, error: str, path: Optional[str] = None, line: Optional[int] = None, column: Optional[int] = None):
        super().__init__(error)
        self.path = path
        self.line = line
        self.column = column

    def __str__(self) -> str:
        location = ""
        if self.line is not None:
            location = f" (line {self.line}, column {self.column})"
        if self.path:
            return f"{self.path}: {self.error}{location}"
        return f"{self.error}{location}"


class LinearSolverError(PorostabError):
    def __init__(self, error: str, residual_history: Optional[List[float]] = None):
        super().__init__(error)
        self.residual_history = residual_history or []


class ConvergenceError(PorostabError):
    def __init__(self, error: str, iterations: int = 0, residual_history: Optional[List[float]] = None):
        super().__init__(error)
        self.iterations = iterations
        self.residual_history = residual_history or []


class TimeMarchError(PorostabError):
    def __init__(self, error: str, history=None):
        super().__init__(error)
        self.history = history
