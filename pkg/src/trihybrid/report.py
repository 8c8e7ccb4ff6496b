from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class SolveReport:
    """Outcome of a single solve.

    ``value`` is the quantity the solver maximizes (SE in bits/s/Hz or EE in
    bits/s/Hz per mW); ``trace`` holds it once per inner iteration.
    """

    objective: str
    value: float
    se: float
    pt: float
    p_total: float | None = None
    ee: float | None = None
    trace: list = field(default_factory=list)
    penalty_residual: float = 0.0
    iterations: int = 0
    outer_iterations: int = 0
    converged: bool = True
    wall_time_ms: float = 0.0
    extra: dict = field(default_factory=dict)
