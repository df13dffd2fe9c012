from __future__ import annotations

from dataclasses import dataclass

from .model import LAPLACIAN_KINDS


@dataclass(frozen=True)
class SolverSettings:
    """Numerical knobs shared by both obstacle solvers.

    Cross-solver comparisons must use one instance so thresholds agree.
    """

    laplacian: str = "fd2"
    lcp: str = "active-set"  # or "psor"
    theta_pos: float = 1e-12  # relative positivity threshold
    psor_omega: float = 1.5
    psor_tol: float = 1e-10
    psor_max_sweeps: int = 100_000
    mass_tol: float = 1e-10
    max_outer: int = 50
    steady_tol: float = 1e-11
    steady_max_steps: int = 100_000

    def __post_init__(self):
        if self.laplacian not in LAPLACIAN_KINDS:
            raise ValueError(f"laplacian must be one of {LAPLACIAN_KINDS}")
        if self.lcp not in ("active-set", "psor"):
            raise ValueError("lcp must be 'active-set' or 'psor'")
        if not 0 < self.psor_omega < 2:
            raise ValueError("psor_omega must lie in (0, 2)")
        for name in ("theta_pos", "psor_tol", "mass_tol", "steady_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def threshold(self, u) -> float:
        return self.theta_pos * max(1.0, float(max(u)))
