"""The verification pipeline shared by the command line and the repair post-checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .criticality import Box, CriticalBranch, Settings, continue_branch, find_critical_points, h3a_report
from .homoclinic import compute_separatrix
from .melnikov import Melnikov
from .model import SystemSpec
from .reduced import H3B_TOL, h3b_check


@dataclass(frozen=True)
class Target:
    I0: np.ndarray
    phi0: np.ndarray
    s0: float = 0.0

    @classmethod
    def of(cls, system: SystemSpec, I0=None, phi0=None, s0: float = 0.0) -> "Target":
        d = system.d
        I0 = np.ones(d) if I0 is None else np.broadcast_to(np.asarray(I0, dtype=float), (d,)).copy()
        phi0 = np.zeros(d) if phi0 is None else np.broadcast_to(np.asarray(phi0, dtype=float), (d,)).copy()
        return cls(I0, phi0, float(s0))

    def theta_at(self, system: SystemSpec) -> np.ndarray:
        """The same point in the s = 0 gauge."""
        return self.phi0 - system.omega(self.I0) * self.s0


@dataclass(frozen=True)
class VerifyConfig:
    I_half: float = 0.2
    angle_half: float = 0.5
    grid_steps: int = 5
    seeds_per_dim: int = 8
    settings: Settings = field(default_factory=Settings)
    h3b_tol: float = H3B_TOL
    theta_points: int = 9
    workers: int = 1
    box: Box | None = None  # overrides the box built around the target


@dataclass
class VerifyResult:
    h3a: dict
    h3b: dict
    branch: CriticalBranch | None
    degenerate: list
    candidates: list

    @property
    def passed(self) -> bool:
        return bool(self.h3a["pass"] and self.h3b["pass"])

    def to_dict(self) -> dict:
        return {"H3a": self.h3a, "H3b": self.h3b, "pass": self.passed}


def verify_system(system: SystemSpec, target: Target, config: VerifyConfig = VerifyConfig(), orbits=None) -> VerifyResult:
    orbits = orbits or [compute_separatrix(pd) for pd in system.pendulums]
    mk = Melnikov(system, orbits, config.settings.quad_tol)
    good, bad = find_critical_points(
        system, orbits, target.I0, target.phi0, target.s0, config.seeds_per_dim, config.settings, config.workers, mk
    )
    if not good:
        h3a = h3a_report(None)
        if bad:
            h3a["reason"] = "no nondegenerate critical points (only degenerate ones found)"
        h3b = {"hypothesis": "H3b", "pass": False, "reason": "not checked: H3a failed", "max_grad_theta": 0.0}
        return VerifyResult(h3a, h3b, None, bad, good)
    box = config.box or Box.around(target.I0, target.phi0, target.s0, config.I_half, config.angle_half)
    branch = continue_branch(system, orbits, good[0], box, config.grid_steps, config.settings, mk)
    h3a = h3a_report(branch)
    half = np.minimum(box.phi_half, np.pi)
    theta_c = target.theta_at(system) - system.omega(target.I0) * (box.s_center - target.s0)
    offsets = np.linspace(-1.0, 1.0, config.theta_points)[:, None] * half[None, :]
    h3b = h3b_check(branch, target.I0, [theta_c + off for off in offsets], config.h3b_tol)
    return VerifyResult(h3a, h3b, branch, bad, good)
