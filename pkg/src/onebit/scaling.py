"""Power-law loss fits with an irreducible term: L(N) = a N^b + c.

The fit minimizes squared log-space error, which weights the decades of
a scaling plot evenly. The irreducible constant c makes the objective
non-convex, so c is seeded on a 64-point grid over [0, 0.999 min L);
for each seed (a, b) come from linear regression of log(L - c) on
log N, and the best seed is polished with a bounded least-squares
refinement. The procedure is deterministic given its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .energy import EnergyProfile, DEFAULT_PROFILE, model_energy

C_GRID_POINTS = 64


class FitError(ValueError):
    """Raised when the data cannot support a decaying power-law fit."""


@dataclass
class ScalingFit:
    a: float
    b: float
    c: float
    residual: float  # sum of squared log-space errors at the optimum
    n_points: int

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c,
                "residual": self.residual, "n_points": self.n_points}


def fit_power_law(points) -> ScalingFit:
    """Fit (a, b, c) to (parameter count, loss) observations.

    Requires at least 4 points with distinct N and positive losses;
    rejects data whose best fit is not a decaying law (b < 0, a > 0,
    c >= 0). Internally the power term is parameterized around the
    geometric mean of N, which decorrelates the amplitude from the
    exponent; the few best grid seeds are each refined and the lowest
    residual wins.
    """
    pts = [(float(n), float(l)) for n, l in points]
    if len(pts) < 4:
        raise FitError(f"need at least 4 points, got {len(pts)}")
    n_vals = np.array([p[0] for p in pts])
    l_vals = np.array([p[1] for p in pts])
    if (l_vals <= 0).any():
        raise FitError("losses must be positive")
    if (n_vals <= 0).any():
        raise FitError("parameter counts must be positive")
    if len(set(n_vals.tolist())) != len(pts):
        raise FitError("parameter counts must be distinct")

    log_n = np.log(n_vals)
    log_l = np.log(l_vals)
    center = float(log_n.mean())
    z = log_n - center  # centered exponent coordinate

    def objective(theta: np.ndarray) -> np.ndarray:
        amp, b, c = theta  # amp = log a + b * center
        return np.log(np.exp(amp + b * z) + c) - log_l

    seeds = []
    for c in np.linspace(0.0, 0.999 * l_vals.min(), C_GRID_POINTS):
        resid = l_vals - c
        if (resid <= 0).any():
            continue
        coef = np.polyfit(z, np.log(resid), 1)
        b, amp = float(coef[0]), float(coef[1])
        err = float((objective(np.array([amp, b, c])) ** 2).sum())
        seeds.append((err, amp, b, float(c)))
    if not seeds:
        raise FitError("no feasible irreducible-loss seed")
    seeds.sort()

    best = None
    for err, amp0, b0, c0 in seeds[:4]:
        sol = least_squares(
            objective,
            x0=np.array([amp0, min(b0, -1e-12), c0]),
            bounds=([-np.inf, -np.inf, 0.0], [np.inf, 0.0, np.inf]),
            method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15,
        )
        residual = float((sol.fun ** 2).sum())
        if best is None or residual < best[0]:
            best = (residual, sol.x)
    residual, theta = best
    amp, b, c = (float(v) for v in theta)

    if b > -1e-9:
        raise FitError(f"fitted exponent b={b:.3g} is not negative: no decay in the data")
    a = math.exp(amp - b * center)
    return ScalingFit(a=a, b=b, c=max(c, 0.0), residual=residual, n_points=len(pts))


def predict(fit: ScalingFit, n: float) -> float:
    """Predicted loss a N^b + c; approaches c as N grows."""
    if n <= 0:
        raise ValueError("parameter count must be positive")
    return fit.a * n ** fit.b + fit.c


def loss_vs_energy_curve(
    configs: list[tuple[int, int]],
    losses: list[float],
    mode: str,
    node: str,
    seq_len: int = 512,
    profile: EnergyProfile = DEFAULT_PROFILE,
) -> list[tuple[float, float]]:
    """Pair each (hidden, layers) config's inference energy with its loss.

    Returns (total energy J, loss) points sorted by ascending energy,
    ready for plotting one mode's curve.
    """
    if len(configs) != len(losses):
        raise ValueError(f"{len(configs)} configs vs {len(losses)} losses")
    series = []
    for (hidden, n_layers), loss in zip(configs, losses):
        report = model_energy(hidden, n_layers, seq_len, mode, node, profile=profile)
        series.append((report.total_add_j + report.total_mul_j, float(loss)))
    return sorted(series)
