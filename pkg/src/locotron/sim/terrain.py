"""Terrain height fields.

Every kind compiles to one sampled grid with linear interpolation so the
contact kernel has a single code path. Step edges get short ramps; a penalty
contact model cannot resolve true discontinuities.
"""

from dataclasses import dataclass

import numpy as np

KINDS = ("smooth-plain", "rough-plain", "smooth-slope", "steps")


@dataclass
class Terrain:
    kind: str
    x0: float
    dx: float
    heights: np.ndarray
    seed: int = 0

    def height(self, x):
        """Terrain height at x (scalar or array)."""
        xs = np.asarray(x, dtype=np.float64)
        grid_x = self.x0 + self.dx * np.arange(len(self.heights))
        return np.interp(xs, grid_x, self.heights)


def make_terrain(kind, seed=0, x_range=(-5.0, 45.0), dx=0.02,
                 roughness=0.04, slope=0.1,
                 step_heights=(0.02, 0.04, 0.06, 0.08), step_length=0.8,
                 step_start=2.0, ramp=0.04):
    """Build one terrain of the requested kind, deterministic in the seed."""
    if kind not in KINDS:
        raise ValueError(f"unknown terrain kind {kind!r}")
    x0, x1 = x_range
    n = int(round((x1 - x0) / dx)) + 1
    xs = x0 + dx * np.arange(n)
    if kind == "smooth-plain":
        h = np.zeros(n)
    elif kind == "smooth-slope":
        h = np.where(xs > 0.0, slope * xs, 0.0)
    elif kind == "rough-plain":
        rng = np.random.default_rng(seed)
        knots = rng.uniform(-roughness, roughness, size=n // 25 + 2)
        knot_x = np.linspace(x0, x1, len(knots))
        h = np.interp(xs, knot_x, knots)
        # keep the spawn area flat so resets are well-conditioned
        h[np.abs(xs) < 0.6] = 0.0
    else:  # steps, ascending, each edge a short ramp
        h = np.zeros(n)
        level = 0.0
        edge = step_start
        for sh in step_heights:
            new_level = level + sh
            rise = np.clip((xs - edge) / ramp, 0.0, 1.0)
            h = np.where(xs >= edge, level + rise * sh, h)
            level = new_level
            edge += step_length
        h[xs >= edge] = level
    return Terrain(kind=kind, x0=x0, dx=dx, heights=h, seed=seed)
