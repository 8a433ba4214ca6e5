"""Affine surrogates of ``f(V) = 1/conj(V)`` and the binary-product envelope."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import PHASES, Phase

DEFAULT_CENTERS = {Phase.A: 0.0, Phase.B: math.radians(120.0), Phase.C: math.radians(-120.0)}


class RankDeficientError(ValueError):
    pass


@dataclass(frozen=True)
class FitRegion:
    """Rectangular VM x VA sampling region shared by all three phases.

    Degenerate regions (``v_min == v_max`` or a zero half-width) are accepted
    so that rank-deficient sample sets can be built deliberately; the fit
    rejects them.
    """

    v_min: float = 0.95
    v_max: float = 1.05
    delta_halfwidth: float = math.radians(10.0)
    m: int = 21
    n: int = 21
    delta_center: dict[Phase, float] = field(default_factory=lambda: dict(DEFAULT_CENTERS))

    def __post_init__(self):
        if not 0 < self.v_min <= self.v_max:
            raise ValueError("need 0 < v_min <= v_max")
        if self.delta_halfwidth < 0:
            raise ValueError("delta_halfwidth must be non-negative")
        if self.m < 2 or self.n < 2:
            raise ValueError("grid counts m and n must be at least 2")
        centers = {Phase(k): float(v) for k, v in self.delta_center.items()}
        if set(centers) != set(PHASES):
            raise ValueError("delta_center needs an entry for every phase")
        object.__setattr__(self, "delta_center", centers)

    def angle_bounds(self, phase: Phase) -> tuple[float, float]:
        c = self.delta_center[phase]
        return c - self.delta_halfwidth, c + self.delta_halfwidth


@dataclass(frozen=True)
class PhaseFit:
    """Coefficients of ``fX ~ kx X + ky Y + bx`` and ``fY ~ hx X + hy Y + by``."""

    kx: float
    ky: float
    bx: float
    hx: float
    hy: float
    by: float
    max_fit_error: float = 0.0

    def evaluate(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return self.kx * x + self.ky * y + self.bx, self.hx * x + self.hy * y + self.by

    def approx(self, v):
        """Surrogate of ``1/conj(v)`` as a complex value (or array)."""
        v = np.asarray(v, dtype=complex)
        fx, fy = self.evaluate(v.real, v.imag)
        return fx + 1j * fy

    @property
    def coefficients(self) -> tuple[float, ...]:
        return (self.kx, self.ky, self.bx, self.hx, self.hy, self.by)


@dataclass(frozen=True)
class LinCoeffs:
    phases: dict[Phase, PhaseFit]
    region: FitRegion
    method: str = "lsm"

    def __getitem__(self, phase: Phase) -> PhaseFit:
        return self.phases[Phase(phase)]

    @property
    def max_fit_error(self) -> float:
        return max(f.max_fit_error for f in self.phases.values())


def sample_grid(region: FitRegion, phase: Phase) -> np.ndarray:
    """Cartesian VM x VA grid as an ``(m*n, 4)`` array of ``(X, Y, fX, fY)``."""
    lo, hi = region.angle_bounds(Phase(phase))
    vm = np.linspace(region.v_min, region.v_max, region.m)
    va = np.linspace(lo, hi, region.n)
    mag, ang = np.meshgrid(vm, va, indexing="ij")
    x = (mag * np.cos(ang)).ravel()
    y = (mag * np.sin(ang)).ravel()
    r2 = x * x + y * y
    return np.column_stack([x, y, x / r2, y / r2])


def _normal_solve(design: np.ndarray, target: np.ndarray) -> np.ndarray:
    gram = design.T @ design
    # a near-zero pivot relative to the largest one means collinear samples
    sv = np.linalg.svd(design, compute_uv=False)
    if sv[-1] <= sv[0] * 1e-10:
        raise RankDeficientError("samples are affinely dependent; cannot fit X, Y and offset")
    return np.linalg.solve(gram, design.T @ target)


def fit_lsm(samples: np.ndarray) -> PhaseFit:
    """Least-squares affine fit of fX and fY via the 3x3 normal equations."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] < 3:
        raise RankDeficientError(f"need at least 3 samples, got {samples.shape[0]}")
    x, y, fx, fy = samples.T
    design = np.column_stack([x, y, np.ones_like(x)])
    kx, ky, bx = _normal_solve(design, fx)
    hx, hy, by = _normal_solve(design, fy)
    err = max(
        np.max(np.abs(design @ (kx, ky, bx) - fx)),
        np.max(np.abs(design @ (hx, hy, by) - fy)),
    )
    return PhaseFit(*(float(c) for c in (kx, ky, bx, hx, hy, by)), max_fit_error=float(err))


def cbm_coeffs(delta_center: float) -> PhaseFit:
    """Expand ``2 e^{jd} - conj(V) e^{j2d}`` into affine functions of X and Y."""
    c, s = math.cos(delta_center), math.sin(delta_center)
    c2, s2 = math.cos(2 * delta_center), math.sin(2 * delta_center)
    return PhaseFit(kx=-c2, ky=-s2, bx=2 * c, hx=-s2, hy=c2, by=2 * s)


def fit_region(region: FitRegion | None = None, method: str = "lsm") -> LinCoeffs:
    region = region or FitRegion()
    phases = {}
    for ph in PHASES:
        samples = sample_grid(region, ph)
        if method == "lsm":
            phases[ph] = fit_lsm(samples)
        elif method == "cbm":
            cf = cbm_coeffs(region.delta_center[ph])
            phases[ph] = PhaseFit(*cf.coefficients, max_fit_error=grid_error(cf, samples))
        else:
            raise ValueError(f"unknown linearisation method {method!r}")
    return LinCoeffs(phases, region, method)


def grid_error(fit: PhaseFit, samples: np.ndarray) -> float:
    """Largest componentwise absolute error of ``fit`` over ``samples``."""
    x, y, fx, fy = np.asarray(samples, dtype=float).T
    ax, ay = fit.evaluate(x, y)
    return float(max(np.max(np.abs(ax - fx)), np.max(np.abs(ay - fy))))


def unit_circle_error(fit: PhaseFit, center: float, halfwidth: float, points: int = 1001) -> float:
    """Largest componentwise error on the ``|V| = 1`` arc around ``center``."""
    ang = np.linspace(center - halfwidth, center + halfwidth, points)
    v = np.exp(1j * ang)
    exact = 1.0 / np.conj(v)
    diff = fit.approx(v) - exact
    return float(max(np.max(np.abs(diff.real)), np.max(np.abs(diff.imag))))


def rlp_reconstruct(x: int, y: float, y_min: float, y_max: float) -> tuple[float, float]:
    """Interval of ``z`` allowed by the big-M envelope of ``z = x*y``.

    For binary ``x`` and ``y`` in its box the interval collapses to the
    single point ``x*y``.
    """
    if x not in (0, 1):
        raise ValueError("x must be binary")
    if not y_min <= y <= y_max:
        raise ValueError(f"y={y} outside [{y_min}, {y_max}]")
    lo = max(x * y_min, y + (x - 1) * y_max)
    hi = min(x * y_max, y + (x - 1) * y_min)
    return lo, hi
