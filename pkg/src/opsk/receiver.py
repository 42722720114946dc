"""Passive cube receiver: absorption, absorption-time planning, filtering and decoding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Hashable, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erfc

from .channel import DiffusionModel, ReleaseEvent, Vec3
from .perceptual import TOP, BitAllocation, ClassCode, PerceptualVector, classify

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
#: objective values this close to the peak are indistinguishable in double precision
PLATEAU_RTOL = 1e-12


class SilentInterval(ValueError):
    """Raised when an absorption holds no odor mass to decide on."""


class PlanningError(RuntimeError):
    """Raised when the absorption-time search cannot locate an interior maximum."""


@dataclass(frozen=True)
class ReceiverGeometry:
    center: Vec3
    edge: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not (math.isfinite(self.edge) and self.edge > 0):
            raise ValueError("edge length must be positive")


@dataclass(frozen=True)
class TimingPlan:
    T_a: float
    m: float = 2.0

    def __post_init__(self):
        if not self.T_a > 0:
            raise ValueError("absorption time must be positive")
        if not self.m >= 1:
            raise ValueError("symbol-to-sampling ratio must be >= 1")

    @property
    def T_s(self) -> float:
        return self.m * self.T_a


@dataclass(frozen=True)
class ProcessorModel:
    pn: float = 0.0

    def __post_init__(self):
        if not self.pn >= 0:
            raise ValueError("processor noise must be >= 0")


@dataclass
class AbsorptionResult:
    per_odor_mass: Dict[Hashable, float] = field(default_factory=dict)
    interval_index: int = 0

    def greatest(self) -> float:
        return max(self.per_odor_mass.values(), default=0.0)


def erf_bracket(a, b):
    """``erf(a) - erf(b)`` without cancellation when both arguments share a sign."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # erf(a) - erf(b) == erfc(b) - erfc(a) == erfc(-a) - erfc(-b); pick the
    # form whose erfc terms are small
    flip = (a + b) < 0
    hi = np.where(flip, -b, a)
    lo = np.where(flip, -a, b)
    return erfc(lo) - erfc(hi)


def axis_absorption_factor(center_1d, edge, drift_1d, D, t):
    """Erf bracket of one axis: twice the fraction of a 1-D Gaussian puff inside the cube span."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("absorption needs elapsed time > 0")
    if edge <= 0 or D <= 0:
        raise ValueError("edge and D must be positive")
    scale = np.sqrt(4.0 * D * t)
    hi = (center_1d + 0.5 * edge - drift_1d) / scale
    lo = (center_1d - 0.5 * edge - drift_1d) / scale
    out = erf_bracket(hi, lo)
    return float(out) if out.ndim == 0 else out


def capture_fraction(drift, elapsed, geom: ReceiverGeometry, diff: DiffusionModel):
    """Fraction ``B_x B_y B_z / 8`` of each puff inside the cube.

    ``drift`` has shape ``(..., 3)`` and ``elapsed`` the matching leading shape.
    """
    drift = np.asarray(drift, dtype=float)
    elapsed = np.asarray(elapsed, dtype=float)
    frac = np.full(elapsed.shape, 0.125)
    for k, D in enumerate(diff.as_tuple()):
        frac = frac * axis_absorption_factor(geom.center[k], geom.edge, drift[..., k], D, elapsed)
    return frac


def absorbed_mass(
    releases: Iterable[ReleaseEvent],
    geom: ReceiverGeometry,
    diff: DiffusionModel,
    interval_index: int = 0,
) -> AbsorptionResult:
    releases = list(releases)
    res = AbsorptionResult(interval_index=interval_index)
    if not releases:
        return res
    drift = np.array([r.drift for r in releases])
    elapsed = np.array([r.elapsed for r in releases])
    frac = capture_fraction(drift, elapsed, geom, diff)
    for rel, f in zip(releases, frac):
        res.per_odor_mass[rel.odor_id] = res.per_odor_mass.get(rel.odor_id, 0.0) + rel.mass * float(f)
    return res


def planning_objective(geom: ReceiverGeometry, mean_flow: Sequence[float], diff: DiffusionModel):
    """``t -> B_x B_y B_z`` for a puff carried by the mean flow only."""
    v = np.asarray(mean_flow, dtype=float)

    def objective(t):
        t = np.asarray(t, dtype=float)
        drift = t[..., None] * v
        return 8.0 * capture_fraction(drift, t, geom, diff)

    return objective


def default_search_bounds(geom: ReceiverGeometry, mean_flow: Sequence[float], diff: DiffusionModel) -> Tuple[float, float]:
    r = max(math.dist(geom.center, (0.0, 0.0, 0.0)), geom.edge)
    d_max = max(diff.as_tuple())
    scales = [r * r / (2.0 * d_max)]
    speed = math.hypot(*mean_flow)
    if speed > 0:
        scales.append(r / speed)
    return 1e-4 * min(scales), 1e3 * max(scales)


def golden_section_max(f: Callable[[float], float], a: float, b: float, tol: float, max_iter: int = 500) -> float:
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(max_iter):
        if abs(b - a) <= tol:
            break
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = f(x1)
    return x1 if f1 >= f2 else x2


def optimize_absorption_time(
    geom: ReceiverGeometry,
    mean_flow: Sequence[float],
    diff: DiffusionModel,
    bounds: Optional[Tuple[float, float]] = None,
    rtol: float = 1e-10,
    grid_points: int = 400,
) -> float:
    """Absorption instant that maximises the captured fraction of the latest puff.

    A log-spaced scan brackets the peak; golden-section search in ``log t``
    then refines it to relative tolerance ``rtol``.
    """
    t_lo, t_hi = bounds if bounds is not None else default_search_bounds(geom, mean_flow, diff)
    if not (0 < t_lo < t_hi):
        raise ValueError(f"bad search bounds ({t_lo}, {t_hi})")
    if not rtol > 0:
        raise ValueError("tolerance must be positive")
    obj = planning_objective(geom, mean_flow, diff)

    grid = np.geomspace(t_lo, t_hi, grid_points)
    v = np.asarray(mean_flow, dtype=float)
    speed2 = float(v @ v)
    if speed2 > 0:
        # under strong advection the puff crosses the cube faster than the
        # log grid steps; seed the scan around the advective arrival
        t_arr = float(np.asarray(geom.center) @ v) / speed2
        step = 0.25 * geom.edge / math.sqrt(speed2)
        extra = t_arr + step * np.arange(-8, 9)
        extra = extra[(extra > t_lo) & (extra < t_hi)]
        grid = np.unique(np.concatenate([grid, extra]))
    vals = obj(grid)
    if not np.all(np.isfinite(vals)):
        raise PlanningError("non-finite absorption objective")
    j = int(np.argmax(vals))
    if vals[j] <= 0:
        raise PlanningError("receiver captures nothing anywhere in the search window")
    if j == 0 or j == len(grid) - 1:
        raise PlanningError(f"absorption peak not bracketed in ({t_lo:g}, {t_hi:g}) s")

    u = golden_section_max(lambda s: float(obj(math.exp(s))), math.log(grid[j - 1]), math.log(grid[j + 1]), rtol)
    t_best = math.exp(u)
    f_best = float(obj(t_best))
    if f_best < vals[j]:
        t_best, f_best = float(grid[j]), float(vals[j])

    # A puff much narrower than the cube scores the same for as long as it
    # sits inside; take the middle of that plateau, not an arbitrary point.
    level = f_best * (1.0 - PLATEAU_RTOL)
    below = vals < level
    left_out = np.flatnonzero(below & (grid < t_best))
    right_out = np.flatnonzero(below & (grid > t_best))
    if left_out.size and right_out.size:
        left = _bisect_level(obj, float(grid[left_out[-1]]), t_best, level, rising=True)
        right = _bisect_level(obj, t_best, float(grid[right_out[0]]), level, rising=False)
        mid = 0.5 * (left + right)
        if float(obj(mid)) >= level:
            return mid
    return t_best


def _bisect_level(obj, a: float, b: float, level: float, rising: bool, iters: int = 200) -> float:
    """Crossing of ``obj`` through ``level`` inside ``[a, b]``; returns the point on the plateau side."""
    for _ in range(iters):
        m = 0.5 * (a + b)
        if m in (a, b):
            break
        above = float(obj(m)) >= level
        if above == rising:
            b = m
        else:
            a = m
    return b if rising else a


def mass_ratio(geom: ReceiverGeometry, mean_flow: Sequence[float], diff: DiffusionModel, T_a: float) -> float:
    """Share of one release inside the cube at the absorption instant."""
    if not T_a > 0:
        raise ValueError("absorption time must be positive")
    return float(planning_objective(geom, mean_flow, diff)(T_a)) / 8.0


def select_greatest_mass(res: AbsorptionResult) -> Hashable:
    """Odor with most absorbed mass; the smallest id wins a tie."""
    best_id = None
    best = 0.0
    for oid in sorted(res.per_odor_mass):
        m = res.per_odor_mass[oid]
        if m > best:
            best_id, best = oid, m
    if best_id is None:
        raise SilentInterval("no odor mass absorbed")
    return best_id


def demodulate(true_vector: PerceptualVector, proc: ProcessorModel, rng: np.random.Generator) -> PerceptualVector:
    z = rng.standard_normal(3)
    if proc.pn == 0:
        return true_vector
    noisy = np.asarray(true_vector.as_tuple()) + proc.pn * z
    return PerceptualVector(*np.clip(noisy, 0.0, TOP).tolist())


def decode_received(v: PerceptualVector, a: BitAllocation) -> ClassCode:
    return classify(v, a)


def detect_silence(res: AbsorptionResult, M_T: float) -> bool:
    if not M_T > 0:
        raise ValueError("silence threshold must be positive")
    return res.greatest() < M_T
