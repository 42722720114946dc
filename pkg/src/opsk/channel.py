"""Open-air channel: noisy mean flow per symbol interval and puff dispersion."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Hashable, Sequence, Tuple

import numpy as np

Vec3 = Tuple[float, float, float]

#: FNR of an axis whose flow carries no noise
NOISE_FREE = math.inf


def _vec3(v: Sequence[float], name: str) -> Vec3:
    if len(v) != 3:
        raise ValueError(f"{name} must have 3 components")
    out = tuple(float(x) for x in v)
    if not all(math.isfinite(x) for x in out):
        raise ValueError(f"{name} must be finite, got {out}")
    return out  # type: ignore[return-value]


@dataclass(frozen=True)
class DiffusionModel:
    D_x: float
    D_y: float
    D_z: float

    def __post_init__(self):
        for d in self.as_tuple():
            if not (math.isfinite(d) and d > 0):
                raise ValueError(f"diffusion coefficients must be positive, got {self.as_tuple()}")

    @classmethod
    def isotropic(cls, D: float) -> "DiffusionModel":
        return cls(D, D, D)

    def as_tuple(self) -> Vec3:
        return (self.D_x, self.D_y, self.D_z)


@dataclass(frozen=True)
class FlowModel:
    mean: Vec3
    sigma: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "mean", _vec3(self.mean, "mean"))
        object.__setattr__(self, "sigma", _vec3(self.sigma, "sigma"))
        if any(s < 0 for s in self.sigma):
            raise ValueError(f"flow noise must be >= 0, got {self.sigma}")

    @classmethod
    def from_fnr(cls, mean: Sequence[float], fnr_xyz: Sequence[float]) -> "FlowModel":
        return cls(tuple(mean), tuple(sigma_from_fnr(v, f) for v, f in zip(mean, fnr_xyz)))


@dataclass(frozen=True)
class FlowSample:
    u: Vec3
    interval_index: int


@dataclass(frozen=True)
class ReleaseEvent:
    """One instantaneous puff and the displacement it has accumulated so far."""

    odor_id: Hashable
    mass: float
    release_interval: int
    drift: Vec3 = (0.0, 0.0, 0.0)
    elapsed: float = 0.0

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("released mass must be positive")
        if self.release_interval < 1:
            raise ValueError("intervals are numbered from 1")


def fnr(v: float, sigma: float) -> float:
    """Flow-rate-to-noise ratio ``v / sigma``; :data:`NOISE_FREE` when ``sigma == 0``."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return NOISE_FREE
    return v / sigma


def sigma_from_fnr(v: float, ratio: float) -> float:
    if ratio == NOISE_FREE:
        return 0.0
    if not ratio > 0:
        raise ValueError(f"FNR must be positive, got {ratio}")
    return abs(v) / ratio


def sample_flow(model: FlowModel, interval: int, rng: np.random.Generator) -> FlowSample:
    # always consume three normals so paired runs stay aligned across noise levels
    z = rng.standard_normal(3)
    u = tuple(m + s * zk for m, s, zk in zip(model.mean, model.sigma, z))
    return FlowSample(u, interval)  # type: ignore[arg-type]


def advance_drift(rel: ReleaseEvent, u: FlowSample | Sequence[float], dt: float) -> ReleaseEvent:
    if dt < 0:
        raise ValueError("dt must be >= 0")
    vel = u.u if isinstance(u, FlowSample) else tuple(u)
    drift = tuple(d + v * dt for d, v in zip(rel.drift, vel))
    return replace(rel, drift=drift, elapsed=rel.elapsed + dt)


def concentration(rel: ReleaseEvent, point, diff: DiffusionModel):
    """Puff concentration (kg/m^3) at ``point``; ``point`` may be an array with xyz on the last axis."""
    t = rel.elapsed
    if not t > 0:
        raise ValueError("concentration needs elapsed time > 0")
    D = np.asarray(diff.as_tuple())
    pt = np.asarray(point, dtype=float)
    d = pt - np.asarray(rel.drift)
    expo = np.sum(d * d / (4.0 * D * t), axis=-1)
    peak = rel.mass / ((4.0 * math.pi * t) ** 1.5 * math.sqrt(float(np.prod(D))))
    out = peak * np.exp(-expo)
    return float(out) if np.ndim(out) == 0 else out
