"""Perceptual space, class codes and odor banks.

An odor is a point ``(pleasantness, intensity, edibility)`` on the half-open
0-100 scale. Each dimension is cut into ``2**n`` equal classes, and the triple
of class indices is the symbol carried by that odor.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, NamedTuple, Sequence, Tuple

import numpy as np

SCALE = 100.0
#: largest representable perceptual value; 100 itself is outside the domain
TOP = math.nextafter(SCALE, 0.0)
MAX_BITS = 8
DIMENSIONS = ("p", "i", "e")


class ClassCode(NamedTuple):
    p: int
    i: int
    e: int

    def __str__(self) -> str:
        return f"O_{self.p}{self.i}{self.e}"


@dataclass(frozen=True)
class PerceptualVector:
    p: float
    i: float
    e: float

    def __post_init__(self):
        for name in DIMENSIONS:
            v = getattr(self, name)
            if not math.isfinite(v) or not (0.0 <= v < SCALE):
                raise ValueError(f"perceptual value {name}={v!r} outside [0, 100)")

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.p, self.i, self.e)


@dataclass(frozen=True)
class BitAllocation:
    """Bits per symbol carried by each perceptual dimension, written ``K(n_p,n_i,n_e)``."""

    n_p: int
    n_i: int
    n_e: int

    def __post_init__(self):
        for name in ("n_p", "n_i", "n_e"):
            n = getattr(self, name)
            if not isinstance(n, (int, np.integer)) or n < 0 or n > MAX_BITS:
                raise ValueError(f"{name}={n!r} must be an integer in [0, {MAX_BITS}]")
        if self.K < 1:
            raise ValueError("allocation must carry at least one bit per symbol")

    @property
    def K(self) -> int:
        return self.n_p + self.n_i + self.n_e

    @property
    def bits(self) -> Tuple[int, int, int]:
        return (self.n_p, self.n_i, self.n_e)

    @property
    def n_classes(self) -> int:
        return 1 << self.K

    def codes(self) -> Iterator[ClassCode]:
        """All valid class codes, in the order of their bit patterns."""
        for p in range(1 << self.n_p):
            for i in range(1 << self.n_i):
                for e in range(1 << self.n_e):
                    yield ClassCode(p, i, e)

    def is_valid(self, c: Sequence[int]) -> bool:
        return all(0 <= int(x) < (1 << n) for x, n in zip(c, self.bits))

    def __str__(self) -> str:
        return f"{self.K}({self.n_p},{self.n_i},{self.n_e})"

    @classmethod
    def parse(cls, text: str) -> "BitAllocation":
        """Parse ``"2,1,1"`` or ``"4(2,1,1)"``."""
        body = text.strip()
        head = ""
        if "(" in body:
            head, _, rest = body.partition("(")
            body = rest.rstrip(")")
        parts = [int(x) for x in body.split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected three bit counts, got {text!r}")
        a = cls(*parts)
        if head.strip() and int(head) != a.K:
            raise ValueError(f"bit count {head} does not match {a}")
        return a


def build_thresholds(n: int) -> List[float]:
    """Decision thresholds ``k * 100 / 2**n`` for ``k = 1 .. 2**n - 1``."""
    if not 0 <= n <= MAX_BITS:
        raise ValueError(f"n={n} outside [0, {MAX_BITS}]")
    width = SCALE / (1 << n)
    return [k * width for k in range(1, 1 << n)]


def classify_value(v: float, n: int) -> int:
    # floor(2**n * v / 100); the min() guards values a rounding step below 100
    return min(int(math.floor((1 << n) * v / SCALE)), (1 << n) - 1)


def classify(v: PerceptualVector, a: BitAllocation) -> ClassCode:
    return ClassCode(
        classify_value(v.p, a.n_p),
        classify_value(v.i, a.n_i),
        classify_value(v.e, a.n_e),
    )


def bits_to_class(bits: Sequence[int], a: BitAllocation) -> ClassCode:
    """Split ``K`` bits into p/i/e segments (MSB first) and read each as an integer."""
    if len(bits) != a.K:
        raise ValueError(f"expected {a.K} bits, got {len(bits)}")
    out = []
    pos = 0
    for n in a.bits:
        value = 0
        for b in bits[pos:pos + n]:
            if b not in (0, 1):
                raise ValueError(f"not a bit: {b!r}")
            value = (value << 1) | int(b)
        out.append(value)
        pos += n
    return ClassCode(*out)


def class_to_bits(c: Sequence[int], a: BitAllocation) -> List[int]:
    if not a.is_valid(c):
        raise ValueError(f"class {tuple(c)} not valid under {a}")
    bits: List[int] = []
    for value, n in zip(c, a.bits):
        bits.extend((int(value) >> (n - 1 - j)) & 1 for j in range(n))
    return bits


def _interval(k: int, n: int) -> Tuple[float, float]:
    width = SCALE / (1 << n)
    return k * width, (k + 1) * width


def quality_dimension(values: Sequence[float], n: int) -> float:
    """Odor-set quality of one perceptual dimension.

    ``values[k]`` is the coordinate of the odor standing for class ``k``.
    Each odor is penalised by its distance from the best spot in its class
    (the outer edge for the two boundary classes, the midpoint for inner
    classes), measured in class widths; the score is one minus the mean
    penalty.
    """
    if n < 1:
        raise ValueError("quality is defined only for dimensions carrying bits")
    count = 1 << n
    if len(values) != count:
        raise ValueError(f"expected {count} values, got {len(values)}")
    width = SCALE / count
    for k, v in enumerate(values):
        lo, hi = _interval(k, n)
        if not (lo <= v < hi):
            raise ValueError(f"value {v} for class {k} outside [{lo}, {hi})")

    total = abs(values[0] - 0.0) / width + abs(TOP - values[-1]) / width
    for k in range(1, count - 1):
        lo, hi = _interval(k, n)
        v = values[k]
        total += abs(abs(v - lo) - abs(hi - v)) / width
    return 1.0 - total / count


@dataclass
class Odor:
    id: int
    vector: PerceptualVector
    remaining_mass: float

    def draw(self, mass: float) -> None:
        if mass < 0:
            raise ValueError("cannot release negative mass")
        if mass > self.remaining_mass:
            raise ValueError(f"odor {self.id} holds {self.remaining_mass} kg, asked for {mass}")
        self.remaining_mass -= mass


@dataclass
class OdorBank:
    allocation: BitAllocation
    capsules: Dict[ClassCode, List[Odor]] = field(default_factory=dict)

    def __post_init__(self):
        for code in self.allocation.codes():
            if not self.capsules.get(code):
                raise ValueError(f"class {code} has no capsule")
        for code, odors in self.capsules.items():
            for odor in odors:
                got = classify(odor.vector, self.allocation)
                if got != code:
                    raise ValueError(f"odor {odor.id} classifies to {got}, stored under {code}")

    def odors(self) -> List[Odor]:
        return sorted((o for lst in self.capsules.values() for o in lst), key=lambda o: o.id)

    def remaining(self, code: ClassCode) -> float:
        return sum(o.remaining_mass for o in self.capsules[code])

    def total_mass(self) -> float:
        return math.fsum(o.remaining_mass for o in self.odors())

    def pick(self, code: ClassCode) -> Odor:
        """Capsule to release from: the one holding most mass, lowest id on ties."""
        return max(self.capsules[code], key=lambda o: (o.remaining_mass, -o.id))

    def is_single(self) -> bool:
        return all(len(lst) == 1 for lst in self.capsules.values())

    def copy(self) -> "OdorBank":
        return copy.deepcopy(self)


def quality_overall(bank: OdorBank) -> float:
    """Minimum of the per-dimension qualities over dimensions that carry bits."""
    if not bank.is_single():
        raise ValueError("quality is defined only for banks with one odor per class")
    a = bank.allocation
    qualities = []
    for dim, n in enumerate(a.bits):
        if n == 0:
            continue
        # several odors share each class index along this axis; the one
        # furthest from its optimum represents the class
        values: Dict[int, float] = {}
        for code, (odor,) in bank.capsules.items():
            k = code[dim]
            v = odor.vector.as_tuple()[dim]
            if k not in values or quality_penalty(v, k, n) > quality_penalty(values[k], k, n):
                values[k] = v
        qualities.append(quality_dimension([values[k] for k in range(1 << n)], n))
    return min(qualities)


def quality_penalty(v: float, k: int, n: int) -> float:
    count = 1 << n
    width = SCALE / count
    if k == 0:
        return abs(v) / width
    if k == count - 1:
        return abs(TOP - v) / width
    lo, hi = _interval(k, n)
    return abs(abs(v - lo) - abs(hi - v)) / width


def optimal_location(k: int, n: int) -> float:
    if n == 0:
        return 0.0
    count = 1 << n
    if k == 0:
        return 0.0
    if k == count - 1:
        return TOP
    lo, hi = _interval(k, n)
    return 0.5 * (lo + hi)


def displaced_location(k: int, n: int, penalty: float, downward: bool) -> float:
    """Coordinate in class ``k`` whose quality penalty equals ``penalty`` (0 <= penalty < 1)."""
    count = 1 << n
    width = SCALE / count
    if k == 0:
        return penalty * width
    if k == count - 1:
        return TOP - penalty * width
    centre = optimal_location(k, n)
    shift = 0.5 * penalty * width
    return centre - shift if downward else centre + shift


def generate_odor_bank(
    a: BitAllocation,
    target_q: float,
    per_capsule_mass: float,
    rng: np.random.Generator | None = None,
) -> OdorBank:
    """Build a one-odor-per-class bank whose overall quality equals ``target_q``.

    Every odor starts at its optimal spot; the odors of the first dimension
    that carries bits are then pulled away from it by the same penalty
    ``1 - target_q``. Inner odors move towards a random neighbouring
    threshold when ``rng`` is given, otherwise the lower half moves down and
    the upper half up.
    """
    if not (0.0 < target_q <= 1.0):
        raise ValueError(f"target quality {target_q} outside (0, 1]")
    if per_capsule_mass <= 0:
        raise ValueError("capsule mass must be positive")

    penalty = 1.0 - target_q
    perturbed = next(d for d, n in enumerate(a.bits) if n > 0)
    n_pert = a.bits[perturbed]
    count = 1 << n_pert
    if rng is not None:
        downward = [bool(x) for x in rng.integers(0, 2, size=count)]
    else:
        downward = [k < count // 2 for k in range(count)]

    capsules: Dict[ClassCode, List[Odor]] = {}
    for idx, code in enumerate(a.codes()):
        coords = []
        for dim, n in enumerate(a.bits):
            k = code[dim]
            if dim == perturbed and penalty > 0:
                coords.append(displaced_location(k, n, penalty, downward[k]))
            else:
                coords.append(optimal_location(k, n))
        capsules[code] = [Odor(idx, PerceptualVector(*coords), float(per_capsule_mass))]
    return OdorBank(a, capsules)
