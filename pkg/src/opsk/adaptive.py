"""Adaptive symbol transmission.

When the last ``N`` symbols say some capsule will run dry within the next
``N``, the transmitter drops one bit from one perceptual dimension, merging
neighbouring classes so that their capsules pool. The change is signalled
in-band: silence, ``R`` repeats of the new bit counts written as a class code
of the old allocation, silence again.
"""

from __future__ import annotations

import enum
import logging
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .perceptual import BitAllocation, ClassCode, Odor, OdorBank, classify

logger = logging.getLogger(__name__)


@dataclass
class WindowStats:
    window: int
    counts: Counter = field(default_factory=Counter)

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")

    @classmethod
    def from_symbols(cls, codes: Iterable[ClassCode], window: int) -> "WindowStats":
        recent = list(codes)[-window:]
        return cls(window, Counter(ClassCode(*c) for c in recent))

    @property
    def complete(self) -> bool:
        return sum(self.counts.values()) == self.window


@dataclass(frozen=True)
class UpdatePolicy:
    N: int = 100
    E: float = 1.0
    silence_len: int = 2
    repeat: int = 3
    #: when set, the threshold is this percentage of the symbols sent so far
    E_percent: Optional[float] = None

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.E < 0:
            raise ValueError("E must be >= 0")
        if self.silence_len < 1:
            raise ValueError("silence_len must be >= 1")
        if self.repeat < 1 or self.repeat % 2 == 0:
            raise ValueError("repeat count must be odd and >= 1")
        if self.E_percent is not None and self.E_percent < 0:
            raise ValueError("E_percent must be >= 0")

    def threshold(self, sent: int) -> float:
        """Minimum worthwhile extension, in symbols, after ``sent`` symbols."""
        if self.E_percent is None:
            return self.E
        return self.E_percent / 100.0 * sent


@dataclass(frozen=True)
class UpdateAnnouncement:
    announced: ClassCode
    old: BitAllocation
    silence_len: int
    repeat: int

    @property
    def schedule(self) -> List[Optional[ClassCode]]:
        """Interval plan; ``None`` marks a silent interval."""
        gap: List[Optional[ClassCode]] = [None] * self.silence_len
        return gap + [self.announced] * self.repeat + gap


def merge_code(code: Sequence[int], old: BitAllocation, new: BitAllocation) -> ClassCode:
    """Class under ``new`` that contains class ``code`` of ``old`` (``new`` never has more bits)."""
    out = []
    for c, n_old, n_new in zip(code, old.bits, new.bits):
        if n_new > n_old:
            raise ValueError(f"{new} adds bits to {old}")
        out.append(int(c) >> (n_old - n_new))
    return ClassCode(*out)


def needs_update(bank: OdorBank, stats: WindowStats, per_symbol_mass: float) -> bool:
    """True when repeating the last window would overdraw some class."""
    if not stats.complete:
        raise ValueError("window statistics are incomplete")
    return any(
        count * per_symbol_mass > bank.remaining(code)
        for code, count in stats.counts.items()
        if count > 0
    )


def candidate_allocations(a: BitAllocation) -> List[BitAllocation]:
    if a.K < 2:
        raise ValueError(f"{a} carries a single bit; no further update is possible")
    out = []
    for dim in range(3):
        bits = list(a.bits)
        bits[dim] -= 1
        if bits[dim] >= 0:
            out.append(BitAllocation(*bits))
    return out


def estimate_extension(bank: OdorBank, stats: WindowStats, cand: BitAllocation, per_symbol_mass: float) -> float:
    """Symbols the candidate allocation could send before its first class runs dry.

    Assumes the class frequencies of the last window persist, merged into the
    candidate's coarser classes, and that every merged class can spend its
    pooled capsule mass.
    """
    old = bank.allocation
    demand: Dict[ClassCode, int] = Counter()
    for code, count in stats.counts.items():
        demand[merge_code(code, old, cand)] += count
    supply: Dict[ClassCode, float] = Counter()
    for code in old.codes():
        supply[merge_code(code, old, cand)] += bank.remaining(code)

    best = float("inf")
    for code, count in demand.items():
        if count <= 0:
            continue
        rate = count / stats.window * per_symbol_mass
        best = min(best, supply[code] / rate)
    return best


def choose_update(extensions: Sequence[Tuple[BitAllocation, float]], E: float) -> Optional[BitAllocation]:
    if not extensions:
        raise ValueError("no candidates to choose from")
    cand, t_max = extensions[0]
    for c, t in extensions[1:]:
        if t > t_max:
            cand, t_max = c, t
    return cand if t_max >= E else None


def reinitialize_bank(bank: OdorBank, new_a: BitAllocation) -> OdorBank:
    """Re-key every capsule under ``new_a``; merged classes share their capsules."""
    delta = [o - n for o, n in zip(bank.allocation.bits, new_a.bits)]
    if sorted(delta) != [0, 0, 1]:
        raise ValueError(f"{bank.allocation} -> {new_a} is not a single-bit reduction")
    capsules: Dict[ClassCode, List[Odor]] = {code: [] for code in new_a.codes()}
    for odor in bank.odors():
        capsules[classify(odor.vector, new_a)].append(odor)
    return OdorBank(new_a, capsules)


def announce_update(new_a: BitAllocation, old_a: BitAllocation, policy: UpdatePolicy) -> UpdateAnnouncement:
    code = ClassCode(*new_a.bits)
    if not old_a.is_valid(code):
        raise ValueError(f"new bit counts {new_a.bits} are not a class code under {old_a}")
    return UpdateAnnouncement(code, old_a, policy.silence_len, policy.repeat)


def receiver_apply_update(decoded_after_silence: Sequence[Sequence[int]]) -> BitAllocation:
    """Per-dimension majority vote over the repeated announcement."""
    if not decoded_after_silence:
        raise ValueError("no announcement symbols")
    bits = []
    for dim in range(3):
        votes = Counter(int(c[dim]) for c in decoded_after_silence)
        # most_common keeps first-seen order on ties; prefer the smaller value
        top = max(votes.values())
        bits.append(min(v for v, n in votes.items() if n == top))
    return BitAllocation(*bits)


class UpdateOutcome(enum.Enum):
    CONTINUE = "continue"
    UPDATED = "updated"
    END = "end"


@dataclass
class UpdateRecord:
    at_symbol: int
    old: BitAllocation
    new: Optional[BitAllocation]
    extensions: List[Tuple[BitAllocation, float]]


class AdaptiveTransmitter:
    """Transmitter side of the update loop.

    ``history`` keeps the last ``N`` transmitted class codes, re-binned into
    the current allocation after every update.
    """

    def __init__(self, bank: OdorBank, policy: UpdatePolicy, per_symbol_mass: float):
        if per_symbol_mass <= 0:
            raise ValueError("per-symbol mass must be positive")
        self.bank = bank
        self.policy = policy
        self.mass = per_symbol_mass
        self.history: deque = deque(maxlen=policy.N)
        self.sent = 0
        self.records: List[UpdateRecord] = []
        self.ended = False

    @property
    def allocation(self) -> BitAllocation:
        return self.bank.allocation

    def stats(self) -> WindowStats:
        return WindowStats(self.policy.N, Counter(self.history))

    def at_checkpoint(self) -> bool:
        return self.sent > 0 and self.sent % self.policy.N == 0 and len(self.history) == self.policy.N

    def can_send(self, code: ClassCode) -> bool:
        return self.bank.pick(code).remaining_mass >= self.mass

    def release(self, code: ClassCode) -> Odor:
        odor = self.bank.pick(code)
        odor.draw(self.mass)
        self.history.append(code)
        self.sent += 1
        return odor

    def release_announcement(self, code: ClassCode, old: BitAllocation) -> Odor:
        """Spend one puff from the capsule that stood for ``code`` under ``old``."""
        pool = [o for o in self.bank.odors() if classify(o.vector, old) == code]
        odor = max(pool, key=lambda o: (o.remaining_mass, -o.id))
        odor.draw(self.mass)
        return odor

    def announcement_affordable(self, code: ClassCode, old: BitAllocation) -> bool:
        pool = [o for o in self.bank.odors() if classify(o.vector, old) == code]
        # the same capsule may serve every repeat
        need = self.policy.repeat * self.mass
        return sum(int(o.remaining_mass // self.mass) for o in pool) * self.mass >= need

    def decide(self, forced: bool = False) -> UpdateOutcome:
        """Run the update check; ``forced`` skips the window test (a capsule is already dry)."""
        if not forced and not needs_update(self.bank, self.stats(), self.mass):
            return UpdateOutcome.CONTINUE
        old = self.allocation
        if old.K < 2:
            self.records.append(UpdateRecord(self.sent, old, None, []))
            self.ended = True
            return UpdateOutcome.END
        stats = self.stats()
        if not stats.complete:
            stats = WindowStats(len(self.history) or 1, Counter(self.history))
        exts = [(c, estimate_extension(self.bank, stats, c, self.mass)) for c in candidate_allocations(old)]
        choice = choose_update(exts, self.policy.threshold(self.sent))
        if choice is not None and not self.announcement_affordable(ClassCode(*choice.bits), old):
            logger.info("update to %s abandoned: announcement capsule is dry", choice)
            choice = None
        self.records.append(UpdateRecord(self.sent, old, choice, exts))
        if choice is None:
            self.ended = True
            return UpdateOutcome.END
        self.bank = reinitialize_bank(self.bank, choice)
        self.history = deque((merge_code(c, old, choice) for c in self.history), maxlen=self.policy.N)
        return UpdateOutcome.UPDATED


class ReceiverState(enum.Enum):
    PAYLOAD = "payload"
    ANNOUNCE = "announce"
    CLOSING = "closing"


class AdaptiveReceiver:
    """Receiver side: silence tracking, announcement capture and re-keying of decoding."""

    def __init__(self, allocation: BitAllocation, policy: UpdatePolicy):
        self.allocation = allocation
        self.policy = policy
        self.state = ReceiverState.PAYLOAD
        self.silent_run = 0
        self.buffer: List[ClassCode] = []
        self.payload: List[Tuple[ClassCode, BitAllocation]] = []
        self.updates: List[BitAllocation] = []

    def feed(self, code: Optional[ClassCode]) -> None:
        """One interval: ``None`` when silence was detected, else the decoded class code."""
        if code is None:
            self.silent_run += 1
            return
        after_gap = self.silent_run >= self.policy.silence_len
        self.silent_run = 0
        if self.state is ReceiverState.PAYLOAD and after_gap:
            self.state = ReceiverState.ANNOUNCE
            self.buffer = []
        elif self.state is ReceiverState.CLOSING and after_gap:
            self.state = ReceiverState.PAYLOAD

        if self.state is ReceiverState.ANNOUNCE:
            self.buffer.append(code)
            if len(self.buffer) == self.policy.repeat:
                self.allocation = receiver_apply_update(self.buffer)
                self.updates.append(self.allocation)
                self.state = ReceiverState.CLOSING
        elif self.state is ReceiverState.PAYLOAD:
            self.payload.append((code, self.allocation))
        else:
            # stray puff between the announcement and the closing silence
            logger.debug("ignoring symbol %s while closing an update", code)
