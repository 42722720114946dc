"""Monte-Carlo link simulation and the analysis sweeps built on it."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr

from .adaptive import (
    AdaptiveReceiver,
    AdaptiveTransmitter,
    UpdateOutcome,
    UpdatePolicy,
    UpdateRecord,
    announce_update,
    merge_code,
)
from .channel import NOISE_FREE, DiffusionModel, FlowModel
from .perceptual import (
    TOP,
    BitAllocation,
    ClassCode,
    OdorBank,
    bits_to_class,
    build_thresholds,
    class_to_bits,
    generate_odor_bank,
)
from .receiver import (
    ReceiverGeometry,
    TimingPlan,
    axis_absorption_factor,
    mass_ratio,
    optimize_absorption_time,
)

logger = logging.getLogger(__name__)

DEFAULT_D = 0.14e-4
DEFAULT_M = 2.4e-9
DEFAULT_M_RATIO = 2.0
DEFAULT_N_SYMBOLS = 10000
#: absolute floor for dropping a puff from the ISI sum (kg)
RETIRE_MASS = 1e-18
#: puffs are also dropped below this fraction of the expected useful absorption
RETIRE_RELATIVE = 1e-9

MODES = ("type1", "type2", "run", "rate", "mass_ratio")


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulated link. The receiver sits at ``(distance, 0, 0)``; flow is along +x."""

    distance: float
    allocation: BitAllocation = BitAllocation(1, 1, 1)
    edge_ratio: float = 0.05
    flow_ratio: float = 1.0
    fnr: Tuple[float, float, float] = (NOISE_FREE, NOISE_FREE, NOISE_FREE)
    pn: float = 0.0
    quality: float = 1.0
    M: float = DEFAULT_M
    D: float = DEFAULT_D
    m_ratio: float = DEFAULT_M_RATIO
    n_symbols: int = DEFAULT_N_SYMBOLS
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.fnr, (int, float)):
            object.__setattr__(self, "fnr", (float(self.fnr),) * 3)
        else:
            object.__setattr__(self, "fnr", tuple(float(f) for f in self.fnr))
        checks = [
            (self.distance > 0, "distance must be positive"),
            (self.edge_ratio > 0, "edge_ratio must be positive"),
            (self.flow_ratio > 0, "flow_ratio must be positive"),
            (len(self.fnr) == 3 and all(f > 0 for f in self.fnr), "fnr must be positive (inf = noise-free)"),
            (self.pn >= 0, "pn must be >= 0"),
            (0 < self.quality <= 1, "quality must lie in (0, 1]"),
            (self.M > 0, "M must be positive"),
            (self.D > 0, "D must be positive"),
            (self.m_ratio >= 1, "m_ratio must be >= 1"),
            (int(self.n_symbols) == self.n_symbols and self.n_symbols >= 1, "n_symbols must be a positive integer"),
            (0 <= self.seed < 2**64, "seed must be an unsigned 64-bit integer"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    @property
    def edge(self) -> float:
        return self.edge_ratio * self.distance

    @property
    def flow(self) -> float:
        return self.flow_ratio * self.distance

    @property
    def geometry(self) -> ReceiverGeometry:
        return ReceiverGeometry((self.distance, 0.0, 0.0), self.edge)

    @property
    def diffusion(self) -> DiffusionModel:
        return DiffusionModel.isotropic(self.D)

    @property
    def flow_model(self) -> FlowModel:
        return FlowModel.from_fnr((self.flow, 0.0, 0.0), self.fnr)

    def timing(self) -> TimingPlan:
        T_a = optimize_absorption_time(self.geometry, self.flow_model.mean, self.diffusion)
        return TimingPlan(T_a, self.m_ratio)

    @property
    def noise_free_channel(self) -> bool:
        return all(s == 0 for s in self.flow_model.sigma)


@dataclass
class RunResult:
    ser: float
    type1_errors: int
    type2_errors: int
    n_symbols: int
    symbol_rate: float
    mass_ratio_expected: float
    T_a: float = 0.0
    sent: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    decoded: Optional[np.ndarray] = field(default=None, repr=False, compare=False)


def streams(seed: int, n: int = 4) -> List[np.random.Generator]:
    """Independent generators for bits, flow, processor and bank, fixed by ``seed``."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def symbols_from_bits(bits: np.ndarray) -> np.ndarray:
    """Rows of K bits (MSB first) to class indices in ``BitAllocation.codes()`` order."""
    K = bits.shape[1]
    weights = 1 << np.arange(K - 1, -1, -1)
    return bits @ weights


def class_index_table(a: BitAllocation) -> np.ndarray:
    """``(n_classes, 3)`` array of (p, i, e) class indices, row = symbol index."""
    return np.array(list(a.codes()), dtype=np.int64)


def classify_array(values: np.ndarray, a: BitAllocation) -> np.ndarray:
    """Vectorised :func:`classify` for an ``(n, 3)`` array of perceptual values."""
    counts = np.array([1 << n for n in a.bits], dtype=float)
    idx = np.floor(counts * values / 100.0).astype(np.int64)
    return np.minimum(idx, counts.astype(np.int64) - 1)


def run_scenario(cfg: ScenarioConfig, keep_symbols: bool = False) -> RunResult:
    a = cfg.allocation
    timing = cfg.timing()
    T_a, T_s = timing.T_a, timing.T_s
    geom = cfg.geometry
    diff = cfg.diffusion
    flow = cfg.flow_model
    expected = mass_ratio(geom, flow.mean, diff, T_a)

    rng_bits, rng_flow, rng_proc, rng_bank = streams(cfg.seed)
    n = int(cfg.n_symbols)
    bank = scenario_bank(cfg, rng_bank)
    table = class_index_table(a)
    vectors = np.array([bank.capsules[code][0].vector.as_tuple() for code in a.codes()])

    bits = rng_bits.integers(0, 2, size=(n, a.K))
    sent = symbols_from_bits(bits)
    u = np.asarray(flow.mean) + np.asarray(flow.sigma) * rng_flow.standard_normal((n, 3))
    zp = rng_proc.standard_normal((n, 3))

    chosen, _ = absorb_and_filter(sent, u, T_a, T_s, cfg.M, geom, diff, a.n_classes, flow, expected)

    heard = chosen >= 0
    src = np.where(heard, chosen, 0)
    demod = vectors[src]
    if cfg.pn > 0:
        demod = np.clip(demod + cfg.pn * zp, 0.0, TOP)
    decoded_class = classify_array(demod, a)
    decoded = np.where(heard, symbols_from_classes(decoded_class, a), -1)

    type1 = chosen != sent
    type2 = ~type1 & np.any(decoded_class != table[sent], axis=1)
    t1 = int(type1.sum())
    t2 = int(type2.sum())
    return RunResult(
        ser=(t1 + t2) / n,
        type1_errors=t1,
        type2_errors=t2,
        n_symbols=n,
        symbol_rate=1.0 / T_s,
        mass_ratio_expected=expected,
        T_a=T_a,
        sent=sent if keep_symbols else None,
        decoded=decoded if keep_symbols else None,
    )


def scenario_bank(cfg: ScenarioConfig, rng: Optional[np.random.Generator] = None) -> OdorBank:
    """The odor bank a run of ``cfg`` uses: one capsule per class, enough for every symbol."""
    if rng is None:
        rng = streams(cfg.seed)[3]
    return generate_odor_bank(cfg.allocation, cfg.quality, cfg.n_symbols * cfg.M, rng)


def symbols_from_classes(classes: np.ndarray, a: BitAllocation) -> np.ndarray:
    """Inverse of :func:`class_index_table`: (p, i, e) rows to symbol indices."""
    flat = np.zeros(len(classes), dtype=np.int64)
    for dim, nb in enumerate(a.bits):
        flat = (flat << nb) | classes[:, dim]
    return flat


def absorb_and_filter(
    sent: np.ndarray,
    u: np.ndarray,
    T_a: float,
    T_s: float,
    M: float,
    geom: ReceiverGeometry,
    diff: DiffusionModel,
    n_odors: int,
    flow: FlowModel,
    expected: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Greatest-mass odor and its mass at each absorption instant.

    The odor is -1 where nothing arrives. ``sent[k]`` (an odor id, or -1 for a
    silent interval) is released at the start of interval ``k`` and every live puff
    moves with ``u[k]`` during that interval. A puff released in interval
    ``j`` has drifted ``T_s * sum(u[j:k]) + T_a * u[k]`` when interval ``k``
    is sampled.
    """
    n = len(sent)
    cum = np.zeros((n + 1, 3))
    cum[1:] = np.cumsum(u, axis=0)
    D = diff.as_tuple()
    centre = geom.center
    v_mean = np.asarray(flow.mean)
    still = [ax for ax in range(3) if flow.mean[ax] == 0 and flow.sigma[ax] == 0]
    moving = [ax for ax in range(3) if ax not in still]
    flowing = [ax for ax in range(3) if flow.mean[ax] != 0]

    # axes without flow see the same factor for every puff of a given age
    ages_t = np.arange(n) * T_s + T_a
    by_age = np.full(n, 0.125 * M)
    for ax in still:
        by_age *= axis_absorption_factor(centre[ax], geom.edge, 0.0, D[ax], ages_t)

    retire = min(RETIRE_MASS, RETIRE_RELATIVE * M * expected)
    live = np.empty(n, dtype=np.int64)
    n_live = 0
    chosen = np.full(n, -1, dtype=np.int64)
    greatest = np.zeros(n)

    for k in range(n):
        if sent[k] >= 0:
            live[n_live] = k
            n_live += 1
        if n_live == 0:
            continue
        idx = live[:n_live]
        ages = k - idx
        t = ages_t[ages]
        contrib = by_age[ages]
        passed = np.ones(n_live, dtype=bool) if flowing else None
        for ax in moving:
            d = T_s * (cum[k, ax] - cum[idx, ax]) + T_a * u[k, ax]
            contrib = contrib * axis_absorption_factor(centre[ax], geom.edge, d, D[ax], t)
            if ax in flowing:
                passed &= (d - centre[ax]) * np.sign(v_mean[ax]) > 0.5 * geom.edge
        per_odor = np.bincount(sent[idx], weights=contrib, minlength=n_odors)
        best = int(np.argmax(per_odor))
        greatest[k] = per_odor[best]
        if per_odor[best] > 0:
            chosen[k] = best

        # drop puffs that are negligible and already downstream of the cube
        if passed is not None:
            gone = passed & (contrib < retire)
            if gone.any():
                keep = idx[~gone]
                n_live = len(keep)
                live[:n_live] = keep
    return chosen, greatest


def ser_type2_analytic(bank: OdorBank, pn: float) -> float:
    """Exact decoding-error probability under Gaussian processor noise and uniform symbols."""
    if pn < 0:
        raise ValueError("pn must be >= 0")
    if not bank.is_single():
        raise ValueError("analytic SER needs one odor per class")
    if pn == 0:
        return 0.0
    a = bank.allocation
    correct = []
    for code, (odor,) in sorted(bank.capsules.items()):
        prob = 1.0
        for dim, nb in enumerate(a.bits):
            if nb == 0:
                continue
            edges = [-math.inf] + build_thresholds(nb) + [math.inf]
            k = code[dim]
            mu = odor.vector.as_tuple()[dim]
            # clamping sends every out-of-range draw to a boundary class
            prob *= float(ndtr((edges[k + 1] - mu) / pn) - ndtr((edges[k] - mu) / pn))
        correct.append(prob)
    return 1.0 - math.fsum(correct) / len(correct)


def symbol_rate(cfg: ScenarioConfig) -> float:
    return 1.0 / cfg.timing().T_s


def expected_mass_ratio(cfg: ScenarioConfig) -> float:
    return mass_ratio(cfg.geometry, cfg.flow_model.mean, cfg.diffusion, cfg.timing().T_a)


def _force_mode(cfg: ScenarioConfig, mode: str) -> ScenarioConfig:
    if mode == "type1":
        return replace(cfg, pn=0.0)
    if mode == "type2":
        return replace(cfg, fnr=(NOISE_FREE,) * 3)
    return cfg


def _evaluate(job: Tuple[ScenarioConfig, str]) -> Dict[str, float]:
    cfg, mode = job
    if mode in ("type1", "type2", "run"):
        r = run_scenario(cfg)
        out: Dict[str, float] = {
            "ser": r.ser,
            "type1_errors": r.type1_errors,
            "type2_errors": r.type2_errors,
            "n_symbols": r.n_symbols,
            "symbol_rate": r.symbol_rate,
            "mass_ratio": r.mass_ratio_expected,
        }
        if mode == "type2":
            out["ser_analytic"] = ser_type2_analytic(scenario_bank(cfg), cfg.pn)
        return out
    timing = cfg.timing()
    if mode == "rate":
        return {"T_a": timing.T_a, "T_s": timing.T_s, "symbol_rate": 1.0 / timing.T_s}
    return {"T_a": timing.T_a, "mass_ratio": mass_ratio(cfg.geometry, cfg.flow_model.mean, cfg.diffusion, timing.T_a)}


AXIS_FIELDS = ("allocation", "distance", "edge_ratio", "flow_ratio", "fnr", "pn", "quality", "M", "D", "m_ratio", "n_symbols", "seed")


def varying_axes(grid: Sequence[ScenarioConfig]) -> List[str]:
    return [name for name in AXIS_FIELDS if len({getattr(c, name) for c in grid}) > 1]


def sweep(
    grid: Sequence[ScenarioConfig],
    mode: str,
    axes: Optional[Sequence[str]] = None,
    threads: int = 1,
) -> List[Dict[str, object]]:
    """Evaluate every grid point; one row per point, axis columns first.

    ``type1`` runs with a noise-free processor and ``type2`` with a
    noise-free channel, whatever the grid says; sweeping the quantity a mode
    silences is rejected.
    """
    if mode not in MODES:
        raise ValueError(f"unknown sweep mode {mode!r}")
    if not grid:
        raise ValueError("empty grid")
    axes = list(axes) if axes is not None else varying_axes(grid)
    if mode == "type1" and "pn" in axes:
        raise ValueError("a type1 sweep cannot vary pn (processor is noise-free)")
    if mode == "type2" and "fnr" in axes:
        raise ValueError("a type2 sweep cannot vary fnr (channel is noise-free)")
    if threads < 1:
        raise ValueError("threads must be >= 1")

    jobs = [(_force_mode(c, mode), mode) for c in grid]
    if threads == 1 or len(jobs) == 1:
        metrics = [_evaluate(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            metrics = list(pool.map(_evaluate, jobs))

    rows = []
    for (cfg, _), met in zip(jobs, metrics):
        row: Dict[str, object] = {name: getattr(cfg, name) for name in axes}
        row.update(met)
        rows.append(row)
    return rows


@dataclass
class ExtensionResult:
    allocation: BitAllocation
    distribution: int
    initial_runtime: int
    total_symbols: int
    extension_percent: float
    updates: List[UpdateRecord] = field(default_factory=list)

    @property
    def final_allocation(self) -> BitAllocation:
        done = [r.new for r in self.updates if r.new is not None]
        return done[-1] if done else self.allocation


def adaptive_extension_analysis(
    start_a: BitAllocation,
    distributions: Sequence[Sequence[float]],
    policy: UpdatePolicy,
    bank_mass: float,
    per_symbol_mass: float = DEFAULT_M,
    seed: int = 0,
    max_symbols: int = 10**7,
) -> List[ExtensionResult]:
    """Operation-time extension bought by adaptive updates, per symbol distribution.

    Source symbols are drawn i.i.d. from each distribution over the starting
    allocation's classes and folded into the current (coarser) classes. The
    runtime up to the first update state is the baseline; every payload
    symbol sent after it counts as extension.
    """
    results = []
    for j, dist in enumerate(distributions):
        probs = np.asarray(dist, dtype=float)
        if probs.shape != (start_a.n_classes,) or np.any(probs < 0) or probs.sum() <= 0:
            raise ValueError(f"distribution {j} must be {start_a.n_classes} non-negative weights")
        probs = probs / probs.sum()
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(j,)))
        codes = list(start_a.codes())

        tx = AdaptiveTransmitter(generate_odor_bank(start_a, 1.0, bank_mass), policy, per_symbol_mass)
        baseline: Optional[int] = None
        draws = iter(())
        while tx.sent < max_symbols:
            if tx.at_checkpoint():
                outcome = tx.decide()
                if outcome is not UpdateOutcome.CONTINUE:
                    baseline = tx.sent if baseline is None else baseline
                    if outcome is UpdateOutcome.END or not _pay_announcement(tx):
                        break
            src = next(draws, None)
            if src is None:
                draws = iter(rng.choice(len(codes), size=4096, p=probs).tolist())
                src = next(draws)
            code = merge_code(codes[src], start_a, tx.allocation)
            while not tx.can_send(code):
                baseline = tx.sent if baseline is None else baseline
                if tx.decide(forced=True) is UpdateOutcome.END or not _pay_announcement(tx):
                    break
                code = merge_code(codes[src], start_a, tx.allocation)
            if tx.ended:
                break
            tx.release(code)

        base = baseline if baseline is not None else tx.sent
        ext = 100.0 * (tx.sent - base) / base if base else 0.0
        results.append(ExtensionResult(start_a, j, base, tx.sent, ext, list(tx.records)))
    return results


def _pay_announcement(tx: AdaptiveTransmitter) -> bool:
    """Spend the announcement puffs of the update just made."""
    rec = tx.records[-1]
    try:
        for _ in range(tx.policy.repeat):
            tx.release_announcement(ClassCode(*rec.new.bits), rec.old)
    except ValueError:
        tx.ended = True
        return False
    return True


def random_distributions(n_classes: int, count: int, seed: int) -> List[np.ndarray]:
    """A uniform distribution followed by ``count - 1`` random skewed ones (flat Dirichlet)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**32,)))
    out = [np.full(n_classes, 1.0 / n_classes)]
    out.extend(rng.dirichlet(np.ones(n_classes)) for _ in range(count - 1))
    return out


@dataclass
class AdaptiveLinkResult:
    bits_sent: np.ndarray
    bits_received: np.ndarray
    tx_allocations: List[BitAllocation]
    rx_allocations: List[BitAllocation]
    intervals: int
    payload_symbols: int

    @property
    def payload_intact(self) -> bool:
        return np.array_equal(self.bits_sent, self.bits_received)


def simulate_adaptive_link(
    cfg: ScenarioConfig,
    policy: UpdatePolicy,
    n_bits: int,
    capsule_mass: float,
    p_one: float = 0.5,
    M_T: Optional[float] = None,
) -> AdaptiveLinkResult:
    """Adaptive transmitter, physical channel and adaptive receiver end to end.

    Payload bits are i.i.d. with ``P(1) = p_one``; a skewed source makes some
    capsules drain first and triggers updates.
    """
    rng_bits, rng_flow, rng_proc, _ = streams(cfg.seed)
    timing = cfg.timing()
    geom, diff, flow = cfg.geometry, cfg.diffusion, cfg.flow_model
    expected = mass_ratio(geom, flow.mean, diff, timing.T_a)
    threshold = M_T if M_T is not None else 0.1 * cfg.M * expected

    bank = generate_odor_bank(cfg.allocation, cfg.quality, capsule_mass)
    vectors = np.array([o.vector.as_tuple() for o in bank.odors()])
    tx = AdaptiveTransmitter(bank, policy, cfg.M)
    bits = (rng_bits.random(n_bits) < p_one).astype(np.int64)

    schedule: List[int] = []
    tx_allocs = [tx.allocation]
    pos = 0

    def emit_update() -> bool:
        rec = tx.records[-1]
        ann = announce_update(rec.new, rec.old, policy)
        for slot in ann.schedule:
            schedule.append(-1 if slot is None else tx.release_announcement(slot, rec.old).id)
        tx_allocs.append(tx.allocation)
        return True

    while pos < n_bits:
        if tx.at_checkpoint():
            outcome = tx.decide()
            if outcome is UpdateOutcome.END:
                break
            if outcome is UpdateOutcome.UPDATED:
                emit_update()
        a = tx.allocation
        group = bits[pos:pos + a.K].tolist()
        group += [0] * (a.K - len(group))
        code = bits_to_class(group, a)
        if not tx.can_send(code):
            if tx.decide(forced=True) is UpdateOutcome.END:
                break
            emit_update()
            continue
        schedule.append(tx.release(code).id)
        pos += a.K
    sent_bits = bits[:min(pos, n_bits)]

    sched = np.asarray(schedule, dtype=np.int64)
    n = len(sched)
    u = np.asarray(flow.mean) + np.asarray(flow.sigma) * rng_flow.standard_normal((n, 3))
    zp = rng_proc.standard_normal((n, 3))
    chosen, greatest = absorb_and_filter(sched, u, timing.T_a, timing.T_s, cfg.M, geom, diff, len(vectors), flow, expected)

    rx = AdaptiveReceiver(cfg.allocation, policy)
    for k in range(n):
        if greatest[k] < threshold or chosen[k] < 0:
            rx.feed(None)
            continue
        v = vectors[chosen[k]]
        if cfg.pn > 0:
            v = np.clip(v + cfg.pn * zp[k], 0.0, TOP)
        rx.feed(ClassCode(*classify_array(v[None, :], rx.allocation)[0].tolist()))

    received: List[int] = []
    for code, alloc in rx.payload:
        received.extend(class_to_bits(code, alloc))
    received_bits = np.asarray(received[:len(sent_bits)], dtype=np.int64)
    return AdaptiveLinkResult(sent_bits, received_bits, tx_allocs, [cfg.allocation] + rx.updates, n, len(rx.payload))
