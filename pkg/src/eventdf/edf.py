"""Event describing function: steady-state delay and relative phase vs. input period."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np

from .dynamics import EventTrain, NodeConfig, ParameterError
from .integrator import IntegrationError, SimConfig, simulate_node
from .parallel import pmap


class LockClass(str, enum.Enum):
    LOCKED_11 = "Locked11"
    PHASE_SLIP = "PhaseSlip"
    HIGHER_ORDER = "HigherOrder"
    SUPPRESSED = "Suppressed"
    FAILED = "Failed"  # per-sample failure marker (integration error)


class NoLockedRegionError(ValueError):
    """No contiguous 1:1 locked region reaching the top of the period grid."""


@dataclass(frozen=True)
class SteadyStateProtocol:
    n_transient: int = 10
    n_window: int = 5
    delay_tol: float = 0.05
    flatness_tol: float = 0.02
    t_start: float = 10.0  # time of the first input event (ms)
    dt: float = 0.01
    spike_threshold: float = 0.0
    refractory_min: float = 2.0

    def __post_init__(self):
        if self.n_window < 2:
            raise ValueError("window too short to classify: need n_window >= 2")
        if self.n_transient < 0:
            raise ValueError("n_transient must be non-negative")

    @property
    def n_periods(self) -> int:
        return self.n_transient + self.n_window

    def sim(self, t_end: float) -> SimConfig:
        return SimConfig(self.dt, t_end, self.spike_threshold, self.refractory_min)


@dataclass(frozen=True)
class EdfSample:
    T: float
    delta: float
    phi: float
    lock: LockClass
    ratio: tuple[int, int] | None = None  # (N, M) for HigherOrder
    error: str | None = None


@dataclass(frozen=True)
class EdfCharacteristics:
    T_min: float | None
    T_r: float | None
    delta_inf: float | None

    @property
    def defined(self) -> bool:
        return self.delta_inf is not None


@dataclass
class EdfCurve:
    samples: list[EdfSample]
    characteristics: EdfCharacteristics
    config: NodeConfig | None = None
    protocol: SteadyStateProtocol = field(default_factory=SteadyStateProtocol)
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> np.ndarray:
        return np.array([s.T for s in self.samples])

    @property
    def phi(self) -> np.ndarray:
        return np.array([s.phi for s in self.samples])

    @property
    def delta(self) -> np.ndarray:
        return np.array([s.delta for s in self.samples])

    def locked(self) -> list[EdfSample]:
        return [s for s in self.samples if s.lock is LockClass.LOCKED_11]


@dataclass(frozen=True)
class LockMeasurement:
    """Per-period output bookkeeping over a measurement window."""

    lock: LockClass
    delays: np.ndarray  # one entry per window period if every count is 1
    counts: np.ndarray
    ratio: tuple[int, int] | None = None

    @property
    def delay(self) -> float:
        return float(np.mean(self.delays)) if self.lock is LockClass.LOCKED_11 else math.nan


def _offsets_match(a: np.ndarray, b: np.ndarray, tol: float) -> bool:
    return a.size == b.size and bool(np.all(np.abs(a - b) < tol))


def classify_window(input_times: Sequence[float], output_times: np.ndarray,
                    period: float, tol: float) -> LockMeasurement:
    """Classify the locking regime of outputs against a window of inputs.

    Each window period is ``[t_i, t_i + period)``. Locked11 needs exactly one
    output per period with delay spread below ``tol``. Otherwise, a per-period
    pattern repeating every ``M <= 4`` periods (counts and output offsets) is
    reported as HigherOrder ``N:M``; anything else is a PhaseSlip.
    """
    starts = np.asarray(input_times, dtype=float)
    out = np.asarray(output_times, dtype=float)
    offsets = []
    for a in starts:
        o = out[(out >= a) & (out < a + period)]
        offsets.append(o - a)
    counts = np.array([o.size for o in offsets])
    if counts.sum() == 0:
        return LockMeasurement(LockClass.SUPPRESSED, np.array([]), counts)
    if np.all(counts == 1):
        d = np.array([o[0] for o in offsets])
        if np.ptp(d) < tol:
            return LockMeasurement(LockClass.LOCKED_11, d, counts)
    n = len(offsets)
    for M in range(1, min(4, n - 1) + 1):
        if all(_offsets_match(offsets[i], offsets[i + M], tol) for i in range(n - M)):
            N = int(counts[:M].sum())
            if (N, M) == (1, 1):
                continue  # slow 1:1 drift, not a distinct mode
            g = math.gcd(N, M)
            ratio = (N // g, M // g)
            return LockMeasurement(LockClass.HIGHER_ORDER, np.array([]), counts,
                                   (N, M) if ratio == (1, 1) else ratio)
    return LockMeasurement(LockClass.PHASE_SLIP, np.array([]), counts)


def periodic_drive(config: NodeConfig, T: float, protocol: SteadyStateProtocol,
                   extra: Sequence[EventTrain] = ()) -> tuple[EventTrain, np.ndarray]:
    """Drive channel 0 with ``n_periods`` events of period ``T`` from rest.

    ``extra`` feeds channels 1.. (missing channels receive no events).
    Returns the nominal input train and the output event times.
    """
    if not T > 0:
        raise ParameterError("period must be positive")
    train = EventTrain.periodic(T, protocol.n_periods, start=protocol.t_start)
    inputs = [train, *extra]
    inputs += [EventTrain()] * (config.n_channels - len(inputs))
    t_end = protocol.t_start + protocol.n_periods * T
    out = simulate_node(config, inputs, protocol.sim(t_end))
    return train, out.times


def steady_state_delay(config: NodeConfig, T: float,
                       protocol: SteadyStateProtocol = SteadyStateProtocol()) -> EdfSample:
    """Steady-state event delay and lock class under periodic input of period ``T``."""
    train, out = periodic_drive(config, T, protocol)
    window = train.times[protocol.n_transient:]
    m = classify_window(window, out, T, protocol.delay_tol)
    if m.lock is LockClass.LOCKED_11:
        delta = m.delay
        return EdfSample(T, delta, delta / T, m.lock)
    return EdfSample(T, math.nan, math.nan, m.lock, m.ratio)


def isolated_delay(config: NodeConfig, protocol: SteadyStateProtocol = SteadyStateProtocol(),
                   t_event: float = 50.0, horizon: float = 300.0) -> float:
    """Delay of the single output triggered by one input event from rest.

    This is the large-period limit of the eDF and serves as its oracle.
    """
    inputs = [EventTrain((t_event,))] + [EventTrain()] * (config.n_channels - 1)
    out = simulate_node(config, inputs, protocol.sim(t_event + horizon)).times
    after = out[out >= t_event]
    if after.size != 1:
        raise ValueError(f"isolated event produced {after.size} output events")
    return float(after[0] - t_event)


def _sample_or_marker(config: NodeConfig, protocol: SteadyStateProtocol, T: float) -> EdfSample:
    try:
        return steady_state_delay(config, T, protocol)
    except IntegrationError as exc:
        return EdfSample(T, math.nan, math.nan, LockClass.FAILED, error=str(exc))


def extract_characteristics(samples: Sequence[EdfSample],
                            flatness_tol: float = 0.02) -> EdfCharacteristics:
    """``T_min``, ``T_r`` and ``delta_inf`` of a sampled eDF.

    ``delta_inf`` is the mean delay over the top decile of locked samples;
    ``T_r`` the smallest grid period from which every larger sample is locked
    and within ``flatness_tol`` of ``delta_inf``; ``T_min`` the lower edge of the
    contiguous locked region that reaches the top of the grid.
    """
    samples = sorted(samples, key=lambda s: s.T)
    if not samples or samples[-1].lock is not LockClass.LOCKED_11:
        raise NoLockedRegionError("top of the grid is not 1:1 locked")
    top = len(samples) - 1
    i_min = top
    while i_min > 0 and samples[i_min - 1].lock is LockClass.LOCKED_11:
        i_min -= 1
    locked = samples[i_min:]
    n_dec = max(1, math.ceil(0.1 * len(locked)))
    delta_inf = float(np.mean([s.delta for s in locked[-n_dec:]]))
    i_r = top
    if abs(samples[top].delta - delta_inf) >= flatness_tol:
        return EdfCharacteristics(samples[i_min].T, None, delta_inf)
    while i_r > i_min and abs(samples[i_r - 1].delta - delta_inf) < flatness_tol:
        i_r -= 1
    return EdfCharacteristics(samples[i_min].T, samples[i_r].T, delta_inf)


def sweep_edf(config: NodeConfig, T_grid: Sequence[float],
              protocol: SteadyStateProtocol = SteadyStateProtocol(),
              jobs: int | None = None) -> EdfCurve:
    """Sample the eDF on ``T_grid``; per-sample failures become markers."""
    grid = [float(T) for T in T_grid]
    if not grid:
        raise ValueError("empty period grid")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("period grid must be strictly increasing")
    if grid[0] <= 0:
        raise ParameterError("period must be positive")
    samples = pmap(partial(_sample_or_marker, config, protocol), grid, jobs)
    try:
        ch = extract_characteristics(samples, protocol.flatness_tol)
    except NoLockedRegionError:
        ch = EdfCharacteristics(None, None, None)
    return EdfCurve(samples, ch, config, protocol)


VARIABLE_PARAMETERS = ("tau_decay", "gbar_syn")


def sweep_edf_parameters(base: NodeConfig, vary: str, values: Sequence[float],
                         T_grid: Sequence[float],
                         protocol: SteadyStateProtocol = SteadyStateProtocol(),
                         jobs: int | None = None) -> list[tuple[float, EdfCurve]]:
    """One eDF per value of a nominal-synapse parameter."""
    vary = vary.replace("-", "_")
    if vary not in VARIABLE_PARAMETERS:
        raise ValueError(f"cannot vary {vary!r}; choose from {VARIABLE_PARAMETERS}")
    # validate every value before any simulation runs
    configs = [base.with_synapse(0, **{vary: float(v)}) for v in values]
    out = []
    for v, cfg in zip(values, configs):
        curve = sweep_edf(cfg, T_grid, protocol, jobs)
        curve.meta["varied"] = {vary: float(v)}
        out.append((float(v), curve))
    return out
