"""Event phase response curves around a nominal periodic event oscillation.

Sign convention: ``t_p = 0`` is the nominal input event and a positive shift
``delta`` is a delay of the output event.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Sequence

import numpy as np

from .dynamics import EventTrain, NodeConfig, SynapseParams
from .edf import (LockClass, SteadyStateProtocol, classify_window, isolated_delay,
                  periodic_drive)
from .integrator import IntegrationError, simulate_node
from .parallel import pmap

# isolated-event validity: steady-state and single-event delays must agree
SINGLE_EVENT_TOL = 0.02


# A weak, fast perturbation synapse: it stays subthreshold from rest (firing
# needs twice the conductance) and decays before the rebound, so it probes
# recovery rather than overlapping it. Five decay times also outlast the
# membrane's own subthreshold memory of the kick (about 13 ms).
PERTURBATION_GBAR = 0.04
PERTURBATION_TAU_DECAY = 2.5


def default_perturbation(polarity: str = "excitatory", **kw) -> SynapseParams:
    kw.setdefault("gbar_syn", PERTURBATION_GBAR)
    kw.setdefault("tau_decay", PERTURBATION_TAU_DECAY)
    return SynapseParams.of_polarity(polarity, **kw)


class PrcMode(str, enum.Enum):
    SINGLE_EVENT = "SingleEvent"
    FULL_OSCILLATION = "FullOscillation"


class Stability(str, enum.Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"
    MARGINAL = "Marginal"


class NotLockedError(RuntimeError):
    """The node is not 1:1 locked at the nominal period; the ePRC is undefined."""

    def __init__(self, message: str, lock: LockClass):
        super().__init__(message)
        self.lock = lock


def default_tp_grid(T_N: float, lo: float = -20.0, step: float = 0.25) -> np.ndarray:
    n = int(math.floor((T_N - lo) / step + 1e-9))
    return lo + step * np.arange(n + 1)


@dataclass(frozen=True)
class PrcProtocol:
    T_N: float
    perturbation: SynapseParams = field(default_factory=lambda: default_perturbation("excitatory"))
    mode: PrcMode = PrcMode.FULL_OSCILLATION
    tp_grid: tuple[float, ...] | None = None
    steady: SteadyStateProtocol = field(default_factory=SteadyStateProtocol)

    def __post_init__(self):
        if not self.T_N > 0:
            raise ValueError("period must be positive")
        object.__setattr__(self, "mode", PrcMode(self.mode))
        grid = (default_tp_grid(self.T_N) if self.tp_grid is None
                else np.asarray(self.tp_grid, dtype=float))
        if grid.size == 0:
            raise ValueError("empty t_p grid")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("t_p grid must be strictly increasing")
        object.__setattr__(self, "tp_grid", tuple(float(t) for t in grid))
        # perturbation events may precede the first nominal event
        lead = max(0.0, -grid[0]) + 10.0
        if self.steady.t_start < lead:
            object.__setattr__(self, "steady", replace(self.steady, t_start=lead))

    @property
    def polarity(self) -> str:
        return self.perturbation.polarity


@dataclass(frozen=True)
class PrcSample:
    t_p: float
    delta_shift: float
    valid: bool = True
    fail_class: str | None = None


@dataclass
class PrcCurve:
    protocol: PrcProtocol | None
    samples: list[PrcSample]
    nominal_delay: float = math.nan
    meta: dict = field(default_factory=dict)

    @property
    def t_p(self) -> np.ndarray:
        return np.array([s.t_p for s in self.samples])

    @property
    def delta(self) -> np.ndarray:
        return np.array([s.delta_shift for s in self.samples])

    @property
    def valid(self) -> np.ndarray:
        return np.array([s.valid for s in self.samples], dtype=bool)

    def shifted(self, c: float) -> "PrcCurve":
        return PrcCurve(self.protocol,
                        [replace(s, delta_shift=s.delta_shift + c) for s in self.samples],
                        self.nominal_delay, dict(self.meta))


@dataclass(frozen=True)
class Equilibrium:
    t_p_star: float
    slope: float
    stability: Stability
    boundary: bool = False


@dataclass(frozen=True)
class NominalOscillation:
    T_N: float
    delay: float  # nominal output time relative to the input event
    mode: PrcMode
    output_times: np.ndarray
    input_times: np.ndarray


def _perturbed_config(config: NodeConfig, perturbation: SynapseParams) -> NodeConfig:
    return NodeConfig(config.neuron, (config.synapses[0], perturbation))


def nominal_oscillation(config: NodeConfig, T_N: float,
                        mode: PrcMode | str = PrcMode.FULL_OSCILLATION,
                        steady: SteadyStateProtocol = SteadyStateProtocol()) -> NominalOscillation:
    """Steady-state nominal output timing of a node driven at period ``T_N``.

    Raises :class:`NotLockedError` if the node is not 1:1 locked at ``T_N``, and
    (SingleEvent mode) if events at ``T_N`` are not yet isolated, i.e. the
    periodic delay differs from the single-event delay.
    """
    mode = PrcMode(mode)
    nominal = NodeConfig(config.neuron, (config.synapses[0],))
    train, out = periodic_drive(nominal, T_N, steady)
    window = train.times[steady.n_transient:]
    m = classify_window(window, out, T_N, steady.delay_tol)
    if m.lock is not LockClass.LOCKED_11:
        raise NotLockedError(
            f"node is not 1:1 locked at T_N={T_N:g} ms (lock class {m.lock.value})", m.lock)
    delay = m.delay
    if mode is PrcMode.SINGLE_EVENT:
        iso = isolated_delay(nominal, steady)
        if abs(iso - delay) > SINGLE_EVENT_TOL:
            raise NotLockedError(
                f"T_N={T_N:g} ms is below the resting period: periodic delay {delay:.4f} "
                f"differs from isolated delay {iso:.4f}", m.lock)
        delay = iso
    return NominalOscillation(T_N, delay, mode, out, np.asarray(train.times))


def _single_event_shift(config: NodeConfig, protocol: PrcProtocol, nominal_delay: float,
                        t_p: float) -> PrcSample:
    steady = protocol.steady
    t0 = steady.t_start
    cfg = _perturbed_config(config, protocol.perturbation)
    horizon = t0 + max(protocol.T_N, nominal_delay + abs(t_p)) + 50.0
    out = simulate_node(cfg, [EventTrain((t0,)), EventTrain((t0 + t_p,))],
                        steady.sim(horizon)).times
    after = out[out >= t0]
    if after.size != 1:
        return PrcSample(t_p, math.nan, False,
                         LockClass.SUPPRESSED.value if after.size == 0 else LockClass.PHASE_SLIP.value)
    return PrcSample(t_p, float(after[0] - t0) - nominal_delay)


def _periodic_shift(config: NodeConfig, protocol: PrcProtocol, nominal_delay: float,
                    t_p: float) -> PrcSample:
    steady = protocol.steady
    T = protocol.T_N
    cfg = _perturbed_config(config, protocol.perturbation)
    # one extra event so that the last window period is perturbed when t_p < 0
    pert = EventTrain.periodic(T, steady.n_periods + 1, start=steady.t_start + t_p)
    train, out = periodic_drive(cfg, T, steady, extra=[pert])
    m = classify_window(train.times[steady.n_transient:], out, T, steady.delay_tol)
    if m.lock is not LockClass.LOCKED_11:
        return PrcSample(t_p, math.nan, False, m.lock.value)
    return PrcSample(t_p, m.delay - nominal_delay)


def _point(config, protocol, nominal_delay, t_p):
    try:
        if protocol.mode is PrcMode.SINGLE_EVENT:
            return _single_event_shift(config, protocol, nominal_delay, t_p)
        return _periodic_shift(config, protocol, nominal_delay, t_p)
    except IntegrationError as exc:
        return PrcSample(t_p, math.nan, False, f"IntegrationError: {exc}")


def eprc_point(config: NodeConfig, protocol: PrcProtocol, t_p: float,
               nominal: NominalOscillation | None = None) -> PrcSample:
    """Output shift caused by a perturbation event ``t_p`` ms after each nominal input."""
    if nominal is None:
        nominal = nominal_oscillation(config, protocol.T_N, protocol.mode, protocol.steady)
    return _point(config, protocol, nominal.delay, float(t_p))


def sweep_eprc(config: NodeConfig, protocol: PrcProtocol,
               jobs: int | None = None) -> PrcCurve:
    """ePRC over the protocol's ``t_p`` grid; invalid points carry their failure class."""
    nominal = nominal_oscillation(config, protocol.T_N, protocol.mode, protocol.steady)
    samples = pmap(partial(_point, config, protocol, nominal.delay), protocol.tp_grid, jobs)
    return PrcCurve(protocol, samples, nominal.delay)


# ---------------------------------------------------------------------------
# equilibria

ZERO_BAND = 0.01  # |delta - delta_T| below this counts as zero (ms)


def _stability(slope: float) -> Stability:
    # fixed-point map t_p <- t_p + delta_T - delta(t_p) is contracting iff |1 - slope| < 1
    if 0.0 < slope < 2.0:
        return Stability.STABLE
    if slope < 0.0:
        return Stability.UNSTABLE
    return Stability.MARGINAL


def find_equilibria(curve: PrcCurve, delta_T: float = 0.0,
                    zero_band: float = ZERO_BAND) -> list[Equilibrium]:
    """Phase-locking equilibria of the forced map ``t_p <- t_p + delta_T - delta(t_p)``.

    Equilibria are the sign changes of ``g = delta - delta_T`` over valid samples,
    placed by linear interpolation; the slope is the central-difference gradient
    of ``delta`` interpolated at the crossing. Samples with ``|g| < zero_band``
    count as zero so that measurement noise in flat stretches cannot create
    crossings. With ``delta_T == 0`` a flat zero stretch reaching the end of the
    grid is also reported, as a boundary equilibrium.
    """
    t = curve.t_p[curve.valid]
    d = curve.delta[curve.valid]
    if t.size < 2:
        raise ValueError("need at least two valid ePRC samples")
    g = d - delta_T
    slope_at = np.gradient(d, t)
    sgn = np.where(np.abs(g) < zero_band, 0, np.sign(g)).astype(int)
    nz = np.flatnonzero(sgn)
    out: list[Equilibrium] = []
    for a, b in zip(nz, nz[1:]):
        if sgn[a] == sgn[b]:
            continue
        # first raw sign change between the two decisive samples
        j = next((k for k in range(a, b) if np.sign(g[k]) != np.sign(g[k + 1])), a)
        w = 0.0 if g[j + 1] == g[j] else g[j] / (g[j] - g[j + 1])
        w = min(max(w, 0.0), 1.0)
        x = t[j] + w * (t[j + 1] - t[j])
        slope = float(slope_at[j] + w * (slope_at[j + 1] - slope_at[j]))
        out.append(Equilibrium(float(x), slope, _stability(slope)))
    if delta_T == 0 and sgn[-1] == 0 and nz.size:
        out.append(Equilibrium(float(t[nz[-1] + 1]), 0.0, Stability.MARGINAL, boundary=True))
    return out
