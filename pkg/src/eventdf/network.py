"""Ring networks of excitable nodes: simulation, period prediction and entrainment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np

from .dynamics import EventTrain, NodeConfig, NodeState, SynapseParams
from .edf import EdfCurve, LockClass, SteadyStateProtocol, isolated_delay
from .eprc import PrcCurve, PrcSample, default_perturbation, default_tp_grid
from .integrator import IntegrationError, SimConfig, simulate_network
from .parallel import pmap

LOCK_TOL = 0.05  # ms, spread of the final inter-event intervals
N_MEASURED = 5  # cycles in the measurement window
N_DISCARDED = 10  # transient cycles after the kickstart
BISECT_TOL = 0.01  # ms


# ---------------------------------------------------------------------------
# ring description


@dataclass(frozen=True)
class RingSpec:
    """N nodes in a ring; node ``i`` channel 0 listens to node ``i - 1``.

    The kickstart train drives an extra channel on ``kick_node`` that copies
    the node's coupling synapse.
    """

    nodes: tuple[NodeConfig, ...]
    kickstart: EventTrain
    kick_node: int = 0

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if len(self.nodes) < 2:
            raise ValueError("a ring needs at least two nodes")
        if any(cfg.n_channels < 1 for cfg in self.nodes):
            raise ValueError("every node needs a coupling synapse on channel 0")
        if len(self.kickstart) == 0:
            raise ValueError("kickstart train is empty")
        if not 0 <= self.kick_node < len(self.nodes):
            raise ValueError("kick_node out of range")

    @property
    def n(self) -> int:
        return len(self.nodes)

    def expected_period(self) -> float:
        """Sum of isolated-event delays, a rough scale for horizons and kicks."""
        proto = SteadyStateProtocol()
        return sum(isolated_delay(NodeConfig(c.neuron, c.synapses[:1]), proto) for c in self.nodes)


def homogeneous_ring(n: int, polarity: str = "inhibitory", node: NodeConfig | None = None,
                     kick_times: Sequence[float] | None = None, **syn_kw) -> RingSpec:
    """Ring of ``n`` identical default nodes.

    Default kickstart: two events, at 10 ms and one expected period later.
    """
    cfg = node or NodeConfig.single(polarity, **syn_kw)
    nodes = (cfg,) * n
    if kick_times is None:
        iso = isolated_delay(cfg, SteadyStateProtocol())
        kick_times = (10.0, 10.0 + n * iso)
    return RingSpec(nodes, EventTrain(tuple(kick_times)))


def default_ring_sim(spec: RingSpec, n_cycles: int = 20, dt: float = 0.01) -> SimConfig:
    T = spec.expected_period()
    t_end = spec.kickstart.times[-1] + n_cycles * T
    return SimConfig(dt=dt, t_end=t_end)


@dataclass(frozen=True)
class _Layout:
    """Channel layout of a ring with optional extra inputs on one node."""

    nodes: tuple[NodeConfig, ...]
    sources: tuple[tuple, ...]


def _layout(spec: RingSpec, kick: EventTrain, extra: dict[int, list[tuple[SynapseParams, EventTrain]]]
            ) -> _Layout:
    nodes, sources = [], []
    for i, cfg in enumerate(spec.nodes):
        syns = list(cfg.synapses[:1])
        srcs: list = [(i - 1) % spec.n]
        if i == spec.kick_node:
            syns.append(cfg.synapses[0])
            srcs.append(kick)
        for s, train in extra.get(i, []):
            syns.append(s)
            srcs.append(train)
        nodes.append(NodeConfig(cfg.neuron, tuple(syns)))
        sources.append(tuple(srcs))
    return _Layout(tuple(nodes), tuple(sources))


def _run(layout: _Layout, sim: SimConfig, initial=None):
    return simulate_network(layout.nodes, layout.sources, sim, initial)


# ---------------------------------------------------------------------------
# free-running ring


@dataclass
class RingResult:
    period: float | None
    per_node_delays: list[float] | None
    locked: bool
    spike_rasters: list[np.ndarray]
    n_cycles_measured: int = N_MEASURED
    diagnostic: str = ""

    def to_json(self) -> dict:
        return {"period": self.period, "locked": self.locked,
                "per_node_delays": self.per_node_delays,
                "n_cycles_measured": self.n_cycles_measured}


def _edge_delays(events: list[np.ndarray], n_cycles: int) -> list[float]:
    """Mean predecessor-event to successor-event delay per edge over the final cycles."""
    out = []
    n = len(events)
    for i in range(n):
        post = events[i][-n_cycles:]
        pre = events[(i - 1) % n]
        k = np.searchsorted(pre, post, side="left") - 1
        if np.any(k < 0):
            raise ValueError(f"node {i} fired before its predecessor")
        out.append(float(np.mean(post - pre[k])))
    return out


def measure_ring(events: list[np.ndarray], ref: int = 0, tol: float = LOCK_TOL,
                 t_end: float | None = None) -> RingResult:
    """Period and edge delays of a ring from its spike rasters."""
    ev = events[ref]
    need = N_DISCARDED + N_MEASURED + 1
    if ev.size < need:
        return RingResult(None, None, False, events,
                          diagnostic=f"rhythm not sustained: {ev.size} events on node {ref}")
    isi = np.diff(ev[-(N_MEASURED + 1):])
    T = float(np.mean(isi))
    if t_end is not None and t_end - ev[-1] > 2 * T:
        return RingResult(None, None, False, events, diagnostic="rhythm died out")
    if np.ptp(isi) >= tol:
        return RingResult(T, None, False, events,
                          diagnostic=f"inter-event spread {np.ptp(isi):.4f} ms")
    if any(e.size < N_MEASURED + 1 for e in events):
        return RingResult(T, None, False, events, diagnostic="silent node in ring")
    return RingResult(T, _edge_delays(events, N_MEASURED), True, events)


def simulate_ring(spec: RingSpec, sim: SimConfig | None = None, ref: int = 0) -> RingResult:
    """Co-integrate the ring and measure its steady rhythm on node ``ref``."""
    sim = sim or default_ring_sim(spec)
    out = _run(_layout(spec, spec.kickstart, {}), sim)
    return measure_ring(out.events, ref, t_end=sim.t_end)


# ---------------------------------------------------------------------------
# period prediction


@dataclass(frozen=True)
class PredictionResult:
    T_star: float | None
    residual: float | None
    unique: bool
    diagnostic: str = ""

    def to_json(self) -> dict:
        return {"t_star": self.T_star, "residual": self.residual, "unique": self.unique}


def _locked_span(curve: EdfCurve) -> tuple[np.ndarray, np.ndarray]:
    """Grid and phase over the contiguous locked region reaching the top of the grid."""
    samples = sorted(curve.samples, key=lambda s: s.T)
    i = len(samples)
    while i > 0 and samples[i - 1].lock is LockClass.LOCKED_11:
        i -= 1
    locked = samples[i:]
    return np.array([s.T for s in locked]), np.array([s.phi for s in locked])


def predict_ring_period(curves: Sequence[EdfCurve]) -> PredictionResult:
    """Solve ``sum_i phi_i(T) = 1`` over the common locked range of the curves."""
    if not curves:
        raise ValueError("no eDF curves given")
    spans = [_locked_span(c) for c in curves]
    if any(T.size == 0 for T, _ in spans):
        raise ValueError("a curve has no locked region")
    lo = max(T[0] for T, _ in spans)
    hi = min(T[-1] for T, _ in spans)
    if not lo < hi:
        raise ValueError("curves have no common locked period range")
    grid = np.unique(np.concatenate([T[(T >= lo) & (T <= hi)] for T, _ in spans]))

    def S(T):
        return sum(float(np.interp(T, Tc, pc)) for Tc, pc in spans)

    s = np.array([S(T) for T in grid]) - 1.0
    steps = np.diff(s)
    unique = bool(np.all(steps > 0) or np.all(steps < 0))
    for k in range(grid.size):
        if s[k] == 0.0:
            return PredictionResult(float(grid[k]), 0.0, unique)
        if k + 1 < grid.size and np.sign(s[k]) != np.sign(s[k + 1]) and s[k + 1] != 0.0:
            a, b = float(grid[k]), float(grid[k + 1])
            fa = s[k]
            while b - a > BISECT_TOL:
                m = 0.5 * (a + b)
                fm = S(m) - 1.0
                if fm == 0.0:
                    a = b = m
                    break
                if np.sign(fm) == np.sign(fa):
                    a, fa = m, fm
                else:
                    b = m
            T = 0.5 * (a + b)
            return PredictionResult(T, abs(S(T) - 1.0), unique)
    return PredictionResult(None, None, unique,
                            f"sum of phases stays in [{s.min() + 1:.4f}, {s.max() + 1:.4f}]"
                            f" over T in [{lo:g}, {hi:g}] ms; no ring period")


# ---------------------------------------------------------------------------
# forcing and in-situ phase response


@dataclass(frozen=True)
class EntrainmentReport:
    locked: bool
    measured_lag: float | None
    drift_rate: float | None
    forcing_period: float
    lags: tuple[float, ...] = ()

    def to_json(self) -> dict:
        return {"locked": self.locked, "measured_lag": self.measured_lag,
                "drift_rate": self.drift_rate, "forcing_period": self.forcing_period}


def forcing_lags(forcing_times: np.ndarray, input_times: np.ndarray,
                 tp_lo: float = -20.0) -> np.ndarray:
    """Lag ``t_p = F - I`` of each forcing event to the latest input with ``F - I >= tp_lo``."""
    k = np.searchsorted(input_times, forcing_times - tp_lo, side="right") - 1
    ok = k >= 0
    return (forcing_times[ok] - input_times[k[ok]])


def forcing_schedule(spec: RingSpec, T_f: float, free: RingResult | None = None,
                     initial_lag: float | None = None, n_cycles: int = 40,
                     node: int = 0) -> tuple[EventTrain, SimConfig]:
    """Periodic forcing train and horizon for :func:`drive_ring`.

    The first forcing event lands ``initial_lag`` ms after the driven node's
    input event once the kickstart transient is over. The default lag sits
    just past the node's own output, where the ePRC is flat, so the forced
    lag starts from a neutral phase.
    """
    free = free or simulate_ring(spec)
    if not free.locked:
        raise ValueError(f"ring is not locked: {free.diagnostic}")
    if not 0.8 * free.period <= T_f <= 1.2 * free.period:
        raise ValueError("forcing period must lie within 20% of the ring period")
    if initial_lag is None:
        initial_lag = free.per_node_delays[node] + 5.0
    inputs = free.spike_rasters[(node - 1) % spec.n]
    F0 = float(inputs[N_DISCARDED - 1]) + initial_lag
    train = EventTrain.periodic(T_f, n_cycles, start=F0)
    return train, SimConfig(t_end=train.times[-1] + 5.0)


def drive_ring(spec: RingSpec, forcing: EventTrain, sim: SimConfig,
               forcing_synapse: SynapseParams | None = None, node: int = 0,
               tp_lo: float = -20.0, tol: float = LOCK_TOL) -> EntrainmentReport:
    """Force one ring node with a periodic train and test for phase locking.

    The lag of each forcing event is measured against the driven node's
    input events (its predecessor's output) in the ePRC ``t_p`` coordinate.
    """
    if len(forcing) < N_MEASURED + 1:
        raise ValueError("forcing train too short for the measurement window")
    syn = forcing_synapse or default_perturbation("excitatory")
    out = _run(_layout(spec, spec.kickstart, {node: [(syn, forcing)]}), sim)
    inputs = out.events[(node - 1) % spec.n]
    F = np.asarray(forcing.times)
    F = F[F <= (inputs[-1] if inputs.size else -np.inf) + forcing.times[1] - forcing.times[0]]
    if inputs.size < N_DISCARDED + N_MEASURED + 1:
        raise IntegrationError("ring failed to oscillate under forcing", sim.t_end)
    T_f = float(np.mean(np.diff(forcing.times)))
    lags = forcing_lags(F, inputs, tp_lo)[-N_MEASURED:]
    if lags.size == N_MEASURED and np.ptp(lags) < tol:
        return EntrainmentReport(True, float(np.mean(lags)), None, T_f, tuple(lags))
    # relative drift: forcing period minus the ring's mean inter-event interval
    F_last = F[-N_MEASURED - 1:]
    span = inputs[(inputs >= F_last[0] - T_f) & (inputs <= F_last[-1])]
    ring_T = float(np.mean(np.diff(span))) if span.size > 1 else math.nan
    return EntrainmentReport(False, None, T_f - ring_T, T_f, tuple(lags))


@dataclass(frozen=True)
class RingSnapshot:
    """Steady ring state shortly before a reference input event of the driven node.

    ``reference`` holds the unperturbed continuation from the snapshot; times
    are relative to the snapshot time.
    """

    states: tuple[NodeState, ...]
    t_ref: float
    period: float
    reference: tuple[np.ndarray, ...]


def ring_snapshot(spec: RingSpec, node: int = 0, lead: float = 25.0,
                  sim: SimConfig | None = None, horizon: float | None = None) -> RingSnapshot:
    """Snapshot of the locked ring ``lead`` ms before a late input event of ``node``.

    The snapshot time sits on the integration grid and away from any event
    pulse, so restarting from it needs no event history.
    """
    sim = sim or default_ring_sim(spec)
    layout = _perturbation_layout(spec, node, default_perturbation("excitatory"), EventTrain())
    free = _run(_layout(spec, spec.kickstart, {node: [(default_perturbation(), EventTrain())]}), sim)
    res = measure_ring(free.events, node, t_end=sim.t_end)
    if not res.locked:
        raise ValueError(f"ring is not locked: {res.diagnostic}")
    inputs = free.events[(node - 1) % spec.n]
    I_ref = float(inputs[-3])
    all_ev = np.concatenate(free.events)
    k_s = math.floor((I_ref - lead) / sim.dt)
    while np.any((all_ev > k_s * sim.dt - 3.0) & (all_ev <= k_s * sim.dt)):
        k_s -= max(1, round(1.0 / sim.dt))
    t_s = k_s * sim.dt
    pre = _run(_layout(spec, spec.kickstart, {node: [(default_perturbation(), EventTrain())]}),
               _with_end(sim, t_s))
    t_ref = I_ref - t_s
    horizon = horizon or t_ref + 3.0 * res.period
    cont = _run(layout, _with_end(sim, horizon), pre.final_states)
    return RingSnapshot(tuple(pre.final_states), t_ref, res.period, tuple(cont.events))


def _with_end(sim: SimConfig, t_end: float) -> SimConfig:
    return SimConfig(sim.dt, t_end, sim.spike_threshold, sim.refractory_min)


def _perturbation_layout(spec: RingSpec, node: int, perturbation: SynapseParams,
                         train: EventTrain) -> _Layout:
    return _layout(spec, EventTrain(), {node: [(perturbation, train)]})


def _ring_shift(spec: RingSpec, snap: RingSnapshot, perturbation: SynapseParams,
                node: int, sim: SimConfig, t_p: float) -> PrcSample:
    """Permanent phase shift of the ring caused by one perturbation at ``t_p``.

    The shift is read off the driven node's first input event that follows the
    perturbed cycle by one full loop.
    """
    a = snap.reference[(node - 1) % spec.n]
    m = int(np.searchsorted(a, snap.t_ref + max(t_p, 0.0) + snap.period + 10.0))
    if m >= a.size:
        raise ValueError("snapshot continuation too short for this t_p")
    t_cut = a[m] + 0.25 * snap.period
    layout = _perturbation_layout(spec, node, perturbation, EventTrain((snap.t_ref + t_p,)))
    try:
        pert = _run(layout, _with_end(sim, t_cut), snap.states)
    except IntegrationError as exc:
        return PrcSample(t_p, math.nan, False, f"IntegrationError: {exc}")
    b = pert.events[(node - 1) % spec.n]
    if b.size <= m:
        return PrcSample(t_p, math.nan, False, LockClass.SUPPRESSED.value)
    shift = float(b[m] - a[m])
    for r, q in zip(snap.reference, pert.events):
        if np.count_nonzero(r <= a[m]) != np.count_nonzero(q <= b[m]):
            return PrcSample(t_p, math.nan, False, LockClass.PHASE_SLIP.value)
    return PrcSample(t_p, shift)


def ring_eprc(spec: RingSpec, perturbation: SynapseParams | None = None,
              tp_grid: Sequence[float] | None = None, node: int = 0,
              sim: SimConfig | None = None, jobs: int | None = None) -> PrcCurve:
    """ePRC of a free-running ring, measured in situ on ``node``.

    Each point restarts the ring from one steady snapshot, applies a single
    perturbation ``t_p`` ms after the node's input event, and records the
    resulting permanent shift of the rhythm (positive = delay). This is the
    quantity the forced lag map ``t_p <- t_p + delta_T - delta(t_p)`` needs.
    """
    perturbation = perturbation or default_perturbation("excitatory")
    sim = sim or default_ring_sim(spec)
    grid = None if tp_grid is None else tuple(float(t) for t in tp_grid)
    lead = 25.0 if grid is None else max(0.0, -grid[0]) + 5.0
    T_est = spec.expected_period()
    t_hi = T_est if grid is None else max(grid[-1], 0.0)
    snap = ring_snapshot(spec, node, lead, sim, horizon=lead + t_hi + 3.0 * T_est)
    if grid is None:
        grid = tuple(default_tp_grid(snap.period))
    samples = pmap(partial(_ring_shift, spec, snap, perturbation, node, sim), grid, jobs)
    curve = PrcCurve(None, samples, math.nan)
    curve.meta.update(T_net=snap.period, node=node, mode="FullOscillation")
    return curve
