"""Fixed-step RK4 integration of coupled nodes with spike-event detection.

A single compiled kernel co-integrates ``N`` nodes. Each synapse channel is
driven either by an external :class:`EventTrain` or online by the detected
output events of another node. Presynaptic pulses are piecewise constant, so
every grid step is split at the pulse edges that fall inside it and RK4 is
applied to each smooth piece. The output grid and the event detector stay on
the fixed ``dt`` grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numba
import numpy as np

from .dynamics import (EventTrain, NodeConfig, NodeState, _node_rhs, _sigmoid,
                       resting_state)

# status codes returned by the kernel
_OK = 0
_NONFINITE = 1
_GATE_RANGE = 2

_CLAMP_SLACK = 1e-9


class IntegrationError(RuntimeError):
    """Numerical failure (NaN/Inf or gate out of range) during integration."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at t={time:.6g} ms")
        self.time = time


class ConvergenceError(RuntimeError):
    """Event counts differ between the dt and dt/2 runs."""


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.01
    t_end: float = 200.0
    spike_threshold: float = 0.0
    refractory_min: float = 2.0
    record_trace: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end > 0:
            raise ValueError("empty horizon: t_end must be positive")
        if not self.refractory_min > 0:
            raise ValueError("refractory_min must be positive")


@dataclass
class Trace:
    """State variables sampled on the integration grid."""

    times: np.ndarray
    values: np.ndarray  # (n_points, n_state)
    columns: list[str]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", *self.columns])
            for t, row in zip(self.times, self.values):
                w.writerow([f"{t:.9g}", *(f"{v:.9g}" for v in row)])


@dataclass
class SimOutput:
    output_events: EventTrain
    trace: Trace | None = None
    flags: dict = field(default_factory=dict)
    final_state: NodeState | None = None

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.output_events.times)


@dataclass
class NetworkOutput:
    events: list[np.ndarray]
    final_states: list[NodeState]
    trace: Trace | None = None


# A channel source is either an external event train or the index of the
# presynaptic node inside the same simulation.
Source = Union[EventTrain, int]


@numba.njit(cache=True)
def _rk4_piece(x, h, neuron, syn, gate, node_off, chan_off, k1, k2, k3, k4, tmp):
    n_nodes = neuron.shape[0]
    for i in range(n_nodes):
        a = node_off[i]
        b = node_off[i + 1]
        c0 = chan_off[i]
        c1 = chan_off[i + 1]
        _node_rhs(x[a:b], neuron[i], syn[c0:c1], gate[c0:c1], k1[a:b])
    for j in range(x.shape[0]):
        tmp[j] = x[j] + 0.5 * h * k1[j]
    for i in range(n_nodes):
        a = node_off[i]
        b = node_off[i + 1]
        c0 = chan_off[i]
        c1 = chan_off[i + 1]
        _node_rhs(tmp[a:b], neuron[i], syn[c0:c1], gate[c0:c1], k2[a:b])
    for j in range(x.shape[0]):
        tmp[j] = x[j] + 0.5 * h * k2[j]
    for i in range(n_nodes):
        a = node_off[i]
        b = node_off[i + 1]
        c0 = chan_off[i]
        c1 = chan_off[i + 1]
        _node_rhs(tmp[a:b], neuron[i], syn[c0:c1], gate[c0:c1], k3[a:b])
    for j in range(x.shape[0]):
        tmp[j] = x[j] + h * k3[j]
    for i in range(n_nodes):
        a = node_off[i]
        b = node_off[i + 1]
        c0 = chan_off[i]
        c1 = chan_off[i + 1]
        _node_rhs(tmp[a:b], neuron[i], syn[c0:c1], gate[c0:c1], k4[a:b])
    for j in range(x.shape[0]):
        x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])


@numba.njit(cache=True)
def _integrate(x, neuron, syn, node_off, chan_off, chan_src, pulse,
               ext_times, ext_off, dt, n_steps, thr, refr, record, max_events):
    n_nodes = neuron.shape[0]
    n_chan = syn.shape[0]
    n_state = x.shape[0]

    events = np.full((n_nodes, max_events), np.nan)
    counts = np.zeros(n_nodes, dtype=np.int64)
    if record:
        trace = np.empty((n_steps + 1, n_state))
        trace[0, :] = x
    else:
        trace = np.empty((0, n_state))

    gate = np.empty(n_chan)
    ptr = np.empty(n_chan, dtype=np.int64)
    for c in range(n_chan):
        ptr[c] = ext_off[c] - 1  # index of last started external event
    k1 = np.empty(n_state)
    k2 = np.empty(n_state)
    k3 = np.empty(n_state)
    k4 = np.empty(n_state)
    tmp = np.empty(n_state)
    v_prev = np.empty(n_nodes)

    for k in range(n_steps):
        t0 = k * dt
        t1 = (k + 1) * dt
        for i in range(n_nodes):
            v_prev[i] = x[node_off[i]]
        tau = t0
        while True:
            edge = t1
            for c in range(n_chan):
                width = pulse[c, 0]
                active = False
                src = chan_src[c]
                if src < 0:
                    end = ext_off[c + 1]
                    while ptr[c] + 1 < end and ext_times[ptr[c] + 1] <= tau:
                        ptr[c] += 1
                    if ptr[c] >= ext_off[c]:
                        e_end = ext_times[ptr[c]] + width
                        if tau < e_end:
                            active = True
                            if e_end < edge:
                                edge = e_end
                    if not active and ptr[c] + 1 < end:
                        nxt = ext_times[ptr[c] + 1]
                        if nxt < edge:
                            edge = nxt
                else:
                    cnt = counts[src]
                    if cnt > 0:
                        # internal pulse: [t_e + dt, t_e + dt + width)
                        e_start = events[src, cnt - 1] + dt
                        e_end = e_start + width
                        if tau < e_start:
                            if e_start < edge:
                                edge = e_start
                        elif tau < e_end:
                            active = True
                            if e_end < edge:
                                edge = e_end
                vp = pulse[c, 1] if active else pulse[c, 2]
                gate[c] = _sigmoid(vp, syn[c, 4], syn[c, 5])
            _rk4_piece(x, edge - tau, neuron, syn, gate, node_off, chan_off,
                       k1, k2, k3, k4, tmp)
            tau = edge
            if tau >= t1:
                break

        for i in range(n_nodes):
            a = node_off[i]
            b = node_off[i + 1]
            for j in range(a, b):
                if not math.isfinite(x[j]):
                    return events, counts, trace, _NONFINITE, t1, k + 1
            for j in range(a + 1, b):
                if x[j] < 0.0:
                    if x[j] < -_CLAMP_SLACK:
                        return events, counts, trace, _GATE_RANGE, t1, k + 1
                    x[j] = 0.0
                elif x[j] > 1.0:
                    if x[j] > 1.0 + _CLAMP_SLACK:
                        return events, counts, trace, _GATE_RANGE, t1, k + 1
                    x[j] = 1.0
            v0 = v_prev[i]
            v1 = x[a]
            if v0 < thr <= v1:
                tc = t0 + dt * (thr - v0) / (v1 - v0)
                n = counts[i]
                if n == 0 or tc - events[i, n - 1] >= refr:
                    if n < max_events:
                        events[i, n] = tc
                        counts[i] = n + 1
        if record:
            trace[k + 1, :] = x
    return events, counts, trace, _OK, n_steps * dt, n_steps


def _state_columns(n_channels: int) -> list[str]:
    return ["V", "m", "h", "n"] + [f"h_syn_{j}" for j in range(n_channels)]


def simulate_network(nodes: Sequence[NodeConfig], sources: Sequence[Sequence[Source]],
                     sim: SimConfig,
                     initial_states: Sequence[NodeState] | None = None) -> NetworkOutput:
    """Co-integrate several nodes on one fixed grid.

    ``sources[i][j]`` drives channel ``j`` of node ``i``: an :class:`EventTrain`
    for external input, or an ``int`` naming the presynaptic node whose detected
    events are turned into square pulses online. Internal events detected in
    step ``k`` act from step ``k+1`` onward: their pulse starts exactly
    ``dt`` after the interpolated event time.
    """
    n_nodes = len(nodes)
    if len(sources) != n_nodes:
        raise ValueError("one source list per node required")
    neuron = np.array([cfg.neuron.as_array() for cfg in nodes])
    syn_rows, src, pulse, ext, ext_off = [], [], [], [], [0]
    node_off, chan_off = [0], [0]
    default_pulse = EventTrain()
    for i, (cfg, srcs) in enumerate(zip(nodes, sources)):
        if len(srcs) != cfg.n_channels:
            raise ValueError(
                f"node {i}: {len(srcs)} inputs for {cfg.n_channels} synapse channels")
        for s_params, s in zip(cfg.synapses, srcs):
            syn_rows.append(s_params.as_array())
            if isinstance(s, EventTrain):
                src.append(-1)
                pulse.append((s.pulse_width, s.pulse_amplitude, s.baseline))
                ext.extend(s.times)
            else:
                if not 0 <= int(s) < n_nodes:
                    raise ValueError(f"node {i}: source index {s} out of range")
                src.append(int(s))
                pulse.append((default_pulse.pulse_width, default_pulse.pulse_amplitude,
                              default_pulse.baseline))
            ext_off.append(len(ext))
        chan_off.append(chan_off[-1] + cfg.n_channels)
        node_off.append(node_off[-1] + 4 + cfg.n_channels)

    if initial_states is None:
        initial_states = [resting_state(cfg.neuron, cfg.n_channels) for cfg in nodes]
    x = np.concatenate([s.as_array() for s in initial_states]).astype(float)
    if x.shape[0] != node_off[-1]:
        raise ValueError("initial state size does not match node configuration")
    for i, s in enumerate(initial_states):
        if len(s.syn) != nodes[i].n_channels:
            raise ValueError(f"node {i}: initial synapse state count mismatch")

    n_steps = int(round(sim.t_end / sim.dt))
    if n_steps < 1:
        raise ValueError("empty horizon")
    max_events = int(sim.t_end / sim.refractory_min) + 2
    events, counts, trace, status, t_fail, done = _integrate(
        x, neuron, np.array(syn_rows).reshape(-1, 6),
        np.array(node_off, dtype=np.int64), np.array(chan_off, dtype=np.int64),
        np.array(src, dtype=np.int64), np.array(pulse, dtype=float).reshape(-1, 3),
        np.array(ext, dtype=float), np.array(ext_off, dtype=np.int64),
        float(sim.dt), n_steps, float(sim.spike_threshold), float(sim.refractory_min),
        bool(sim.record_trace), max_events)
    if status == _NONFINITE:
        raise IntegrationError("non-finite state", t_fail)
    if status == _GATE_RANGE:
        raise IntegrationError("gating variable left [0, 1]", t_fail)

    finals = [NodeState.from_array(x[node_off[i]:node_off[i + 1]]) for i in range(n_nodes)]
    out_events = [events[i, :counts[i]].copy() for i in range(n_nodes)]
    tr = None
    if sim.record_trace:
        cols = []
        for i, cfg in enumerate(nodes):
            names = _state_columns(cfg.n_channels)
            cols += names if n_nodes == 1 else [f"{c}@{i}" for c in names]
        tr = Trace(np.arange(n_steps + 1) * sim.dt, trace, cols)
    return NetworkOutput(out_events, finals, tr)


def simulate_node(config: NodeConfig, inputs: Sequence[EventTrain], sim: SimConfig,
                  initial_state: NodeState | None = None) -> SimOutput:
    """Integrate one node driven by one event train per synapse channel."""
    if len(inputs) != config.n_channels:
        raise ValueError(
            f"{len(inputs)} input trains for {config.n_channels} synapse channels")
    out = simulate_network([config], [list(inputs)], sim,
                           None if initial_state is None else [initial_state])
    ev = out.events[0]
    flags = {"silent": ev.size == 0}
    return SimOutput(EventTrain(tuple(ev)), out.trace, flags, out.final_states[0])


def convergence_check(config: NodeConfig, inputs: Sequence[EventTrain],
                      sim: SimConfig) -> float:
    """Largest event-time deviation between runs at ``dt`` and ``dt/2``.

    Raises :class:`ConvergenceError` if the two resolutions disagree on the
    number of output events, or if only the coarse run fails numerically.
    """
    fine_sim = SimConfig(sim.dt / 2, sim.t_end, sim.spike_threshold,
                         sim.refractory_min, False)
    fine = simulate_node(config, inputs, fine_sim).times
    try:
        coarse = simulate_node(config, inputs, sim).times
    except IntegrationError as exc:
        raise ConvergenceError(f"dt={sim.dt} does not resolve the run: {exc}") from exc
    if coarse.size != fine.size:
        raise ConvergenceError(
            f"event count mismatch: {coarse.size} at dt={sim.dt}, "
            f"{fine.size} at dt={sim.dt / 2}")
    if coarse.size == 0:
        return 0.0
    return float(np.max(np.abs(coarse - fine)))
