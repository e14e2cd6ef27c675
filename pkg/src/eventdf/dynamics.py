"""Hodgkin-Huxley membrane, gating kinetics and the generic conductance synapse.

Everything here is a pure function over explicit values. The ``_njit`` helpers
are shared with the compiled integrator so that the library surface and the
simulation loop evaluate the very same arithmetic.

Units: mV, ms, uF/cm^2, mS/cm^2, uA/cm^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numba
import numpy as np

E_EXCITATORY = 0.0
E_INHIBITORY = -100.0
EXCITATORY_GBAR = 0.5
INHIBITORY_GBAR = 2.0

# Below this |x| the x / (1 - exp(-x/10)) factor switches to its Taylor form.
_TAYLOR_EPS = 1e-4


class ParameterError(ValueError):
    """Raised when a parameter set violates its invariants."""


@dataclass(frozen=True)
class NeuronParams:
    C: float = 1.0
    gbar_Na: float = 120.0
    gbar_K: float = 36.0
    gbar_L: float = 0.3
    E_Na: float = 50.0
    E_K: float = -77.0
    E_L: float = -50.0
    # temperature factor on all gating rates; < 1 slows accommodation so that
    # release from slowly decaying inhibition still produces a rebound spike
    phi: float = 0.5

    def __post_init__(self):
        for name in ("C", "gbar_Na", "gbar_K", "gbar_L", "phi"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be strictly positive")
        if not self.E_Na > self.E_L > self.E_K:
            raise ParameterError("reversal potentials must satisfy E_Na > E_L > E_K")

    def as_array(self) -> np.ndarray:
        return np.array([self.C, self.gbar_Na, self.gbar_K, self.gbar_L,
                         self.E_Na, self.E_K, self.E_L, self.phi])


@dataclass(frozen=True)
class SynapseParams:
    """Conductance synapse gated by a sigmoid of the presynaptic voltage.

    ``alpha = 1/tau_rise - 1/tau_decay`` and ``beta = 1/tau_decay`` drive the
    activation ``h``; the conductance is ``gbar_syn * h``.
    """

    gbar_syn: float = 0.5
    E_syn: float = E_EXCITATORY
    tau_rise: float = 0.5
    tau_decay: float = 10.0
    V_th: float = 0.0
    k_slope: float = 2.0

    def __post_init__(self):
        if not 0 < self.tau_rise < self.tau_decay:
            raise ParameterError("need 0 < tau_rise < tau_decay")
        if not self.gbar_syn >= 0:
            raise ParameterError("gbar_syn must be non-negative")
        if not self.k_slope > 0:
            raise ParameterError("k_slope must be positive")

    @classmethod
    def excitatory(cls, **kw) -> "SynapseParams":
        kw.setdefault("gbar_syn", EXCITATORY_GBAR)
        return cls(E_syn=E_EXCITATORY, **kw)

    @classmethod
    def inhibitory(cls, **kw) -> "SynapseParams":
        kw.setdefault("gbar_syn", INHIBITORY_GBAR)
        return cls(E_syn=E_INHIBITORY, **kw)

    @classmethod
    def of_polarity(cls, polarity: str, **kw) -> "SynapseParams":
        if polarity == "excitatory":
            return cls.excitatory(**kw)
        if polarity == "inhibitory":
            return cls.inhibitory(**kw)
        raise ParameterError(f"unknown synapse polarity {polarity!r}")

    @property
    def alpha(self) -> float:
        return 1.0 / self.tau_rise - 1.0 / self.tau_decay

    @property
    def beta(self) -> float:
        return 1.0 / self.tau_decay

    @property
    def polarity(self) -> str:
        return "excitatory" if self.E_syn >= E_EXCITATORY else "inhibitory"

    def as_array(self) -> np.ndarray:
        return np.array([self.gbar_syn, self.E_syn, self.alpha, self.beta,
                         self.V_th, self.k_slope])


@dataclass(frozen=True)
class GateState:
    m: float
    h: float
    n: float


@dataclass(frozen=True)
class NodeState:
    V: float
    gates: GateState
    syn: tuple[float, ...] = ()

    def as_array(self) -> np.ndarray:
        return np.array([self.V, self.gates.m, self.gates.h, self.gates.n, *self.syn])

    @classmethod
    def from_array(cls, x: Sequence[float]) -> "NodeState":
        x = [float(v) for v in x]
        return cls(x[0], GateState(x[1], x[2], x[3]), tuple(x[4:]))


@dataclass(frozen=True)
class NodeConfig:
    """A neuron plus its ordered synapse channels.

    Channel 0 is the nominal input (or ring coupling); further channels are
    perturbation or forcing inputs.
    """

    neuron: NeuronParams = field(default_factory=NeuronParams)
    synapses: tuple[SynapseParams, ...] = (SynapseParams(),)

    @classmethod
    def single(cls, polarity: str, neuron: NeuronParams | None = None,
               **syn_kw) -> "NodeConfig":
        """Default neuron with one nominal synapse of the given polarity."""
        return cls(neuron or NeuronParams(), (SynapseParams.of_polarity(polarity, **syn_kw),))

    def __post_init__(self):
        object.__setattr__(self, "synapses", tuple(self.synapses))

    @property
    def n_channels(self) -> int:
        return len(self.synapses)

    def with_synapse(self, index: int, **changes) -> "NodeConfig":
        syns = list(self.synapses)
        syns[index] = replace(syns[index], **changes)
        return replace(self, synapses=tuple(syns))

    def add_synapse(self, syn: SynapseParams) -> "NodeConfig":
        return replace(self, synapses=self.synapses + (syn,))


@dataclass(frozen=True)
class EventTrain:
    """Event times realized as square presynaptic pulses of fixed width."""

    times: tuple[float, ...] = ()
    pulse_width: float = 1.0
    pulse_amplitude: float = 40.0
    baseline: float = -65.0

    def __post_init__(self):
        t = tuple(float(v) for v in self.times)
        object.__setattr__(self, "times", t)
        if self.pulse_width <= 0:
            raise ParameterError("pulse_width must be positive")
        gaps = np.diff(t)
        if np.any(gaps <= self.pulse_width):
            raise ParameterError("event times must increase by more than pulse_width")

    @classmethod
    def periodic(cls, period: float, n: int, start: float = 0.0, **kw) -> "EventTrain":
        return cls(tuple(start + i * period for i in range(n)), **kw)

    def __len__(self) -> int:
        return len(self.times)


# ---------------------------------------------------------------------------
# compiled scalar kernels

@numba.njit(cache=True)
def _x_over_expm1(x):
    # x / (1 - exp(-x/10)); removable singularity at x = 0
    if abs(x) < _TAYLOR_EPS:
        return 10.0 + x / 2.0 + x * x / 120.0
    return x / (1.0 - math.exp(-x / 10.0))


@numba.njit(cache=True)
def _rates(V):
    am = 0.1 * _x_over_expm1(V + 40.0)
    bm = 4.0 * math.exp(-(V + 65.0) / 18.0)
    ah = 0.07 * math.exp(-(V + 65.0) / 20.0)
    bh = 1.0 / (1.0 + math.exp(-(V + 35.0) / 10.0))
    an = 0.01 * _x_over_expm1(V + 55.0)
    bn = 0.125 * math.exp(-(V + 65.0) / 80.0)
    return am, bm, ah, bh, an, bn


@numba.njit(cache=True)
def _sigmoid(V_pre, V_th, k):
    return 1.0 / (1.0 + math.exp(-(V_pre - V_th) / k))


@numba.njit(cache=True)
def _ionic_current(V, m, h, n, neuron):
    return (neuron[1] * m * m * m * h * (V - neuron[4])
            + neuron[2] * n * n * n * n * (V - neuron[5])
            + neuron[3] * (V - neuron[6]))


@numba.njit(cache=True)
def _node_rhs(x, neuron, syn, gate, out):
    """Derivative of one node's state ``x = [V, m, h, n, h_syn...]``.

    ``syn`` rows are ``[gbar, E, alpha, beta, V_th, k]`` and ``gate[j]`` is the
    precomputed presynaptic sigmoid for channel ``j``.
    """
    V = x[0]
    m = x[1]
    h = x[2]
    n = x[3]
    am, bm, ah, bh, an, bn = _rates(V)
    I = _ionic_current(V, m, h, n, neuron)
    for j in range(syn.shape[0]):
        hs = x[4 + j]
        I += syn[j, 0] * hs * (V - syn[j, 1])
        out[4 + j] = syn[j, 2] * (1.0 - hs) * gate[j] - syn[j, 3] * hs
    out[0] = -I / neuron[0]
    out[1] = neuron[7] * (am * (1.0 - m) - bm * m)
    out[2] = neuron[7] * (ah * (1.0 - h) - bh * h)
    out[3] = neuron[7] * (an * (1.0 - n) - bn * n)


# ---------------------------------------------------------------------------
# public surface

def gate_rates(V: float) -> tuple[float, float, float, float, float, float]:
    """Return ``(alpha_m, beta_m, alpha_h, beta_h, alpha_n, beta_n)`` in 1/ms."""
    return _rates(float(V))


def steady_gates(V: float) -> GateState:
    am, bm, ah, bh, an, bn = _rates(float(V))
    return GateState(am / (am + bm), ah / (ah + bh), an / (an + bn))


def _syn_matrix(syn_params: Sequence[SynapseParams]) -> np.ndarray:
    if not syn_params:
        return np.zeros((0, 6))
    return np.array([s.as_array() for s in syn_params])


def membrane_rhs(state: NodeState, params: NeuronParams,
                 syn_params: Sequence[SynapseParams],
                 V_pre: Sequence[float]) -> NodeState:
    """Time derivatives of a node state given instantaneous presynaptic voltages."""
    if not (len(state.syn) == len(syn_params) == len(V_pre)):
        raise ValueError("synapse state, synapse params and V_pre lengths differ")
    syn = _syn_matrix(syn_params)
    gate = np.array([_sigmoid(float(v), s.V_th, s.k_slope)
                     for v, s in zip(V_pre, syn_params)], dtype=float)
    out = np.empty(4 + len(syn_params))
    _node_rhs(state.as_array(), params.as_array(), syn, gate, out)
    return NodeState.from_array(out)


def presynaptic_waveform(train: EventTrain, t: float) -> float:
    """Presynaptic voltage at ``t``: amplitude inside ``[t_i, t_i + width)``."""
    times = train.times
    i = np.searchsorted(times, t, side="right") - 1
    if i >= 0 and t < times[i] + train.pulse_width:
        return train.pulse_amplitude
    return train.baseline


def resting_state(params: NeuronParams = NeuronParams(), n_syn: int = 0,
                  tol: float = 1e-10, max_iter: int = 100) -> NodeState:
    """Resting equilibrium of the silent node by damped Newton iteration.

    Gates are slaved to their steady state, which reduces the silent RHS to a
    scalar current balance in V; Newton is damped by step halving.
    """
    neuron = params.as_array()

    def residual(V):
        g = steady_gates(V)
        return float(_ionic_current(V, g.m, g.h, g.n, neuron)) / params.C

    V = params.E_L
    r = residual(V)
    for _ in range(max_iter):
        if abs(r) < tol:
            break
        eps = 1e-6
        slope = (residual(V + eps) - residual(V - eps)) / (2 * eps)
        step = -r / slope
        lam = 1.0
        while lam > 1e-6:
            r_new = residual(V + lam * step)
            if abs(r_new) < abs(r):
                break
            lam *= 0.5
        V += lam * step
        r = r_new
    else:
        raise RuntimeError("resting-state Newton iteration did not converge")
    return NodeState(V, steady_gates(V), (0.0,) * n_syn)
