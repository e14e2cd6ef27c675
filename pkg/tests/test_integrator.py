import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from golden import GOLDEN_TOL, ISOLATED_DELAY
from eventdf.dynamics import EventTrain, NeuronParams, NodeConfig, SynapseParams
from eventdf.edf import isolated_delay
from eventdf.integrator import (ConvergenceError, IntegrationError, SimConfig,
                                convergence_check, simulate_network, simulate_node)

POLARITIES = ["excitatory", "inhibitory"]


@pytest.mark.parametrize("polarity", POLARITIES)
def test_isolated_delay_golden(polarity):
    assert isolated_delay(NodeConfig.single(polarity)) == pytest.approx(
        ISOLATED_DELAY[polarity], abs=GOLDEN_TOL)


@pytest.mark.parametrize("polarity", POLARITIES)
def test_isolated_delay_matches_adaptive_integrator(polarity):
    ref = oracles.single_event_time(NeuronParams(), SynapseParams.of_polarity(polarity))
    assert len(ref) == 1
    assert ISOLATED_DELAY[polarity] == pytest.approx(ref[0] - 50.0, abs=1e-3)


@pytest.mark.parametrize("polarity", POLARITIES)
def test_halving_dt_moves_events_little(polarity):
    dev = convergence_check(NodeConfig.single(polarity), [EventTrain((50.0,))],
                            SimConfig(t_end=150.0))
    assert dev < 1e-3


def test_coarse_step_is_rejected():
    with pytest.raises(ConvergenceError):
        convergence_check(NodeConfig.single("inhibitory"), [EventTrain((50.0,))],
                          SimConfig(dt=0.1, t_end=150.0))


def test_event_times_are_interpolated_off_grid():
    out = simulate_node(NodeConfig.single("excitatory"), [EventTrain((50.0,))],
                        SimConfig(t_end=100.0))
    t = out.times[0]
    assert abs(t / 0.01 - round(t / 0.01)) > 1e-6


def test_repeated_runs_are_bit_identical():
    cfg = NodeConfig.single("inhibitory")
    train = EventTrain.periodic(45.0, 8, start=10.0)
    a = simulate_node(cfg, [train], SimConfig(t_end=400.0)).times
    b = simulate_node(cfg, [train], SimConfig(t_end=400.0)).times
    assert a.tobytes() == b.tobytes()


def test_internal_source_equals_external_train_delayed_by_one_step():
    # an internal event drives its target from one step after the interpolated event time
    driver = NodeConfig.single("excitatory")
    target = NodeConfig.single("excitatory")
    sim = SimConfig(t_end=120.0)
    net = simulate_network([driver, target], [[EventTrain((20.0,))], [0]], sim)
    (t_e,) = net.events[0]
    alone = simulate_node(target, [EventTrain((t_e + sim.dt,))], sim).times
    assert net.events[1] == pytest.approx(alone, abs=1e-9)


@given(st.lists(st.floats(5.0, 60.0), min_size=1, max_size=8))
def test_events_are_ordered_and_debounced(gaps):
    times = np.cumsum(gaps) + 10.0
    sim = SimConfig(t_end=float(times[-1]) + 60.0)
    for pol in POLARITIES:
        ev = simulate_node(NodeConfig.single(pol), [EventTrain(tuple(times))], sim).times
        assert np.all(np.diff(ev) >= sim.refractory_min)
        assert np.all((ev > 0) & (ev <= sim.t_end))


def test_trace_columns_and_length():
    sim = SimConfig(t_end=5.0, record_trace=True)
    out = simulate_node(NodeConfig.single("excitatory").add_synapse(SynapseParams()),
                        [EventTrain(), EventTrain()], sim)
    assert out.trace.columns == ["V", "m", "h", "n", "h_syn_0", "h_syn_1"]
    assert out.trace.values.shape == (501, 6)


def test_input_validation():
    cfg = NodeConfig.single("excitatory")
    with pytest.raises(ValueError):
        simulate_node(cfg, [EventTrain(), EventTrain()], SimConfig())
    with pytest.raises(ValueError):
        simulate_network([cfg], [[3]], SimConfig())
    with pytest.raises(ValueError):
        SimConfig(dt=0.0)
    with pytest.raises(ValueError):
        SimConfig(t_end=0.0)


def test_blowup_is_reported():
    with pytest.raises(IntegrationError):
        simulate_node(NodeConfig.single("inhibitory"), [EventTrain((50.0,))],
                      SimConfig(dt=0.5, t_end=150.0))
