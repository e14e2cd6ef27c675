import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import scenarios
from golden import EDF_INHIBITORY, GOLDEN_TOL
from eventdf.dynamics import NodeConfig, ParameterError
from eventdf.edf import (EdfSample, LockClass, NoLockedRegionError, classify_window,
                         extract_characteristics, isolated_delay, steady_state_delay, sweep_edf,
                         sweep_edf_parameters)

L = LockClass


def window(n=5, T=10.0):
    return 100.0 + T * np.arange(n)


# ---------------------------------------------------------------------------
# lock classification on synthetic event times


def test_classify_locked():
    w = window()
    m = classify_window(w, w + 3.0 + np.array([0, 0.01, -0.01, 0.02, 0]), 10.0, 0.05)
    assert m.lock is L.LOCKED_11 and m.delay == pytest.approx(3.004)


def test_classify_suppressed():
    assert classify_window(window(), np.array([50.0]), 10.0, 0.05).lock is L.SUPPRESSED


def test_classify_every_other_period():
    w = window(6)
    m = classify_window(w, w[::2] + 3.0, 10.0, 0.05)
    assert m.lock is L.HIGHER_ORDER and m.ratio == (1, 2)


def test_classify_two_per_period():
    w = window(5)
    out = np.sort(np.concatenate([w + 2.0, w + 6.0]))
    m = classify_window(w, out, 10.0, 0.05)
    assert m.lock is L.HIGHER_ORDER and m.ratio == (2, 1)


def test_classify_drift_is_phase_slip():
    w = window(5)
    assert classify_window(w, w + 3.0 + 0.5 * np.arange(5), 10.0, 0.05).lock is L.PHASE_SLIP


# ---------------------------------------------------------------------------
# characteristics on synthetic curves


def sample(T, d):
    return EdfSample(T, d, d / T, L.LOCKED_11)


def test_characteristics_of_flat_curve():
    ch = extract_characteristics([sample(T, 5.0) for T in np.arange(10.0, 60.0, 1.0)])
    assert (ch.T_min, ch.T_r, ch.delta_inf) == (10.0, 10.0, 5.0)


def test_characteristics_of_decaying_curve():
    grid = np.arange(10.0, 200.0, 1.0)
    samples = [EdfSample(T, math.nan, math.nan, L.SUPPRESSED) if T < 20 else
               sample(T, 8.0 + 5.0 * math.exp(-(T - 20.0) / 10.0)) for T in grid]
    ch = extract_characteristics(samples, flatness_tol=0.02)
    assert ch.T_min == 20.0
    assert ch.delta_inf == pytest.approx(8.0, abs=1e-6)
    # 5 exp(-(T - 20)/10) < 0.02 from T > 20 + 10 ln(250)
    assert ch.T_r == math.ceil(20.0 + 10.0 * math.log(250.0))


def test_characteristics_need_locked_top():
    with pytest.raises(NoLockedRegionError):
        extract_characteristics([sample(10.0, 1.0), EdfSample(20.0, math.nan, math.nan,
                                                               L.PHASE_SLIP)])


@given(st.lists(st.floats(0.0, 3.0), min_size=3, max_size=40),
       st.floats(0.005, 0.5), st.integers(0, 5))
def test_characteristics_invariants(steps, tol, n_bad):
    # non-increasing delays with a suppressed low end
    grid = 10.0 + np.arange(len(steps) + n_bad, dtype=float)
    d = 5.0 + np.cumsum(steps[::-1])[::-1]
    samples = [EdfSample(T, math.nan, math.nan, L.SUPPRESSED) for T in grid[:n_bad]]
    samples += [sample(T, x) for T, x in zip(grid[n_bad:], d)]
    ch = extract_characteristics(samples, tol)
    assert ch.T_min == grid[n_bad]
    if ch.T_r is not None:
        assert ch.T_min <= ch.T_r
        assert all(abs(s.delta - ch.delta_inf) < tol for s in samples if s.T >= ch.T_r)


# ---------------------------------------------------------------------------
# simulated curves


def test_default_inhibitory_edf_golden():
    ch = scenarios.edf().characteristics
    assert ch.T_min == EDF_INHIBITORY["T_min"]
    assert ch.T_r == EDF_INHIBITORY["T_r"]
    assert ch.delta_inf == pytest.approx(EDF_INHIBITORY["delta_inf"], abs=GOLDEN_TOL)


def test_phase_is_delay_over_period():
    for s in scenarios.edf().locked():
        assert s.phi == pytest.approx(s.delta / s.T, rel=1e-12)
        assert 0 < s.phi < 1


def test_delay_grows_toward_short_periods():
    # inhibition arriving before full recovery postpones the rebound
    d = np.array([s.delta for s in scenarios.edf().locked()])
    assert d[0] > d[-1]
    assert np.all(np.diff(d) <= 0.02)


@pytest.mark.parametrize("polarity,T", [("inhibitory", 50.0), ("excitatory", 25.0)])
def test_lock_above_minimum_period(polarity, T):
    assert steady_state_delay(NodeConfig.single(polarity), T).lock is L.LOCKED_11


def test_very_short_period_is_not_locked():
    assert steady_state_delay(NodeConfig.single("inhibitory"), 2.5).lock is not L.LOCKED_11


def test_silent_synapse_sweep_is_degenerate():
    curve = sweep_edf(NodeConfig.single("excitatory", gbar_syn=0.0), [20.0, 40.0])
    assert all(s.lock is L.SUPPRESSED for s in curve.samples)
    assert curve.characteristics.delta_inf is None and not curve.characteristics.defined


def test_grid_validation():
    cfg = NodeConfig.single("inhibitory")
    with pytest.raises(ValueError):
        sweep_edf(cfg, [])
    with pytest.raises(ValueError):
        sweep_edf(cfg, [20.0, 10.0])
    with pytest.raises(ParameterError):
        sweep_edf(cfg, [-5.0, 10.0])


def test_parameter_sweep_singleton_matches_plain_sweep():
    cfg = NodeConfig.single("excitatory")
    grid = [30.0, 40.0, 50.0]
    ((v, curve),) = sweep_edf_parameters(cfg, "tau-decay", [10.0], grid)
    plain = sweep_edf(cfg, grid)
    assert v == 10.0 and curve.meta["varied"] == {"tau_decay": 10.0}
    assert np.array_equal(curve.delta, plain.delta)


def test_parameter_sweep_validates_before_running():
    cfg = NodeConfig.single("inhibitory")
    with pytest.raises(ValueError):
        sweep_edf_parameters(cfg, "E_syn", [1.0], [50.0])
    with pytest.raises(ParameterError):
        sweep_edf_parameters(cfg, "tau_decay", [10.0, 0.1], [50.0])


def test_conductance_shifts_less_than_decay_time():
    # the rebound delay is far more sensitive to the decay time than to the conductance
    base = NodeConfig.single("inhibitory")

    def spread(vary, values):
        d = [isolated_delay(base.with_synapse(0, **{vary: v})) for v in values]
        assert all(b > a for a, b in zip(d, d[1:]))
        return d[-1] - d[0]

    assert spread("gbar_syn", [1.0, 2.0, 4.0]) < 0.5 * spread("tau_decay", [5.0, 10.0, 20.0])
