import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from carfac import CarfacModel
from carfac import stimuli
from carfac.agc import (agc_init_state, agc_step, close_agc_loop,
                        cross_ear_mix, spatial_smooth_3tap, target_undamping,
                        updated_stages)
from carfac.car import car_init_state

from conftest import FS


def brute_smooth(x, taps, n_iter):
  """Convolution with edge-replicated padding, once per iteration."""
  kernel = np.asarray(taps)[::-1]  # out[i] = l*x[i-1] + m*x[i] + r*x[i+1]
  for _ in range(n_iter):
    x = np.convolve(np.pad(x, 1, mode='edge'), kernel, mode='valid')
  return x


# -- spatial smoothing ---------------------------------------------------------


def test_identity_taps(rng):
  x = rng.standard_normal(71)
  np.testing.assert_array_equal(spatial_smooth_3tap(x, (0.0, 1.0, 0.0), 3), x)


def test_constant_preserved(coeffs):
  for s in coeffs.agc.stages:
    out = spatial_smooth_3tap(np.full(71, 0.37), s.fir_taps, s.n_iterations)
    np.testing.assert_allclose(out, 0.37, rtol=1e-15)


@pytest.mark.parametrize('stage', range(4))
def test_spike_matches_convolution(coeffs, stage):
  s = coeffs.agc.stages[stage]
  x = np.zeros(71)
  x[35] = 1.0
  got = spatial_smooth_3tap(x, s.fir_taps, 5 * s.n_iterations)
  np.testing.assert_allclose(got, brute_smooth(x, s.fir_taps,
                                               5 * s.n_iterations),
                             rtol=1e-14, atol=1e-17)
  # right tap is larger, so mass drifts toward lower channel indices (base)
  assert np.dot(np.arange(71), got) < 35


@settings(max_examples=50)
@given(x=hnp.arrays(np.float64, 60, elements=st.floats(-10, 10)),
       left=st.floats(0, 0.5), right=st.floats(0, 0.5))
def test_interior_mass_conserved(x, left, right):
  x = x.copy()
  x[:3] = 0
  x[-3:] = 0
  out = spatial_smooth_3tap(x, (left, 1 - left - right, right), 1)
  assert abs(out.sum() - x.sum()) <= 1e-9


@settings(max_examples=50)
@given(x=hnp.arrays(np.float64, 30, elements=st.floats(-10, 10)),
       n_iter=st.integers(1, 4))
def test_smoothing_matches_convolution(coeffs, x, n_iter):
  taps = coeffs.agc.stages[0].fir_taps
  np.testing.assert_allclose(spatial_smooth_3tap(x, taps, n_iter),
                             brute_smooth(x, taps, n_iter), atol=1e-12)


# -- cadence -------------------------------------------------------------------


def test_stage_zero_fires_every_8_samples(coeffs):
  state = agc_init_state(coeffs.agc)
  fired = [agc_step(np.zeros(71), coeffs.agc, state) for _ in range(256)]
  assert [i for i, f in enumerate(fired) if f] == list(range(7, 256, 8))


def test_stage_k_cadence(coeffs):
  state = agc_init_state(coeffs.agc)
  hits = {k: [] for k in range(4)}
  for t in range(512):
    agc_step(np.zeros(71), coeffs.agc, state)
    for k in range(updated_stages(state)):
      hits[k].append(t)
    assert np.all((0 <= state.decim_phase) &
                  (state.decim_phase < coeffs.agc.decimation))
  for k in range(4):
    period = 8 * 2**k
    assert hits[k] == list(range(period - 1, 512, period))


def test_zero_detect_keeps_memory_zero(coeffs):
  state = agc_init_state(coeffs.agc)
  for _ in range(1000):
    agc_step(np.zeros(71), coeffs.agc, state)
  assert not np.any(state.memory)


def test_constant_detect_settles_to_input(coeffs):
  # stage gains 1 + 2 + 4 + 8 undo the detect scale, so stage 0 -> d
  state = agc_init_state(coeffs.agc)
  d = 0.02
  for _ in range(int(3 * FS)):
    agc_step(np.full(71, d), coeffs.agc, state)
  np.testing.assert_allclose(state.memory[0], d, rtol=1e-9)
  np.testing.assert_allclose(state.memory[3], d / 15, rtol=1e-9)


def test_first_update_is_one_pole_of_mean(coeffs):
  agc = dataclasses.replace(
      coeffs.agc, stages=tuple(dataclasses.replace(s, fir_taps=(0, 1, 0))
                               for s in coeffs.agc.stages))
  state = agc_init_state(agc)
  x = np.linspace(0, 1, 71)
  for _ in range(8):
    agc_step(x, agc, state)
  eps = agc.stages[0].epsilon
  np.testing.assert_allclose(state.memory[0], eps * agc.detect_scale * x,
                             rtol=1e-14)


# -- cross-ear mixing ----------------------------------------------------------


def _states(coeffs, values):
  out = []
  for v in values:
    s = agc_init_state(coeffs.agc)
    s.memory[:] = v
    s.decim_phase[:] = 0  # every stage just fired
    out.append(s)
  return out


def test_mix_single_ear_noop(coeffs):
  (s,) = _states(coeffs, [0.3])
  cross_ear_mix([s], coeffs.agc)
  assert np.all(s.memory == 0.3)


def test_mix_equal_ears_fixed_point(coeffs):
  a, b = _states(coeffs, [0.3, 0.3])
  cross_ear_mix([a, b], coeffs.agc)
  np.testing.assert_allclose(a.memory, 0.3, rtol=1e-15)
  np.testing.assert_allclose(b.memory, 0.3, rtol=1e-15)


def test_mix_moves_toward_mean(coeffs):
  a, b = _states(coeffs, [1.0, 0.0])
  cross_ear_mix([a, b], coeffs.agc)
  for k, stage in enumerate(coeffs.agc.stages):
    m = stage.mix_coeff
    np.testing.assert_allclose(a.memory[k], 1 - m * 0.5, rtol=1e-15)
    np.testing.assert_allclose(b.memory[k], m * 0.5, rtol=1e-15)


def test_binaural_driven_ear_suppresses_silent_ear(params):
  fs = params.sample_rate
  x = np.stack([stimuli.noise(-20, 0.5, fs, seed=1), np.zeros(int(0.5 * fs))])
  model = CarfacModel(params, n_ears=2)
  out = model.run_segment(x, outputs=('ohc',))
  silent_agc = out.agc[-1, 1]
  assert silent_agc.max() > 0
  assert silent_agc.max() < out.agc[-1, 0].max()
  # the silent ear's undamping dropped below its quiet value
  assert np.all(model.ears[1].car.zb < model.coeffs.car.zr)


# -- loop closure --------------------------------------------------------------


def test_open_loop_zeroes_ramps(coeffs):
  state = car_init_state(coeffs.car)
  state.dzb[:] = 0.01
  state.dg[:] = -0.02
  close_agc_loop(np.full(71, 0.5), np.ones(71), coeffs.car, state, 8,
                 open_loop=True)
  assert not np.any(state.dzb) and not np.any(state.dg)


def test_quiet_full_health_targets_full_undamping(coeffs):
  car = coeffs.car
  state = car_init_state(car)
  state.zb[:] = 0.5 * car.zr
  state.g[:] = car.stage_gain(0.5)
  close_agc_loop(np.zeros(71), np.ones(71), car, state, 8)
  np.testing.assert_allclose(state.zb + 8 * state.dzb, car.zr, rtol=1e-14)
  np.testing.assert_allclose(state.g + 8 * state.dg, car.stage_gain(1.0),
                             rtol=1e-14)


def test_health_scales_target(coeffs):
  car = coeffs.car
  state = car_init_state(car)
  health = np.linspace(0, 1, 71)
  close_agc_loop(np.full(71, 0.2), health, car, state, 8)
  u = 0.8 * health
  np.testing.assert_allclose(state.zb + 8 * state.dzb, car.zr * u,
                             rtol=1e-13, atol=1e-17)


@given(activity=hnp.arrays(np.float64, 71, elements=st.floats(0, 100)),
       health=hnp.arrays(np.float64, 71, elements=st.floats(0, 1)))
def test_undamping_bounded_for_nonnegative_activity(activity, health):
  u = target_undamping(activity, health)
  assert np.all((0 <= u) & (u <= 1))
