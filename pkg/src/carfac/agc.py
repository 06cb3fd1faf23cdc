"""Multi-stage decimating AGC loop filter and the loop closure into the CAR.

Stage 0 runs every ``decimation[0]`` samples, stage k every
``prod(decimation[:k+1])`` samples. Each firing stage averages its
accumulated input, adds the (freshly updated) output of the next slower
stage scaled by ``stage_gain``, smooths in time with a one-pole filter, and
then in space with a 3-tap FIR applied ``n_iterations`` times.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence, Tuple

import numpy as np

from carfac.car import CarState
from carfac.design import AgcCoeffs, CarCoeffs


@dataclasses.dataclass
class AgcState:
  memory: np.ndarray  # (n_stages, n_ch) smoothed activity
  input_accum: np.ndarray  # (n_stages, n_ch)
  decim_phase: np.ndarray  # (n_stages,) int

  FIELDS = ('memory', 'input_accum', 'decim_phase')


def agc_init_state(coeffs: AgcCoeffs, dtype=np.float64) -> AgcState:
  shape = (coeffs.n_stages, coeffs.n_ch)
  return AgcState(memory=np.zeros(shape, dtype=dtype),
                  input_accum=np.zeros(shape, dtype=dtype),
                  decim_phase=np.zeros(coeffs.n_stages, dtype=np.int64))


def spatial_smooth_3tap(activity: np.ndarray, taps: Sequence[float],
                        n_iterations: int) -> np.ndarray:
  """Apply the 3-tap FIR across channels ``n_iterations`` times.

  The edge channels reuse their own value for the missing neighbor.
  """
  left, mid, right = taps
  x = np.asarray(activity)
  for _ in range(n_iterations):
    prev = np.concatenate((x[:1], x[:-1]))  # x[i-1]
    nxt = np.concatenate((x[1:], x[-1:]))  # x[i+1]
    x = left * prev + mid * x + right * nxt
  return x


def _agc_recurse(coeffs: AgcCoeffs, agc_in: np.ndarray, stage: int,
                 state: AgcState) -> bool:
  sc = coeffs.stages[stage]
  state.decim_phase[stage] = (state.decim_phase[stage] + 1) % sc.decimation
  state.input_accum[stage] += agc_in
  if state.decim_phase[stage] != 0:
    return False
  stage_in = state.input_accum[stage] / sc.decimation
  state.input_accum[stage] = 0
  if stage < coeffs.n_stages - 1:
    _agc_recurse(coeffs, stage_in, stage + 1, state)
    stage_in = stage_in + sc.stage_gain * state.memory[stage + 1]
  mem = state.memory[stage]
  mem = mem + sc.epsilon * (stage_in - mem)
  state.memory[stage] = spatial_smooth_3tap(mem, sc.fir_taps,
                                            sc.n_iterations)
  return True


def agc_step(detect: np.ndarray, coeffs: AgcCoeffs, state: AgcState) -> bool:
  """Feed one sample of NAP; True when stage 0 updated on this sample."""
  return _agc_recurse(coeffs, coeffs.detect_scale * detect, 0, state)


def updated_stages(state: AgcState) -> int:
  """How many leading stages fired on the most recent agc_step."""
  n = 0
  for phase in state.decim_phase:
    if phase != 0:
      break
    n += 1
  return n


def cross_ear_mix(states: Sequence[AgcState], coeffs: AgcCoeffs) -> None:
  """Pull each ear's freshly updated stages toward the across-ear mean."""
  if len(states) < 2:
    return
  for stage in range(updated_stages(states[0])):
    mix = max(coeffs.stages[stage].mix_coeff, 0.0)
    mean = sum(s.memory[stage] for s in states) / len(states)
    for s in states:
      s.memory[stage] = s.memory[stage] + mix * (mean - s.memory[stage])


def target_undamping(agc_activity: np.ndarray,
                     ohc_health: np.ndarray) -> np.ndarray:
  # Only the floor is clamped. NAP rests at zero and dips below it after
  # loud sounds, so activity can be slightly negative and u slightly above 1.
  return np.maximum(1 - agc_activity, 0.0) * ohc_health


def close_agc_loop(agc_activity: np.ndarray, ohc_health: np.ndarray,
                   coeffs: CarCoeffs, car_state: CarState, decimation: int,
                   open_loop: bool = False) -> None:
  """Set the CAR ramps so zB and g reach their targets in ``decimation``."""
  if open_loop:
    car_state.dzb[:] = 0
    car_state.dg[:] = 0
    return
  u = target_undamping(agc_activity, ohc_health)
  new_g = coeffs.stage_gain(u)
  car_state.dzb[:] = (coeffs.zr * u - car_state.zb) / decimation
  car_state.dg[:] = (new_g - car_state.g) / decimation
