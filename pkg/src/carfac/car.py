"""Per-sample update of the cascade of asymmetric resonators.

Each stage is a two-pole/two-zero resonator in coupled form. The poles sit
at radius ``r = r1 + zB * nlf`` where ``zB`` is the AGC-controlled undamping
(interpolated every sample toward its target) and ``nlf`` is the OHC
nonlinearity of the stage's velocity. The cascade output of each stage is
AC-coupled to give the BM output.

State vectors are updated in place so that per-ear states can be views into
a model's stacked arrays.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from carfac.design import CarCoeffs


@dataclasses.dataclass
class CarState:
  z1: np.ndarray
  z2: np.ndarray
  za: np.ndarray  # previous z2, for velocity
  zb: np.ndarray  # current undamping, interpolated
  dzb: np.ndarray
  g: np.ndarray  # current stage gain, interpolated
  dg: np.ndarray
  zy: np.ndarray  # stage outputs; the delay line in delay-buffer mode
  ac_state: np.ndarray

  FIELDS = ('z1', 'z2', 'za', 'zb', 'dzb', 'g', 'dg', 'zy', 'ac_state')


def car_rest_values(coeffs: CarCoeffs) -> dict:
  n = coeffs.n_ch
  rest = {name: np.zeros(n) for name in CarState.FIELDS}
  rest['zb'] = coeffs.zr.copy()
  rest['g'] = coeffs.g0.copy()
  return rest


def car_init_state(coeffs: CarCoeffs, dtype=np.float64) -> CarState:
  rest = car_rest_values(coeffs)
  return CarState(**{k: v.astype(dtype) for k, v in rest.items()})


@dataclasses.dataclass
class CarStepOutput:
  bm: np.ndarray  # AC-coupled
  bm_raw: np.ndarray
  velocities: np.ndarray
  nlf: np.ndarray


def ohc_nlf(velocities, coeffs: CarCoeffs, linear: bool = False):
  """Outer hair cell nonlinearity; 1.0 everywhere in linear mode."""
  if linear:
    return np.ones_like(velocities)
  return 1.0 / (1 + (velocities * coeffs.velocity_scale + coeffs.v_offset)**2)


def ac_couple(bm_raw: np.ndarray, state: CarState,
              coeffs: CarCoeffs) -> np.ndarray:
  """One-pole highpass per channel: out = x - s; s += c * (x - s)."""
  out = bm_raw - state.ac_state
  state.ac_state[:] = state.ac_state + coeffs.ac_coeff * out
  return out


def _resonate(coeffs: CarCoeffs, state: CarState, linear: bool):
  """Shared channel-parallel part of both stepping modes."""
  g = state.g + state.dg
  zb = state.zb + state.dzb
  v = state.z2 - state.za
  nlf = ohc_nlf(v, coeffs, linear)
  r = coeffs.r1 + zb * nlf
  z1 = r * (coeffs.a0 * state.z1 - coeffs.c0 * state.z2)
  z2 = r * (coeffs.c0 * state.z1 + coeffs.a0 * state.z2)
  state.za[:] = state.z2
  state.zb[:] = zb
  state.g[:] = g
  return z1, z2, v, nlf


def car_step_ripple(x_in: float, coeffs: CarCoeffs, state: CarState,
                    linear: bool = False) -> CarStepOutput:
  """Minimum-phase update: each stage sees this sample's output of the last."""
  z1, z2, v, nlf = _resonate(coeffs, state, linear)
  g = state.g
  zy = coeffs.h * z2  # partial outputs
  in_out = x_in
  for ch in range(coeffs.n_ch):
    z1[ch] += in_out
    in_out = g[ch] * (in_out + zy[ch])
    zy[ch] = in_out
  state.z1[:] = z1
  state.z2[:] = z2
  state.zy[:] = zy
  bm = ac_couple(zy, state, coeffs)
  return CarStepOutput(bm=bm, bm_raw=zy.copy(), velocities=v, nlf=nlf)


def car_step_delay_buffer(x_in: float, coeffs: CarCoeffs, state: CarState,
                          linear: bool = False) -> CarStepOutput:
  """Channel-parallel update with one sample of delay between stages."""
  z1, z2, v, nlf = _resonate(coeffs, state, linear)
  stage_in = np.empty_like(state.zy)
  stage_in[1:] = state.zy[:-1]
  stage_in[0] = x_in
  z1 = z1 + stage_in
  zy = state.g * (coeffs.h * z2 + stage_in)
  state.z1[:] = z1
  state.z2[:] = z2
  state.zy[:] = zy
  bm = ac_couple(zy, state, coeffs)
  return CarStepOutput(bm=bm, bm_raw=zy.copy(), velocities=v, nlf=nlf)


def car_step(x_in: float, coeffs: CarCoeffs, state: CarState,
             linear: bool = False) -> CarStepOutput:
  if coeffs.use_delay_buffer:
    return car_step_delay_buffer(x_in, coeffs, state, linear)
  return car_step_ripple(x_in, coeffs, state, linear)
