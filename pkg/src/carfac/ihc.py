"""Inner hair cell models: BM motion to neural activity pattern (NAP).

Three variants, fixed at design time:

* ``two_cap`` (default): a receptor capacitor whose voltage deficit is the
  receptor potential, feeding a transmitter reservoir, then one 80 us
  smoother. The receptor capacitor smooths the forward signal, which lowers
  synchrony at high frequencies.
* ``one_cap``: a single reservoir followed by two cascaded 80 us smoothers.
* ``just_hwr``: a clipped half-wave rectifier.

The silence steady-state output is subtracted so the NAP rests at zero; it
can therefore go negative after loud sounds.
"""

from __future__ import annotations

import dataclasses
from typing import Tuple

import numpy as np

from carfac.design import IhcCoeffs, IhcVariant, ihc_detect, ihc_detect_slope


detect_nonlinearity = ihc_detect


@dataclasses.dataclass
class IhcState:
  cap1: np.ndarray  # receptor capacitor (two_cap) or reservoir (one_cap)
  cap2: np.ndarray  # transmitter reservoir (two_cap)
  lpf1: np.ndarray
  lpf2: np.ndarray

  FIELDS = ('cap1', 'cap2', 'lpf1', 'lpf2')


def ihc_rest_values(coeffs: IhcCoeffs, n_ch: int) -> dict:
  ones = np.ones(n_ch)
  zeros = np.zeros(n_ch)
  if coeffs.variant is IhcVariant.TWO_CAP:
    return dict(cap1=coeffs.rest_cap1 * ones, cap2=coeffs.rest_cap2 * ones,
                lpf1=coeffs.quiescent_output * ones, lpf2=zeros)
  if coeffs.variant is IhcVariant.ONE_CAP:
    return dict(cap1=coeffs.rest_cap * ones, cap2=zeros.copy(),
                lpf1=coeffs.quiescent_output * ones,
                lpf2=coeffs.quiescent_output * ones)
  return dict(cap1=zeros, cap2=zeros.copy(), lpf1=zeros.copy(),
              lpf2=zeros.copy())


def ihc_init_state(coeffs: IhcCoeffs, n_ch: int, dtype=np.float64) -> IhcState:
  rest = ihc_rest_values(coeffs, n_ch)
  return IhcState(**{k: v.astype(dtype) for k, v in rest.items()})


def ihc_step_two_cap(bm: np.ndarray, coeffs: IhcCoeffs,
                     state: IhcState) -> Tuple[np.ndarray, np.ndarray]:
  """Returns (nap, receptor_potential)."""
  conductance = ihc_detect(bm)
  receptor_current = conductance * state.cap1
  # "out" depletes charge; "in" restores toward 1
  state.cap1[:] = (state.cap1 - receptor_current * coeffs.out1_rate +
                   (1 - state.cap1) * coeffs.in1_rate)
  receptor_potential = 1 - state.cap1
  release = receptor_potential * state.cap2
  state.cap2[:] = (state.cap2 - release * coeffs.out2_rate +
                   (1 - state.cap2) * coeffs.in2_rate)
  out = release * coeffs.output_gain
  state.lpf1[:] = state.lpf1 + coeffs.lpf_coeff * (out - state.lpf1)
  nap = state.lpf1 - coeffs.quiescent_output
  return nap, coeffs.rest_cap1 - state.cap1


def ihc_step_one_cap(bm: np.ndarray, coeffs: IhcCoeffs,
                     state: IhcState) -> np.ndarray:
  conductance = ihc_detect(bm)
  release = conductance * state.cap1
  state.cap1[:] = (state.cap1 - release * coeffs.out_rate +
                   (1 - state.cap1) * coeffs.in_rate)
  out = release * coeffs.output_gain
  state.lpf1[:] = state.lpf1 + coeffs.lpf_coeff * (out - state.lpf1)
  state.lpf2[:] = state.lpf2 + coeffs.lpf_coeff * (state.lpf1 - state.lpf2)
  return state.lpf2 - coeffs.quiescent_output


def ihc_step_just_hwr(bm: np.ndarray, coeffs: IhcCoeffs,
                      state: IhcState = None) -> np.ndarray:
  return np.minimum(coeffs.hwr_limit, np.maximum(0.0, bm))


def ihc_step(bm: np.ndarray, coeffs: IhcCoeffs,
             state: IhcState) -> Tuple[np.ndarray, np.ndarray]:
  """Dispatch on variant; receptor potential is all-zero except for two_cap."""
  if coeffs.variant is IhcVariant.TWO_CAP:
    return ihc_step_two_cap(bm, coeffs, state)
  if coeffs.variant is IhcVariant.ONE_CAP:
    nap = ihc_step_one_cap(bm, coeffs, state)
  else:
    nap = ihc_step_just_hwr(bm, coeffs, state)
  return nap, np.zeros_like(nap)


# ---------------------------------------------------------------------------
# Small-signal analysis
# ---------------------------------------------------------------------------


def _linearized_system(coeffs: IhcCoeffs):
  """State-space (A, B, C, D) of the IHC linearized about rest.

  Input is a BM perturbation, output the NAP perturbation. States follow the
  update order of the step functions, and the output is read from the
  updated state, so y[n] = C s[n+1] = C A s[n] + C B u[n].
  """
  g0 = ihc_detect(0.0)
  dg = float(ihc_detect_slope(0.0))
  a = coeffs.lpf_coeff
  gain = coeffs.output_gain
  if coeffs.variant is IhcVariant.TWO_CAP:
    c1, c2 = coeffs.rest_cap1, coeffs.rest_cap2
    o1, n1 = coeffs.out1_rate, coeffs.in1_rate
    o2, n2 = coeffs.out2_rate, coeffs.in2_rate
    v = 1 - c1
    # states: [cap1, cap2, lpf]
    a11 = 1 - g0 * o1 - n1
    b1 = -c1 * o1 * dg
    # release perturbation: d(v * cap2) with dv = -dcap1_next
    rel_s = np.array([-a11 * c2, v, 0.0])
    rel_u = -b1 * c2
    A = np.array([
        [a11, 0.0, 0.0],
        [0.0, 1 - n2, 0.0],
        [0.0, 0.0, 1 - a],
    ])
    B = np.array([b1, 0.0, 0.0])
    A[1] += -o2 * rel_s
    B[1] += -o2 * rel_u
    A[2] += a * gain * rel_s
    B[2] += a * gain * rel_u
    C = np.array([0.0, 0.0, 1.0])
  elif coeffs.variant is IhcVariant.ONE_CAP:
    c = coeffs.rest_cap
    o, n = coeffs.out_rate, coeffs.in_rate
    # states: [cap, lpf1, lpf2]
    rel_s = np.array([g0, 0.0, 0.0])
    rel_u = c * dg
    A = np.zeros((3, 3))
    B = np.zeros(3)
    A[0, 0] = 1 - g0 * o - n
    B[0] = -o * c * dg
    A[1] = a * gain * rel_s
    A[1, 1] += 1 - a
    B[1] = a * gain * rel_u
    A[2] = a * A[1]
    A[2, 2] += 1 - a
    B[2] = a * B[1]
    C = np.array([0.0, 0.0, 1.0])
  else:
    raise ValueError('just_hwr has no smooth linearization at rest')
  return A, B, C


def small_signal_transfer(coeffs: IhcCoeffs, freqs_hz,
                          sample_rate: float) -> np.ndarray:
  """Complex NAP/BM transfer function of the IHC linearized at rest."""
  A, B, C = _linearized_system(coeffs)
  z = np.exp(2j * np.pi * np.atleast_1d(freqs_hz) / sample_rate)
  eye = np.eye(A.shape[0])
  out = np.empty(z.shape, dtype=complex)
  for i, zi in enumerate(z):
    x = np.linalg.solve(zi * eye - A, B)
    out[i] = C @ A @ x + C @ B
  return out
