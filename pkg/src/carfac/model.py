"""Top-level CARFAC model: design, state management and segment running."""

from __future__ import annotations

import dataclasses
import struct
from typing import Iterable, List, Optional

import numpy as np

from carfac import agc as agc_mod
from carfac import car as car_mod
from carfac import ihc as ihc_mod
from carfac.design import (CarfacCoeffs, CarfacDesignParams, IhcVariant,
                           design_coeffs)
from carfac.errors import UsageError

PLANES = ('nap', 'bm', 'bm_raw', 'receptor_potential', 'ohc')
ENGINES = ('numba', 'python')

_VARIANT_CODE = {IhcVariant.TWO_CAP: 0, IhcVariant.ONE_CAP: 1,
                 IhcVariant.JUST_HWR: 2}

STATE_MAGIC = b'CFST'
STATE_VERSION = 1


@dataclasses.dataclass
class EarState:
  car: car_mod.CarState
  ihc: ihc_mod.IhcState
  agc: agc_mod.AgcState


@dataclasses.dataclass
class SegmentOutput:
  """Per-sample output planes, each shaped (n_ears, n_samples, n_ch).

  Planes that were not requested are None. ``agc`` holds the stage-0 AGC
  memory after each update, shaped (n_updates, n_ears, n_ch), and
  ``agc_times`` the in-segment sample index of each update.
  """
  nap: Optional[np.ndarray] = None
  bm: Optional[np.ndarray] = None
  bm_raw: Optional[np.ndarray] = None
  receptor_potential: Optional[np.ndarray] = None
  ohc: Optional[np.ndarray] = None
  agc: Optional[np.ndarray] = None
  agc_times: Optional[np.ndarray] = None
  receptor_potential_valid: bool = True

  def plane(self, name: str) -> np.ndarray:
    out = getattr(self, name)
    if out is None:
      raise UsageError(f'plane {name!r} was not recorded')
    return out


class CarfacModel:
  """A designed CARFAC instance with per-ear state.

  State is stored in stacked arrays so a compiled kernel can run all ears at
  once; the per-ear dataclasses in ``ears`` are views into those arrays.
  """

  def __init__(self, params: CarfacDesignParams, n_ears: int = 1,
               dtype=np.float64):
    if n_ears < 1:
      raise UsageError('n_ears must be >= 1')
    self.params = params
    self.coeffs: CarfacCoeffs = design_coeffs(params)
    self.n_ears = int(n_ears)
    self.dtype = np.dtype(dtype)
    if self.dtype not in (np.float32, np.float64):
      raise UsageError('dtype must be float32 or float64')
    n_ch = self.coeffs.n_ch
    n_stages = self.coeffs.agc.n_stages
    self.ohc_health = np.ones((self.n_ears, n_ch), dtype=self.dtype)
    self._car = np.zeros((len(car_mod.CarState.FIELDS), self.n_ears, n_ch),
                         dtype=self.dtype)
    self._ihc = np.zeros((len(ihc_mod.IhcState.FIELDS), self.n_ears, n_ch),
                         dtype=self.dtype)
    self._agc_mem = np.zeros((self.n_ears, n_stages, n_ch), dtype=self.dtype)
    self._agc_accum = np.zeros_like(self._agc_mem)
    self._agc_phase = np.zeros((self.n_ears, n_stages), dtype=np.int64)
    self.ears: List[EarState] = [self._ear_view(e) for e in range(self.n_ears)]
    self._prepare_kernel_args()
    self.reset_state()

  @property
  def n_ch(self) -> int:
    return self.coeffs.n_ch

  @property
  def pole_freqs(self) -> np.ndarray:
    return self.coeffs.pole_freqs

  def _ear_view(self, e: int) -> EarState:
    car = car_mod.CarState(**{name: self._car[i, e] for i, name in
                              enumerate(car_mod.CarState.FIELDS)})
    ihc = ihc_mod.IhcState(**{name: self._ihc[i, e] for i, name in
                              enumerate(ihc_mod.IhcState.FIELDS)})
    agc = agc_mod.AgcState(memory=self._agc_mem[e],
                           input_accum=self._agc_accum[e],
                           decim_phase=self._agc_phase[e])
    return EarState(car=car, ihc=ihc, agc=agc)

  def _prepare_kernel_args(self) -> None:
    from carfac import _kernel
    dt = self.dtype
    car, ihc, agc = self.coeffs.car, self.coeffs.ihc, self.coeffs.agc
    ihc_params = np.zeros(_kernel.N_IHC_PARAMS, dtype=dt)
    ihc_params[_kernel.I_LPF] = ihc.lpf_coeff
    ihc_params[_kernel.I_OUT1] = ihc.out1_rate
    ihc_params[_kernel.I_IN1] = ihc.in1_rate
    ihc_params[_kernel.I_OUT2] = ihc.out2_rate
    ihc_params[_kernel.I_IN2] = ihc.in2_rate
    ihc_params[_kernel.I_REST1] = ihc.rest_cap1
    ihc_params[_kernel.I_OUT] = ihc.out_rate
    ihc_params[_kernel.I_IN] = ihc.in_rate
    ihc_params[_kernel.I_GAIN] = ihc.output_gain
    ihc_params[_kernel.I_QUIET] = ihc.quiescent_output
    ihc_params[_kernel.I_LIMIT] = ihc.hwr_limit
    st = agc.stages
    self._kargs = dict(
        a0=car.a0.astype(dt), c0=car.c0.astype(dt), r1=car.r1.astype(dt),
        zr=car.zr.astype(dt), h=car.h.astype(dt),
        gp=np.ascontiguousarray(car.g_parabola, dtype=dt),
        vel_scale=dt.type(car.velocity_scale),
        v_offset=dt.type(car.v_offset), ac_coeff=dt.type(car.ac_coeff),
        use_delay=bool(car.use_delay_buffer),
        ihc_variant=_VARIANT_CODE[ihc.variant], ihc_params=ihc_params,
        decim=np.array([s.decimation for s in st], dtype=np.int64),
        eps=np.array([s.epsilon for s in st], dtype=dt),
        taps=np.array([s.fir_taps for s in st], dtype=dt),
        n_iter=np.array([s.n_iterations for s in st], dtype=np.int64),
        stage_gain=np.array([s.stage_gain for s in st], dtype=dt),
        mix=np.array([s.mix_coeff for s in st], dtype=dt),
        detect_scale=dt.type(agc.detect_scale))

  def set_ac_coupler(self, enabled: bool) -> 'CarfacModel':
    """Debug switch: with the coupler off, bm equals bm_raw."""
    ac = (design_coeffs(self.params).car.ac_coeff if enabled else 0.0)
    self.coeffs = dataclasses.replace(
        self.coeffs, car=dataclasses.replace(self.coeffs.car, ac_coeff=ac))
    self._prepare_kernel_args()
    return self

  # -- state ---------------------------------------------------------------

  def reset_state(self) -> 'CarfacModel':
    """Put every ear at rest. Coefficients and ohc_health are kept."""
    n_ch = self.n_ch
    car_rest = car_mod.car_rest_values(self.coeffs.car)
    ihc_rest = ihc_mod.ihc_rest_values(self.coeffs.ihc, n_ch)
    for i, name in enumerate(car_mod.CarState.FIELDS):
      self._car[i] = car_rest[name]
    for i, name in enumerate(ihc_mod.IhcState.FIELDS):
      self._ihc[i] = ihc_rest[name]
    self._agc_mem[:] = 0
    self._agc_accum[:] = 0
    self._agc_phase[:] = 0
    return self

  def set_ohc_health(self, health, checked: bool = True) -> 'CarfacModel':
    """Set per-channel OHC health for all ears, or per ear if 2-D.

    Takes effect at the next AGC update. ``checked=False`` allows values
    outside [0, 1] for experiments.
    """
    h = np.asarray(health, dtype=np.float64)
    if h.ndim == 0:
      h = np.full(self.n_ch, float(h))
    if h.shape not in ((self.n_ch,), (self.n_ears, self.n_ch)):
      raise UsageError(
          f'ohc_health must have length {self.n_ch}, got shape {h.shape}')
    if not np.all(np.isfinite(h)):
      raise UsageError('ohc_health must be finite')
    if checked and (h.min() < 0 or h.max() > 1):
      raise UsageError('ohc_health values must lie in [0, 1]')
    self.ohc_health[:] = h
    return self

  def state_bytes(self) -> bytes:
    """Serialize all mutable state.

    Layout: 4-byte magic, then little-endian uint32 version, n_ears, n_ch,
    n_stages; then float64 arrays in order: CAR fields, IHC fields, AGC
    memory, AGC accumulators, AGC phases, ohc_health. Each block is C-order
    with the field index outermost and the ear index next.
    """
    header = STATE_MAGIC + struct.pack('<4I', STATE_VERSION, self.n_ears,
                                       self.n_ch, self.coeffs.agc.n_stages)
    body = b''.join(
        np.ascontiguousarray(a, dtype='<f8').tobytes()
        for a in (self._car, self._ihc, self._agc_mem, self._agc_accum,
                  self._agc_phase, self.ohc_health))
    return header + body

  def load_state_bytes(self, blob: bytes) -> 'CarfacModel':
    if blob[:4] != STATE_MAGIC:
      raise UsageError('not a CARFAC state blob')
    version, n_ears, n_ch, n_stages = struct.unpack('<4I', blob[4:20])
    if version != STATE_VERSION:
      raise UsageError(f'unsupported state version {version}')
    if (n_ears, n_ch, n_stages) != (self.n_ears, self.n_ch,
                                    self.coeffs.agc.n_stages):
      raise UsageError('state blob shape does not match this model')
    offset = 20
    for target in (self._car, self._ihc, self._agc_mem, self._agc_accum,
                   self._agc_phase, self.ohc_health):
      n = target.size * 8
      if len(blob) < offset + n:
        raise UsageError('truncated state blob')
      values = np.frombuffer(blob, dtype='<f8', count=target.size,
                             offset=offset).reshape(target.shape)
      target[...] = values
      offset += n
    if offset != len(blob):
      raise UsageError('trailing bytes in state blob')
    return self

  # -- running -------------------------------------------------------------

  def _check_audio(self, audio) -> np.ndarray:
    x = np.asarray(audio, dtype=np.float64)
    if x.ndim == 1:
      x = x[np.newaxis]
    if x.ndim != 2 or x.shape[0] != self.n_ears:
      raise UsageError(f'audio must be shaped (n_ears={self.n_ears}, '
                       f'n_samples), got {np.shape(audio)}')
    if not np.all(np.isfinite(x)):
      raise UsageError('audio contains non-finite samples')
    return x

  def run_segment(self, audio, open_loop: bool = False, linear: bool = False,
                  outputs: Iterable[str] = PLANES, engine: str = 'numba',
                  record_agc: bool = True) -> SegmentOutput:
    """Run audio shaped (n_ears, n_samples) (or 1-D for one ear).

    State carries over between calls, so splitting a signal into segments
    gives the same result as one call.
    """
    x = self._check_audio(audio)
    outputs = tuple(outputs)
    for name in outputs:
      if name not in PLANES:
        raise UsageError(f'unknown output plane {name!r}')
    if engine not in ENGINES:
      raise UsageError(f'engine must be one of {ENGINES}')
    if open_loop:
      self._car[car_mod.CarState.FIELDS.index('dzb')] = 0
      self._car[car_mod.CarState.FIELDS.index('dg')] = 0
    n_samp = x.shape[1]
    if engine == 'numba':
      out = self._run_numba(x, open_loop, linear, outputs, record_agc)
    else:
      out = self._run_python(x, open_loop, linear, outputs, record_agc)
    out.receptor_potential_valid = (
        self.coeffs.ihc.variant is IhcVariant.TWO_CAP)
    assert all(getattr(out, p) is None or getattr(out, p).shape[1] == n_samp
               for p in PLANES)
    return out

  def _alloc(self, name, outputs, n_samp):
    shape = (self.n_ears, n_samp if name in outputs else 0, self.n_ch)
    return np.zeros(shape, dtype=self.dtype)

  def _max_updates(self, n_samp: int) -> int:
    d0 = self.coeffs.agc.stages[0].decimation
    return n_samp // d0 + 1

  def _run_numba(self, x, open_loop, linear, outputs, record_agc):
    from carfac._kernel import run_kernel
    n_samp = x.shape[1]
    planes = {p: self._alloc(p, outputs, n_samp) for p in PLANES}
    n_rec = self._max_updates(n_samp) if record_agc else 0
    agc_out = np.zeros((n_rec, self.n_ears, self.n_ch), dtype=self.dtype)
    agc_times = np.zeros(n_rec, dtype=np.int64)
    audio = np.ascontiguousarray(x.T, dtype=self.dtype)
    k = self._kargs
    n_up = run_kernel(
        audio, k['a0'], k['c0'], k['r1'], k['zr'], k['h'], k['gp'],
        k['vel_scale'], k['v_offset'], k['ac_coeff'], k['use_delay'],
        bool(linear), k['ihc_variant'], k['ihc_params'], k['decim'],
        k['eps'], k['taps'], k['n_iter'], k['stage_gain'], k['mix'],
        k['detect_scale'], self.ohc_health, bool(open_loop), self._car,
        self._ihc, self._agc_mem, self._agc_accum, self._agc_phase,
        planes['nap'], planes['bm'], planes['bm_raw'],
        planes['receptor_potential'], planes['ohc'], agc_out, agc_times)
    out = SegmentOutput(**{p: (planes[p] if p in outputs else None)
                           for p in PLANES})
    if record_agc:
      out.agc = agc_out[:n_up]
      out.agc_times = agc_times[:n_up]
    return out

  def _run_python(self, x, open_loop, linear, outputs, record_agc):
    """Reference engine built from the per-block step functions."""
    coeffs = self.coeffs
    n_samp = x.shape[1]
    planes = {p: self._alloc(p, outputs, n_samp) for p in PLANES}
    agc_rec, agc_times = [], []
    decim0 = coeffs.agc.stages[0].decimation
    for t in range(n_samp):
      fired = False
      for e, ear in enumerate(self.ears):
        step = car_mod.car_step(x[e, t], coeffs.car, ear.car, linear)
        nap, rp = ihc_mod.ihc_step(step.bm, coeffs.ihc, ear.ihc)
        fired = agc_mod.agc_step(nap, coeffs.agc, ear.agc)
        for name, value in (('nap', nap), ('bm', step.bm),
                            ('bm_raw', step.bm_raw),
                            ('receptor_potential', rp),
                            ('ohc', ear.car.zb * step.nlf)):
          if name in outputs:
            planes[name][e, t] = value
      if not fired:
        continue
      agc_mod.cross_ear_mix([ear.agc for ear in self.ears], coeffs.agc)
      for e, ear in enumerate(self.ears):
        agc_mod.close_agc_loop(ear.agc.memory[0], self.ohc_health[e],
                               coeffs.car, ear.car, decim0, open_loop)
      if record_agc:
        agc_rec.append(self._agc_mem[:, 0].copy())
        agc_times.append(t)
    out = SegmentOutput(**{p: (planes[p] if p in outputs else None)
                           for p in PLANES})
    if record_agc:
      out.agc = (np.array(agc_rec, dtype=self.dtype) if agc_rec else
                 np.zeros((0, self.n_ears, self.n_ch), dtype=self.dtype))
      out.agc_times = np.array(agc_times, dtype=np.int64)
    return out


def design_and_init(params: Optional[CarfacDesignParams] = None,
                    n_ears: int = 1, dtype=np.float64) -> CarfacModel:
  if params is None:
    params = CarfacDesignParams()
  return CarfacModel(params, n_ears=n_ears, dtype=dtype)


def run_segment(model: CarfacModel, audio, open_loop: bool = False,
                linear: bool = False, **kwargs) -> SegmentOutput:
  return model.run_segment(audio, open_loop=open_loop, linear=linear,
                           **kwargs)


def set_ohc_health(model: CarfacModel, health,
                   checked: bool = True) -> CarfacModel:
  return model.set_ohc_health(health, checked=checked)


def reset_state(model: CarfacModel) -> CarfacModel:
  return model.reset_state()
