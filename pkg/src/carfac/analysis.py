"""Measurements built on the model: distortion products, synchrony,
AC-coupler corner, impairment gains and IHC transfer functions."""

from __future__ import annotations

import dataclasses
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import optimize

from carfac import ihc as ihc_mod
from carfac import stimuli
from carfac.design import (CarfacDesignParams, IhcVariant, default_design,
                           design_ihc_coeffs)
from carfac.model import CarfacModel

FOUR_TONES_HZ = (1600.0, 1800.0, 2000.0, 2200.0)
QUADRATIC_LINES_HZ = (200.0, 400.0, 600.0)
CUBIC_LINES_HZ = (1000.0, 1200.0, 1400.0, 2400.0)


def with_variant(params: CarfacDesignParams,
                 variant: IhcVariant) -> CarfacDesignParams:
  return dataclasses.replace(
      params, ihc=dataclasses.replace(params.ihc, variant=IhcVariant(variant)))


def fourier_component(x: np.ndarray, freq_hz: float, sample_rate: float,
                      axis: int = 0) -> np.ndarray:
  """Amplitude of the sinusoid at ``freq_hz`` in x (2|X(f)|/N).

  Exact for a pure tone when the window holds an integer number of cycles.
  """
  x = np.moveaxis(np.asarray(x, dtype=float), axis, 0)
  n = np.arange(x.shape[0])
  basis = np.exp(-2j * np.pi * freq_hz * n / sample_rate)
  return 2 * np.abs(np.tensordot(basis, x, axes=(0, 0))) / x.shape[0]


def integer_cycle_window(n_available: int, freq_hz: float,
                         sample_rate: float) -> int:
  """Largest sample count <= n_available closest to whole cycles."""
  period = sample_rate / freq_hz
  cycles = max(1, int(n_available // period))
  return min(n_available, int(round(cycles * period)))


# -- distortion products -----------------------------------------------------


@dataclasses.dataclass
class DistortionReport:
  freqs_hz: np.ndarray  # FFT bin frequencies
  magnitude: np.ndarray  # (n_bins, n_ch) linear amplitude
  line_hz: np.ndarray  # distortion lines examined
  line_db: np.ndarray  # (n_lines, n_ch) dB re 1
  line_snr_db: np.ndarray  # (n_lines,) best-channel level re local floor
  dc_re_strongest_db: np.ndarray  # (n_ch,)
  detected: Dict[float, bool]

  def all_detected(self) -> bool:
    return all(self.detected.values())

  def max_dc_re_strongest_db(self) -> float:
    return float(np.max(self.dc_re_strongest_db))


def analyze_distortion(level_dbfs: float = -20.0, duration: float = 1.5,
                       analysis_seconds: float = 0.5,
                       freqs_hz: Sequence[float] = FOUR_TONES_HZ,
                       params: Optional[CarfacDesignParams] = None,
                       ac_coupler: bool = True,
                       detect_snr_db: float = 20.0) -> DistortionReport:
  """Four-tone closed-loop run; Hann-windowed FFT of the BM steady state.

  With the default 0.5 s window at 22050 Hz, every primary and distortion
  line sits on an exact 2 Hz bin.
  """
  params = params or default_design()
  fs = params.sample_rate
  model = CarfacModel(params)
  if not ac_coupler:
    model.set_ac_coupler(False)
  x = stimuli.multitone(freqs_hz, level_dbfs, duration, fs)
  bm = model.run_segment(x, outputs=('bm',), record_agc=False).bm[0]
  n = int(round(analysis_seconds * fs))
  seg = bm[-n:]
  window = np.hanning(n + 1)[:n]
  spec = np.abs(np.fft.rfft(seg * window[:, None], axis=0))
  spec /= window.sum() / 2
  freqs = np.fft.rfftfreq(n, 1 / fs)
  lines = np.array(QUADRATIC_LINES_HZ + CUBIC_LINES_HZ)
  bins = np.array([int(np.argmin(np.abs(freqs - f))) for f in lines])
  tiny = np.finfo(float).tiny
  line_mag = spec[bins]
  line_db = 20 * np.log10(line_mag + tiny)
  # local floor: strongest bin 3..20 bins above each line, any channel
  snr = np.empty(len(lines))
  for i, b in enumerate(bins):
    floor = spec[b + 3:b + 21].max(axis=0)
    snr[i] = 20 * np.log10((line_mag[i] + tiny) / (floor + tiny)).max()
  strongest = line_mag.max(axis=0)
  dc_rel = 20 * np.log10((spec[0] + tiny) / (strongest + tiny))
  detected = {float(f): bool(s >= detect_snr_db) for f, s in zip(lines, snr)}
  return DistortionReport(freqs, spec, lines, line_db, snr, dc_rel, detected)


# -- tone bursts and synchrony -----------------------------------------------


@dataclasses.dataclass
class SynchronyResult:
  freq_hz: float
  channel: int
  window: tuple  # (start, stop) samples
  ac: Dict[str, float]  # per IHC variant
  dc: Dict[str, float]
  traces: Dict[str, Dict[str, np.ndarray]]  # variant -> plane -> (n,) trace

  @property
  def ac_ratio(self) -> float:
    return self.ac['two_cap'] / self.ac['one_cap']

  @property
  def vector_strength(self) -> Dict[str, float]:
    return {v: self.ac[v] / self.dc[v] for v in self.ac}


def best_channel(bm: np.ndarray) -> int:
  """Channel with the largest BM peak response, shape (n_samples, n_ch)."""
  return int(np.argmax(np.abs(bm).max(axis=0)))


def toneburst_compare(freq_hz: float = 3000.0, level_dbfs: float = -40.0,
                      duration: float = 0.010, post_silence: float = 0.020,
                      channel: Optional[int] = None,
                      params: Optional[CarfacDesignParams] = None
                      ) -> SynchronyResult:
  """Run two_cap and one_cap on an unramped tone burst.

  The AC component is the Fourier amplitude at ``freq_hz`` of the NAP over
  the last half of the burst, trimmed to whole cycles; DC is its mean. The
  channel defaults to the one with the largest BM response.
  """
  params = params or default_design()
  fs = params.sample_rate
  x = stimuli.toneburst(freq_hz, level_dbfs, duration, fs,
                        post_silence=post_silence)
  n_burst = int(round(duration * fs))
  n_win = integer_cycle_window(n_burst // 2, freq_hz, fs)
  start, stop = n_burst - n_win, n_burst
  traces, ac, dc = {}, {}, {}
  for variant in ('two_cap', 'one_cap'):
    model = CarfacModel(with_variant(params, variant))
    out = model.run_segment(x, outputs=('nap', 'bm', 'receptor_potential'),
                            record_agc=False)
    if channel is None:
      channel = best_channel(out.bm[0, :n_burst])
    nap = out.nap[0, :, channel]
    traces[variant] = dict(bm=out.bm[0, :, channel].copy(), nap=nap.copy(),
                           receptor_potential=out.receptor_potential[
                               0, :, channel].copy())
    ac[variant] = float(fourier_component(nap[start:stop], freq_hz, fs))
    dc[variant] = float(np.mean(nap[start:stop]))
  return SynchronyResult(freq_hz, channel, (start, stop), ac, dc, traces)


# -- AC coupler --------------------------------------------------------------


def ac_coupler_gain(freq_hz: float, params: Optional[CarfacDesignParams] = None,
                    settle_seconds: float = 0.5, channel: int = -1) -> float:
  """Measured |bm| / |bm_raw| for a steady tone, linear open-loop."""
  params = params or default_design()
  fs = params.sample_rate
  model = CarfacModel(params)
  n_win = integer_cycle_window(int(fs), freq_hz, fs)
  x = stimuli.tone(freq_hz, -40, settle_seconds + n_win / fs, fs)
  out = model.run_segment(x, open_loop=True, linear=True,
                          outputs=('bm', 'bm_raw'), record_agc=False)
  bm = out.bm[0, -n_win:, channel]
  raw = out.bm_raw[0, -n_win:, channel]
  return float(fourier_component(bm, freq_hz, fs) /
               fourier_component(raw, freq_hz, fs))


def measure_ac_corner(params: Optional[CarfacDesignParams] = None,
                      lo_hz: float = 5.0, hi_hz: float = 80.0) -> float:
  """Frequency where the measured BM highpass gain crosses 1/sqrt(2)."""
  target = 1 / np.sqrt(2)
  return float(optimize.brentq(
      lambda f: ac_coupler_gain(f, params) - target, lo_hz, hi_hz,
      xtol=1e-3))


# -- impairment --------------------------------------------------------------


@dataclasses.dataclass
class GainProfile:
  peak_gain_db: np.ndarray  # (n_ch,)
  best_freq_hz: np.ndarray  # (n_ch,)


def small_signal_gains(health=None, params: Optional[CarfacDesignParams] = None,
                       settle_seconds: float = 0.1,
                       n_fft: int = 8192) -> GainProfile:
  """Per-channel peak tone sensitivity of the settled quiet cochlea.

  The model settles closed-loop on silence, so the undamping reaches
  ``health`` times its maximum; then a linear open-loop impulse response
  gives every channel's transfer function, whose peak is the sensitivity
  to a CF tone at low level.
  """
  params = params or default_design()
  fs = params.sample_rate
  model = CarfacModel(params)
  if health is not None:
    model.set_ohc_health(health)
  model.run_segment(np.zeros(int(round(settle_seconds * fs))),
                    record_agc=False, outputs=())
  imp = np.zeros(n_fft)
  imp[0] = 1.0
  bm = model.run_segment(imp, open_loop=True, linear=True, outputs=('bm',),
                         record_agc=False).bm[0]
  spec = np.abs(np.fft.rfft(bm, axis=0))
  freqs = np.fft.rfftfreq(n_fft, 1 / fs)
  return GainProfile(20 * np.log10(spec.max(axis=0)),
                     freqs[spec.argmax(axis=0)])


def tone_sensitivity(channel: int, freq_hz: float, health=None,
                     level_dbfs: float = -60.0, duration: float = 0.3,
                     params: Optional[CarfacDesignParams] = None) -> float:
  """Closed-loop steady-state BM amplitude re input, in dB."""
  params = params or default_design()
  fs = params.sample_rate
  model = CarfacModel(params)
  if health is not None:
    model.set_ohc_health(health)
  x = stimuli.tone(freq_hz, level_dbfs, duration, fs)
  bm = model.run_segment(x, outputs=('bm',), record_agc=False).bm[0, :,
                                                                  channel]
  n_win = integer_cycle_window(x.size // 3, freq_hz, fs)
  amp = fourier_component(bm[-n_win:], freq_hz, fs)
  return float(20 * np.log10(amp / stimuli.dbfs_to_amplitude(level_dbfs)))


def basal_health(n_ch: int, n_zero: Optional[int] = None) -> np.ndarray:
  """Health vector with the basal ``n_zero`` channels (default half) at 0."""
  h = np.ones(n_ch)
  h[:n_ch // 2 if n_zero is None else n_zero] = 0.0
  return h


# -- IHC transfer functions --------------------------------------------------


def ihc_transfer_ratio(freqs_hz: Sequence[float],
                       sample_rate: float = 22050.0) -> np.ndarray:
  """|H_two_cap| / |H_one_cap| of the IHCs linearized about rest."""
  params = default_design(sample_rate).ihc
  two = design_ihc_coeffs(
      dataclasses.replace(params, variant=IhcVariant.TWO_CAP), sample_rate)
  one = design_ihc_coeffs(
      dataclasses.replace(params, variant=IhcVariant.ONE_CAP), sample_rate)
  h2 = ihc_mod.small_signal_transfer(two, freqs_hz, sample_rate)
  h1 = ihc_mod.small_signal_transfer(one, freqs_hz, sample_rate)
  return np.abs(h2) / np.abs(h1)


def measured_ihc_transfer(variant, freq_hz: float, level_dbfs: float = -80.0,
                          sample_rate: float = 22050.0,
                          duration: float = 0.2) -> float:
  """|NAP/BM| at ``freq_hz`` measured by driving the IHC directly."""
  coeffs = design_ihc_coeffs(
      dataclasses.replace(default_design(sample_rate).ihc,
                          variant=IhcVariant(variant)), sample_rate)
  x = stimuli.tone(freq_hz, level_dbfs, duration, sample_rate)
  state = ihc_mod.ihc_init_state(coeffs, 1)
  nap = np.empty_like(x)
  for i, v in enumerate(x):
    nap[i] = ihc_mod.ihc_step(np.array([v]), coeffs, state)[0][0]
  n_win = integer_cycle_window(x.size // 2, freq_hz, sample_rate)
  return float(fourier_component(nap[-n_win:], freq_hz, sample_rate) /
               fourier_component(x[-n_win:], freq_hz, sample_rate))
