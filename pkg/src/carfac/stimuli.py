"""Synthetic test signals.

Levels are dBFS relative to a full-scale sine: a tone at 0 dBFS has peak
amplitude 1, and noise at L dBFS has the RMS of a sine at L dBFS.
"""

from __future__ import annotations

import dataclasses
from typing import Optional, Sequence

import numpy as np

from carfac.errors import UsageError

KINDS = ('silence', 'impulse', 'tone', 'multitone', 'noise', 'toneburst',
         'chirp')


def dbfs_to_amplitude(level_dbfs: float) -> float:
  return float(10.0 ** (level_dbfs / 20.0))


def _n_samples(duration: float, sample_rate: float) -> int:
  n = int(round(duration * sample_rate))
  if n < 0:
    raise UsageError('duration must be nonnegative')
  return n


def silence(duration: float, sample_rate: float) -> np.ndarray:
  return np.zeros(_n_samples(duration, sample_rate))


def impulse(duration: float, sample_rate: float,
            amplitude: float = 1.0) -> np.ndarray:
  x = silence(duration, sample_rate)
  if x.size:
    x[0] = amplitude
  return x


def raised_cosine_ramp(x: np.ndarray, ramp_seconds: float,
                       sample_rate: float) -> np.ndarray:
  n = min(int(round(ramp_seconds * sample_rate)), x.size // 2)
  if n <= 0:
    return x
  ramp = 0.5 - 0.5 * np.cos(np.pi * (np.arange(n) + 0.5) / n)
  y = x.copy()
  y[:n] *= ramp
  y[-n:] *= ramp[::-1]
  return y


def tone(freq_hz: float, level_dbfs: float, duration: float,
         sample_rate: float, ramp_seconds: float = 0.0,
         phase: float = 0.0) -> np.ndarray:
  t = np.arange(_n_samples(duration, sample_rate)) / sample_rate
  x = dbfs_to_amplitude(level_dbfs) * np.sin(2 * np.pi * freq_hz * t + phase)
  return raised_cosine_ramp(x, ramp_seconds, sample_rate)


def toneburst(freq_hz: float, level_dbfs: float, duration: float,
              sample_rate: float, pre_silence: float = 0.0,
              post_silence: float = 0.0) -> np.ndarray:
  """Tone with abrupt onset and offset, optionally padded with silence."""
  return np.concatenate([
      silence(pre_silence, sample_rate),
      tone(freq_hz, level_dbfs, duration, sample_rate),
      silence(post_silence, sample_rate)])


def multitone(freqs_hz: Sequence[float], levels_dbfs, duration: float,
              sample_rate: float, ramp_seconds: float = 0.0) -> np.ndarray:
  levels = np.broadcast_to(np.asarray(levels_dbfs, dtype=float),
                           (len(freqs_hz),))
  x = sum(tone(f, l, duration, sample_rate) for f, l in zip(freqs_hz, levels))
  return raised_cosine_ramp(np.asarray(x, dtype=float), ramp_seconds,
                            sample_rate)


def noise(level_dbfs: float, duration: float, sample_rate: float,
          seed: int = 0) -> np.ndarray:
  rng = np.random.default_rng(seed)
  rms = dbfs_to_amplitude(level_dbfs) / np.sqrt(2)
  return rms * rng.standard_normal(_n_samples(duration, sample_rate))


def chirp(f_start: float, f_stop: float, level_dbfs: float, duration: float,
          sample_rate: float) -> np.ndarray:
  """Exponential sweep from f_start to f_stop."""
  n = _n_samples(duration, sample_rate)
  t = np.arange(n) / sample_rate
  k = np.log(f_stop / f_start) / max(duration, 1e-12)
  phase = 2 * np.pi * f_start * np.expm1(k * t) / k
  return dbfs_to_amplitude(level_dbfs) * np.sin(phase)


@dataclasses.dataclass
class StimulusSpec:
  kind: str = 'noise'
  duration: float = 1.0
  freq_hz: float = 1000.0
  freqs_hz: Sequence[float] = (1600.0, 1800.0, 2000.0, 2200.0)
  level_dbfs: float = -40.0
  ramp_seconds: float = 0.0
  seed: int = 0
  f_stop_hz: Optional[float] = None

  def render(self, sample_rate: float) -> np.ndarray:
    k = self.kind
    if k == 'silence':
      return silence(self.duration, sample_rate)
    if k == 'impulse':
      return impulse(self.duration, sample_rate)
    if k == 'tone':
      return tone(self.freq_hz, self.level_dbfs, self.duration, sample_rate,
                  self.ramp_seconds)
    if k == 'toneburst':
      return toneburst(self.freq_hz, self.level_dbfs, self.duration,
                       sample_rate)
    if k == 'multitone':
      return multitone(self.freqs_hz, self.level_dbfs, self.duration,
                       sample_rate, self.ramp_seconds)
    if k == 'noise':
      return noise(self.level_dbfs, self.duration, sample_rate, self.seed)
    if k == 'chirp':
      f_stop = self.f_stop_hz if self.f_stop_hz else 0.45 * sample_rate
      return chirp(self.freq_hz, f_stop, self.level_dbfs, self.duration,
                   sample_rate)
    raise UsageError(f'unknown stimulus kind {k!r}; expected one of {KINDS}')


def parse_stimulus(text: str) -> StimulusSpec:
  """Parse ``kind[:key=value,...]``, e.g. ``tone:freq=3000,level=-40,dur=0.1``.

  Keys: freq, freqs (slash-separated), level, dur, ramp, seed, stop.
  """
  kind, _, rest = text.partition(':')
  spec = StimulusSpec(kind=kind.strip())
  if spec.kind not in KINDS:
    raise UsageError(f'unknown stimulus kind {spec.kind!r}')
  for item in filter(None, rest.split(',')):
    key, sep, value = item.partition('=')
    if not sep:
      raise UsageError(f'bad stimulus option {item!r}')
    key = key.strip()
    try:
      if key == 'freq':
        spec.freq_hz = float(value)
      elif key == 'freqs':
        spec.freqs_hz = tuple(float(v) for v in value.split('/'))
      elif key == 'level':
        spec.level_dbfs = float(value)
      elif key == 'dur':
        spec.duration = float(value)
      elif key == 'ramp':
        spec.ramp_seconds = float(value)
      elif key == 'seed':
        spec.seed = int(value)
      elif key == 'stop':
        spec.f_stop_hz = float(value)
      else:
        raise UsageError(f'unknown stimulus option {key!r}')
    except ValueError as err:
      raise UsageError(f'bad value for {key!r}: {value!r}') from err
  return spec
