"""Segment-length benchmark of run_segment on monaural noise."""

from __future__ import annotations

import dataclasses
import time
from typing import List, Optional, Sequence

import numpy as np

from carfac import stimuli
from carfac.design import CarfacDesignParams, default_design
from carfac.model import CarfacModel

DEFAULT_LENGTHS = (0.01, 0.1, 1.0, 10.0)
DEFAULT_CHUNKS = (0.01, 0.1)  # 1 s split into these


@dataclasses.dataclass
class BenchRow:
  label: str
  audio_seconds: float
  chunk_seconds: Optional[float]
  delay_buffer: bool
  wall_seconds: float

  @property
  def rtf(self) -> float:
    return self.wall_seconds / self.audio_seconds


def _model(delay_buffer: bool, params: Optional[CarfacDesignParams],
           engine: str) -> CarfacModel:
  params = params or default_design()
  params = dataclasses.replace(
      params, car=dataclasses.replace(params.car,
                                      use_delay_buffer=delay_buffer))
  model = CarfacModel(params)
  # warm-up compiles (or loads cached) machine code outside the timing
  model.run_segment(np.zeros(64), engine=engine)
  model.reset_state()
  return model


def time_run(model: CarfacModel, audio: np.ndarray, chunk: Optional[int],
             repeats: int, engine: str = 'numba') -> float:
  """Best-of-``repeats`` wall time; design and warm-up are excluded."""
  best = np.inf
  for _ in range(repeats):
    model.reset_state()
    t0 = time.perf_counter()
    if chunk is None:
      model.run_segment(audio, engine=engine)
    else:
      for i in range(0, audio.size, chunk):
        model.run_segment(audio[i:i + chunk], engine=engine)
    best = min(best, time.perf_counter() - t0)
  return float(best)


def run_benchmark(lengths: Sequence[float] = DEFAULT_LENGTHS,
                  chunks: Sequence[float] = DEFAULT_CHUNKS,
                  delay_buffer_compare: bool = True, repeats: int = 3,
                  seed: int = 0, engine: str = 'numba',
                  params: Optional[CarfacDesignParams] = None
                  ) -> List[BenchRow]:
  fs = (params or default_design()).sample_rate
  modes = (False, True) if delay_buffer_compare else (False,)
  rows = []
  for delay in modes:
    model = _model(delay, params, engine)
    for seconds in lengths:
      audio = stimuli.noise(-20, seconds, fs, seed=seed)
      reps = repeats if seconds < 5 else 1
      rows.append(BenchRow(f'{seconds:g} s', seconds, None, delay,
                           time_run(model, audio, None, reps, engine)))
    audio = stimuli.noise(-20, 1.0, fs, seed=seed)
    for chunk_s in chunks:
      chunk = max(1, int(round(chunk_s * fs)))
      rows.append(BenchRow(f'1 s in {chunk_s * 1000:g} ms chunks', 1.0,
                           chunk_s, delay,
                           time_run(model, audio, chunk, repeats, engine)))
  return rows


def format_table(rows: Sequence[BenchRow]) -> str:
  lines = ['case,delay_buffer,audio_s,wall_s,rtf']
  for r in rows:
    lines.append(f'{r.label},{int(r.delay_buffer)},{r.audio_seconds:g},'
                 f'{r.wall_seconds:.6f},{r.rtf:.5f}')
  return '\n'.join(lines)


def delay_buffer_speedup(rows: Sequence[BenchRow]) -> Optional[float]:
  """Ripple wall time over delay-buffer wall time for the longest segment."""
  whole = [r for r in rows if r.chunk_seconds is None]
  if not whole:
    return None
  longest = max(r.audio_seconds for r in whole)
  ripple = [r.wall_seconds for r in whole
            if r.audio_seconds == longest and not r.delay_buffer]
  delay = [r.wall_seconds for r in whole
           if r.audio_seconds == longest and r.delay_buffer]
  if not ripple or not delay:
    return None
  return ripple[0] / delay[0]
