"""Golden-data dump and comparison.

A golden directory holds ``manifest.json``, design coefficient tables
(``car_coeffs.csv``, ``agc_coeffs.csv``, ``ihc_coeffs.csv``) and one
subdirectory per case. A case stores its input audio and the reference
output planes as raw64 files, plus the steps needed to re-run it:

    {"name": ..., "n_ears": 1, "overrides": {"car.max_zeta": 0.35},
     "ohc_health": null | [...], "steps": [{"n": 4000, "open_loop": false,
     "linear": false}], "stride": 5, "planes": ["nap", "bm"],
     "final_state": ["agc_memory0"]}

Plane files are named ``<plane>_ear<e>.raw64`` and hold samples at the
case's stride. Comparison re-runs every case with this implementation and
reports the max abs difference per plane.
"""

from __future__ import annotations

import dataclasses
import json
import os
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from carfac import audio_io, stimuli
from carfac.design import (CarfacDesignParams, IhcVariant, default_design,
                           design_coeffs)
from carfac.errors import UsageError
from carfac.model import CarfacModel

ENV_VAR = 'CARFAC_GOLDEN_DIR'
TOLERANCE = {'float64': 1e-6, 'float32': 1e-3}


def default_golden_dir() -> Path:
  env = os.environ.get(ENV_VAR)
  if env:
    return Path(env)
  return Path(__file__).resolve().parents[2] / 'tests' / 'golden'


# -- design tables -----------------------------------------------------------


def car_coeff_table(coeffs) -> Dict[str, np.ndarray]:
  car = coeffs.car
  return {
      'pole_hz': coeffs.pole_freqs, 'a0': car.a0, 'c0': car.c0, 'r1': car.r1,
      'zr': car.zr, 'h': car.h, 'g_p0': car.g_parabola[:, 0],
      'g_p1': car.g_parabola[:, 1], 'g_p2': car.g_parabola[:, 2],
      'g_init': car.g0}


def agc_coeff_table(coeffs) -> Dict[str, np.ndarray]:
  st = coeffs.agc.stages
  return {
      'decimation': np.array([s.decimation for s in st], dtype=float),
      'epsilon': np.array([s.epsilon for s in st]),
      'fir_left': np.array([s.fir_taps[0] for s in st]),
      'fir_mid': np.array([s.fir_taps[1] for s in st]),
      'fir_right': np.array([s.fir_taps[2] for s in st]),
      'n_iterations': np.array([s.n_iterations for s in st], dtype=float),
      'stage_gain': np.array([s.stage_gain for s in st]),
      'mix_coeff': np.array([s.mix_coeff for s in st]),
  }


def ihc_coeff_table(coeffs) -> Dict[str, float]:
  ihc = coeffs.ihc
  keys = ('lpf_coeff', 'out1_rate', 'in1_rate', 'out2_rate', 'in2_rate',
          'rest_cap1', 'rest_cap2', 'output_gain', 'quiescent_output')
  table = {k: float(getattr(ihc, k)) for k in keys}
  table['detect_scale'] = float(coeffs.agc.detect_scale)
  table['ac_coeff'] = float(coeffs.car.ac_coeff)
  return table


def write_table_csv(path, table: Dict[str, np.ndarray]) -> None:
  names = list(table)
  data = np.column_stack([np.asarray(table[n], dtype=float) for n in names])
  np.savetxt(path, data, delimiter=',', fmt='%.17g', header=','.join(names),
             comments='')


def read_table_csv(path) -> Dict[str, np.ndarray]:
  with open(path) as f:
    names = f.readline().strip().split(',')
    data = np.loadtxt(f, delimiter=',', ndmin=2)
  return {n: data[:, i] for i, n in enumerate(names)}


def write_kv_csv(path, table: Dict[str, float]) -> None:
  with open(path, 'w') as f:
    f.write('key,value\n')
    for k, v in table.items():
      f.write(f'{k},{v!r}\n')


def read_kv_csv(path) -> Dict[str, float]:
  with open(path) as f:
    next(f)
    return {k: float(v) for k, v in (line.strip().split(',') for line in f
                                     if line.strip())}


def write_design_tables(directory, coeffs) -> None:
  d = Path(directory)
  write_table_csv(d / 'car_coeffs.csv', car_coeff_table(coeffs))
  write_table_csv(d / 'agc_coeffs.csv', agc_coeff_table(coeffs))
  write_kv_csv(d / 'ihc_coeffs.csv', ihc_coeff_table(coeffs))


# -- cases -------------------------------------------------------------------


@dataclasses.dataclass
class GoldenCase:
  name: str
  description: str
  audio: np.ndarray  # (n_ears, n_samples)
  steps: List[dict]
  planes: List[str]
  stride: int = 1
  overrides: Dict[str, object] = dataclasses.field(default_factory=dict)
  ohc_health: Optional[List[float]] = None
  final_state: List[str] = dataclasses.field(default_factory=list)

  @property
  def n_ears(self) -> int:
    return self.audio.shape[0]

  def manifest_entry(self) -> dict:
    return dict(name=self.name, description=self.description,
                n_ears=self.n_ears, steps=self.steps, planes=self.planes,
                stride=self.stride, overrides=self.overrides,
                ohc_health=self.ohc_health, final_state=self.final_state)


def apply_overrides(params: CarfacDesignParams,
                    overrides: Dict[str, object]) -> CarfacDesignParams:
  """Apply dotted overrides like ``{'car.max_zeta': 0.35}``."""
  for key, value in overrides.items():
    block, _, field = key.partition('.')
    sub = getattr(params, block, None)
    if not dataclasses.is_dataclass(sub) or field not in {
        f.name for f in dataclasses.fields(sub)}:
      raise UsageError(f'unknown design override {key!r}')
    if field == 'variant':
      value = IhcVariant(value)
    params = dataclasses.replace(
        params, **{block: dataclasses.replace(sub, **{field: value})})
  return params


def canonical_cases(sample_rate: float = 22050.0) -> List[GoldenCase]:
  """The canonical stimuli used for cross-implementation comparison."""
  fs = sample_rate
  one = lambda x: np.asarray(x, dtype=np.float64)[np.newaxis]
  closed = lambda n: [dict(n=n, open_loop=False, linear=False)]
  noise_1s = stimuli.noise(-20, 1.0, fs, seed=1)
  noise_short = stimuli.noise(-20, 0.1, fs, seed=2)
  burst = stimuli.toneburst(3000, -40, 0.010, fs, post_silence=0.020)
  n_burst = burst.size
  health = np.ones(71)
  health[:35] = 0
  ramp_noise = stimuli.noise(-15, 0.1, fs, seed=3)
  cases = [
      GoldenCase('impulse_linear', 'unit impulse, linear open-loop',
                 one(stimuli.impulse(2048 / fs, fs)),
                 [dict(n=2048, open_loop=True, linear=True)], ['bm']),
      GoldenCase('noise_1s', '1 s noise at -20 dBFS, closed loop',
                 one(noise_1s), closed(noise_1s.size), ['nap', 'bm'],
                 stride=10, final_state=['agc_memory0']),
      GoldenCase('toneburst_two_cap', '3 kHz 10 ms -40 dBFS burst, two_cap',
                 one(burst), closed(n_burst),
                 ['nap', 'bm', 'receptor_potential']),
      GoldenCase('toneburst_one_cap', '3 kHz 10 ms -40 dBFS burst, one_cap',
                 one(burst), closed(n_burst), ['nap', 'bm'],
                 overrides={'ihc.variant': 'one_cap'}),
      GoldenCase('just_hwr', 'noise, half-wave rectifier IHC',
                 one(noise_short), closed(noise_short.size), ['nap', 'bm'],
                 stride=3, overrides={'ihc.variant': 'just_hwr'}),
      GoldenCase('binaural', 'noise in ear 0, silence in ear 1',
                 np.stack([noise_short, np.zeros_like(noise_short)]),
                 closed(noise_short.size), ['nap', 'bm'], stride=3,
                 final_state=['agc_memory0']),
      GoldenCase('delay_buffer', 'noise, delay-buffer CAR',
                 one(noise_short), closed(noise_short.size), ['nap', 'bm'],
                 stride=3, overrides={'car.use_delay_buffer': True}),
      GoldenCase('max_zeta_035', 'noise, max_zeta 0.35',
                 one(noise_short), closed(noise_short.size), ['nap', 'bm'],
                 stride=3, overrides={'car.max_zeta': 0.35}),
      GoldenCase('basal_health_zero', 'noise, ohc_health 0 on channels 0-34',
                 one(noise_short), closed(noise_short.size), ['nap', 'bm'],
                 stride=3, ohc_health=health.tolist()),
      GoldenCase('open_loop_mid_ramp',
                 'closed loop for 1003 samples, then open loop',
                 one(ramp_noise),
                 [dict(n=1003, open_loop=False, linear=False),
                  dict(n=ramp_noise.size - 1003, open_loop=True,
                       linear=False)],
                 ['nap', 'bm'], stride=2),
  ]
  return cases


def run_case(case_entry: dict, audio: np.ndarray, dtype=np.float64,
             engine: str = 'numba') -> Dict[str, np.ndarray]:
  """Run one manifest entry with this implementation.

  Returns planes keyed ``<plane>_ear<e>`` at the case stride, plus any
  requested final-state vectors.
  """
  params = apply_overrides(default_design(22050.0),
                           case_entry.get('overrides', {}))
  model = CarfacModel(params, n_ears=case_entry['n_ears'], dtype=dtype)
  if case_entry.get('ohc_health') is not None:
    model.set_ohc_health(case_entry['ohc_health'])
  planes = case_entry['planes']
  chunks = {p: [] for p in planes}
  start = 0
  for step in case_entry['steps']:
    seg = audio[:, start:start + step['n']]
    out = model.run_segment(seg, open_loop=step['open_loop'],
                            linear=step['linear'], outputs=planes,
                            engine=engine, record_agc=False)
    for p in planes:
      chunks[p].append(out.plane(p))
    start += step['n']
  stride = case_entry.get('stride', 1)
  result = {}
  for p in planes:
    full = np.concatenate(chunks[p], axis=1)
    for e in range(model.n_ears):
      result[f'{p}_ear{e}'] = np.asarray(full[e, ::stride], dtype=np.float64)
  for name in case_entry.get('final_state', []):
    if name == 'agc_memory0':
      for e in range(model.n_ears):
        result[f'agc_memory0_ear{e}'] = np.asarray(
            model.ears[e].agc.memory[0], dtype=np.float64)[np.newaxis]
    else:
      raise UsageError(f'unknown final-state field {name!r}')
  return result


def write_case(directory, case: GoldenCase,
               outputs: Dict[str, np.ndarray]) -> None:
  d = Path(directory) / case.name
  d.mkdir(parents=True, exist_ok=True)
  audio_io.write_raw64(d / 'input.raw64', case.audio.T)
  for key, plane in outputs.items():
    audio_io.write_raw64(d / f'{key}.raw64', plane)


def write_manifest(directory, cases: List[GoldenCase], source: str) -> None:
  manifest = dict(format=1, source=source, sample_rate=22050.0,
                  cases=[c.manifest_entry() for c in cases])
  Path(directory, 'manifest.json').write_text(json.dumps(manifest, indent=1))


def dump(directory, source: str = 'this implementation') -> List[str]:
  """Write design tables and all canonical cases computed by this build."""
  d = Path(directory)
  d.mkdir(parents=True, exist_ok=True)
  write_design_tables(d, design_coeffs(default_design(22050.0)))
  cases = canonical_cases()
  for case in cases:
    write_case(d, case, run_case(case.manifest_entry(), case.audio))
  write_manifest(d, cases, source)
  return [c.name for c in cases]


@dataclasses.dataclass
class PlaneDiff:
  case: str
  plane: str
  max_abs_diff: float
  sample: int  # index in the strided plane
  channel: int
  tolerance: float

  @property
  def ok(self) -> bool:
    return self.max_abs_diff < self.tolerance


def _diff(case, name, got, want, tol) -> PlaneDiff:
  if got.shape != want.shape:
    return PlaneDiff(case, name, float('inf'), -1, -1, tol)
  d = np.abs(got - want)
  if d.size == 0:
    return PlaneDiff(case, name, 0.0, 0, 0, tol)
  if not np.all(np.isfinite(d)):
    idx = np.unravel_index(np.argmax(~np.isfinite(d)), d.shape)
    return PlaneDiff(case, name, float('inf'), int(idx[0]), int(idx[1]), tol)
  idx = np.unravel_index(np.argmax(d), d.shape)
  return PlaneDiff(case, name, float(d[idx]), int(idx[0]), int(idx[1]), tol)


def compare_design(directory) -> List[PlaneDiff]:
  d = Path(directory)
  coeffs = design_coeffs(default_design(22050.0))
  diffs = []
  for fname, mine in (('car_coeffs.csv', car_coeff_table(coeffs)),
                      ('agc_coeffs.csv', agc_coeff_table(coeffs))):
    want = read_table_csv(d / fname)
    for key, ref in want.items():
      got = np.asarray(mine[key], dtype=float)
      diffs.append(_diff('design', f'{fname}:{key}', got[:, None],
                         ref[:, None], TOLERANCE['float64']))
  want = read_kv_csv(d / 'ihc_coeffs.csv')
  mine = ihc_coeff_table(coeffs)
  for key, ref in want.items():
    diffs.append(_diff('design', f'ihc_coeffs.csv:{key}',
                       np.array([[mine[key]]]), np.array([[ref]]),
                       TOLERANCE['float64']))
  return diffs


def compare(directory, dtype=np.float64, cases: Optional[List[str]] = None,
            engine: str = 'numba') -> List[PlaneDiff]:
  """Compare this build against a golden directory; returns every diff."""
  d = Path(directory)
  manifest_path = d / 'manifest.json'
  if not manifest_path.exists():
    raise UsageError(f'no golden manifest at {manifest_path}')
  manifest = json.loads(manifest_path.read_text())
  tol = TOLERANCE[np.dtype(dtype).name]
  diffs = compare_design(d)
  for entry in manifest['cases']:
    if cases and entry['name'] not in cases:
      continue
    case_dir = d / entry['name']
    audio = audio_io.read_raw64(case_dir / 'input.raw64').T
    got = run_case(entry, audio, dtype=dtype, engine=engine)
    for key, plane in got.items():
      want = audio_io.read_raw64(case_dir / f'{key}.raw64')
      diffs.append(_diff(entry['name'], key, plane, want, tol))
  return diffs


def worst(diffs: List[PlaneDiff]) -> PlaneDiff:
  return max(diffs, key=lambda x: x.max_abs_diff / x.tolerance)
