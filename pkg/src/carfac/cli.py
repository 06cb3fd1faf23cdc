"""Command-line entry point: ``carfac <subcommand> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from carfac import analysis, audio_io, bench, golden, stimuli
from carfac.design import (CarfacDesignParams, IhcVariant, default_design,
                           design_coeffs)
from carfac.errors import CarfacError, UsageError
from carfac.model import PLANES, CarfacModel

EXIT_FAIL = 1
EXIT_USAGE = 2


# -- shared options ----------------------------------------------------------


def _add_design_args(p: argparse.ArgumentParser) -> None:
  p.add_argument('--sample-rate', type=float, default=22050.0,
                 help='model sample rate in Hz (default 22050)')
  p.add_argument('--ihc', choices=[v.value for v in IhcVariant],
                 default='two_cap', help='IHC model')
  p.add_argument('--delay-buffer', action='store_true',
                 help='channel-parallel CAR with one sample delay per stage')
  p.add_argument('--max-zeta', type=float, default=None)
  p.add_argument('--ac-corner-hz', type=float, default=None)


def _add_run_args(p: argparse.ArgumentParser) -> None:
  p.add_argument('--open-loop', action='store_true')
  p.add_argument('--linear', action='store_true')
  p.add_argument('--ohc-health', default=None,
                 help='constant in [0,1], "basal:N" (first N channels 0), or '
                      'a text file with one value per channel')
  p.add_argument('--chunk-ms', type=float, default=0.0,
                 help='run in segments of this length (0 = one segment)')


def _add_input_args(p: argparse.ArgumentParser) -> None:
  src = p.add_mutually_exclusive_group(required=True)
  src.add_argument('--input', type=Path, help='WAV file (mono or stereo)')
  src.add_argument('--stimulus',
                   help='synthetic input, e.g. noise:level=-30,dur=1 or '
                        'tone:freq=3000,level=-40,dur=0.1')
  p.add_argument('--seed', type=int, default=None,
                 help='noise seed (overrides the stimulus spec)')


def design_from_args(args) -> CarfacDesignParams:
  params = default_design(args.sample_rate)
  car = params.car
  if args.delay_buffer:
    car = dataclasses.replace(car, use_delay_buffer=True)
  if args.max_zeta is not None:
    car = dataclasses.replace(car, max_zeta=args.max_zeta)
  if args.ac_corner_hz is not None:
    car = dataclasses.replace(car, ac_corner_hz=args.ac_corner_hz)
  ihc = dataclasses.replace(params.ihc, variant=IhcVariant(args.ihc))
  return dataclasses.replace(params, car=car, ihc=ihc)


def parse_health(spec: Optional[str], n_ch: int) -> Optional[np.ndarray]:
  if spec is None:
    return None
  if spec.startswith('basal:'):
    return analysis.basal_health(n_ch, int(spec.split(':', 1)[1]))
  path = Path(spec)
  if path.exists():
    values = np.loadtxt(path, ndmin=1)
    if values.size != n_ch:
      raise UsageError(f'{path}: expected {n_ch} health values, got '
                       f'{values.size}')
    return values
  try:
    return np.full(n_ch, float(spec))
  except ValueError as err:
    raise UsageError(f'bad --ohc-health value {spec!r}') from err


def load_input(args, sample_rate: float) -> np.ndarray:
  """Returns audio shaped (n_ears, n_samples)."""
  if args.input is not None:
    audio, rate = audio_io.read_wav(args.input)
    if rate != sample_rate:
      raise UsageError(f'{args.input} is sampled at {rate} Hz but the model '
                       f'runs at {sample_rate:g} Hz; resampling is not '
                       'supported')
    if audio.shape[0] > 2:
      raise UsageError('only mono or stereo WAV input is supported')
    return audio
  spec = stimuli.parse_stimulus(args.stimulus)
  if args.seed is not None:
    spec.seed = args.seed
  return spec.render(sample_rate)[np.newaxis]


def run_chunked(model: CarfacModel, audio: np.ndarray, chunk: int,
                outputs: Sequence[str], open_loop: bool, linear: bool):
  """Run in chunks and concatenate planes along the sample axis."""
  n = audio.shape[1]
  step = chunk if chunk > 0 else max(n, 1)
  parts = []
  for i in range(0, max(n, 1), step):
    parts.append(model.run_segment(audio[:, i:i + step], open_loop=open_loop,
                                   linear=linear, outputs=outputs))
  planes = {p: np.concatenate([o.plane(p) for o in parts], axis=1)
            for p in outputs}
  offsets = np.cumsum([0] + [min(step, n - i) for i in range(0, n, step)])
  agc = np.concatenate([o.agc for o in parts], axis=0)
  agc_times = np.concatenate([o.agc_times + off
                              for o, off in zip(parts, offsets)])
  return planes, agc, agc_times


# -- subcommands -------------------------------------------------------------


def cmd_run(args) -> int:
  params = design_from_args(args)
  wanted = [s.strip() for s in args.outputs.split(',') if s.strip()]
  if not wanted:
    raise UsageError('select at least one output plane')
  for name in wanted:
    if name not in PLANES + ('agc',):
      raise UsageError(f'unknown output {name!r}')
  audio = load_input(args, params.sample_rate)
  model = CarfacModel(params, n_ears=audio.shape[0])
  health = parse_health(args.ohc_health, model.n_ch)
  if health is not None:
    model.set_ohc_health(health)
  chunk = int(round(args.chunk_ms * 1e-3 * params.sample_rate))
  planes, agc, agc_times = run_chunked(
      model, audio, chunk, [p for p in wanted if p != 'agc'],
      args.open_loop, args.linear)
  out_dir = Path(args.out_dir)
  out_dir.mkdir(parents=True, exist_ok=True)
  cf = model.pole_freqs
  suffix = (lambda e: f'_ear{e}') if model.n_ears > 1 else (lambda e: '')
  written = []
  for name, plane in planes.items():
    for e in range(model.n_ears):
      written.append(audio_io.write_plane(out_dir / f'{name}{suffix(e)}',
                                          plane[e], cf, args.format,
                                          args.hop))
  if 'agc' in wanted:
    for e in range(model.n_ears):
      written.append(audio_io.write_plane(out_dir / f'agc{suffix(e)}',
                                          agc[:, e], cf, args.format, 1))
    np.savetxt(out_dir / 'agc_times.txt', agc_times, fmt='%d')
  for path in written:
    print(path)
  return 0


def cmd_analyze_distortion(args) -> int:
  freqs = tuple(float(f) for f in args.tones.split(','))
  params = design_from_args(args)
  rep = analysis.analyze_distortion(
      level_dbfs=args.level, duration=args.duration, freqs_hz=freqs,
      params=params, ac_coupler=not args.no_ac_coupler)
  if args.out:
    keep = rep.freqs_hz <= args.max_freq
    cf = design_coeffs(params).pole_freqs
    table = 20 * np.log10(rep.magnitude[keep].T + np.finfo(float).tiny)
    header = 'cf_hz,' + ','.join(f'{f:g}' for f in rep.freqs_hz[keep])
    np.savetxt(args.out, np.column_stack([cf, table]), delimiter=',',
               fmt='%.6g', header=header, comments='')
  print('line_hz,kind,best_channel,level_db,snr_db,detected')
  for i, f in enumerate(rep.line_hz):
    kind = 'quadratic' if f in analysis.QUADRATIC_LINES_HZ else 'cubic'
    ch = int(np.argmax(rep.line_db[i]))
    print(f'{f:g},{kind},{ch},{rep.line_db[i, ch]:.2f},'
          f'{rep.line_snr_db[i]:.1f},{int(rep.detected[float(f)])}')
  worst = int(np.argmax(rep.dc_re_strongest_db))
  print(f'dc_re_strongest_db_max,{rep.max_dc_re_strongest_db():.2f},'
        f'channel {worst}')
  if args.check:
    ok = rep.all_detected() and rep.max_dc_re_strongest_db() < -60.0
    print('CHECK', 'PASS' if ok else 'FAIL')
    return 0 if ok else EXIT_FAIL
  return 0


def cmd_toneburst_compare(args) -> int:
  params = design_from_args(args)
  res = analysis.toneburst_compare(
      freq_hz=args.freq, level_dbfs=args.level, duration=args.duration,
      post_silence=args.post_silence, channel=args.channel, params=params)
  fs = params.sample_rate
  t2, t1 = res.traces['two_cap'], res.traces['one_cap']
  if args.out:
    n = t2['nap'].size
    cols = np.column_stack([np.arange(n), np.arange(n) / fs, t2['bm'],
                            t2['receptor_potential'], t2['nap'], t1['bm'],
                            t1['nap']])
    np.savetxt(args.out, cols, delimiter=',', fmt='%.17g', comments='',
               header='sample,time_s,bm_two_cap,receptor_potential_two_cap,'
                      'nap_two_cap,bm_one_cap,nap_one_cap')
  cf = design_coeffs(params).pole_freqs[res.channel]
  print(f'channel,{res.channel}')
  print(f'channel_pole_hz,{cf:.1f}')
  print(f'window_samples,{res.window[0]},{res.window[1]}')
  for v in ('two_cap', 'one_cap'):
    print(f'{v},ac,{res.ac[v]:.6g},dc,{res.dc[v]:.6g},'
          f'ac_over_dc,{res.vector_strength[v]:.4f}')
  print(f'ac_ratio_two_cap_over_one_cap,{res.ac_ratio:.4f}')
  if args.expect_ratio:
    lo, hi = (float(v) for v in args.expect_ratio.split(','))
    ok = lo <= res.ac_ratio <= hi
    print('CHECK', 'PASS' if ok else 'FAIL')
    return 0 if ok else EXIT_FAIL
  return 0


def cmd_benchmark(args) -> int:
  lengths = [float(v) for v in args.lengths.split(',')]
  chunks = [float(v) / 1000 for v in args.chunks_ms.split(',') if v]
  rows = bench.run_benchmark(lengths=lengths, chunks=chunks,
                             delay_buffer_compare=not args.no_delay_compare,
                             repeats=args.repeats, seed=args.seed or 0)
  table = bench.format_table(rows)
  print(table)
  if args.out:
    Path(args.out).write_text(table + '\n')
  speedup = bench.delay_buffer_speedup(rows)
  if speedup is not None:
    print(f'delay_buffer_speedup,{speedup:.3f}')
  if args.max_rtf is not None:
    one_s = [r.rtf for r in rows if r.audio_seconds == 1.0 and
             r.chunk_seconds is None and not r.delay_buffer]
    ok = bool(one_s) and max(one_s) < args.max_rtf
    print('CHECK', 'PASS' if ok else 'FAIL')
    return 0 if ok else EXIT_FAIL
  return 0


def cmd_golden(args) -> int:
  directory = Path(args.dir) if args.dir else golden.default_golden_dir()
  if args.mode == 'dump':
    names = golden.dump(directory)
    print(f'wrote {len(names)} cases to {directory}')
    return 0
  dtype = np.float32 if args.float32 else np.float64
  diffs = golden.compare(directory, dtype=dtype)
  print('case,plane,max_abs_diff,sample,channel,tolerance,ok')
  for d in diffs:
    print(f'{d.case},{d.plane},{d.max_abs_diff:.3e},{d.sample},{d.channel},'
          f'{d.tolerance:g},{int(d.ok)}')
  w = golden.worst(diffs)
  if all(d.ok for d in diffs):
    print(f'PASS worst {w.case}/{w.plane} {w.max_abs_diff:.3e}')
    return 0
  print(f'FAIL worst {w.case}/{w.plane} channel {w.channel} sample '
        f'{w.sample}: {w.max_abs_diff:.3e} >= {w.tolerance:g}',
        file=sys.stderr)
  return EXIT_FAIL


def cmd_cochleagram(args) -> int:
  params = design_from_args(args)
  audio = load_input(args, params.sample_rate)
  model = CarfacModel(params, n_ears=audio.shape[0])
  health = parse_health(args.ohc_health, model.n_ch)
  if health is not None:
    model.set_ohc_health(health)
  out = model.run_segment(audio, outputs=('nap',), record_agc=False)
  hop = max(1, int(round(args.hop_ms * 1e-3 * params.sample_rate)))
  audio_io.write_pgm(args.output, out.nap[0], hop=hop, vmax=args.vmax)
  print(args.output)
  return 0


def cmd_design_dump(args) -> int:
  coeffs = design_coeffs(design_from_args(args))
  out_dir = Path(args.out_dir)
  out_dir.mkdir(parents=True, exist_ok=True)
  golden.write_design_tables(out_dir, coeffs)
  print(f'{coeffs.n_ch} channels, pole frequencies '
        f'{coeffs.pole_freqs[0]:.1f} .. {coeffs.pole_freqs[-1]:.1f} Hz')
  for name in ('car_coeffs.csv', 'agc_coeffs.csv', 'ihc_coeffs.csv'):
    print(out_dir / name)
  return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
  parser = argparse.ArgumentParser(
      prog='carfac', description='CARFAC v2 cochlear model tools')
  sub = parser.add_subparsers(dest='command', required=True)

  p = sub.add_parser('run', help='run audio through the model, write planes')
  _add_design_args(p)
  _add_run_args(p)
  _add_input_args(p)
  p.add_argument('--outputs', default='nap',
                 help='comma list of nap,bm,bm_raw,receptor_potential,ohc,agc')
  p.add_argument('--format', choices=audio_io.FORMATS, default='csv')
  p.add_argument('--hop', type=int, default=1, help='PGM column hop')
  p.add_argument('--out-dir', default='.')
  p.set_defaults(func=cmd_run)

  p = sub.add_parser('analyze-distortion',
                     help='four-tone BM FFT and distortion-line report')
  _add_design_args(p)
  p.add_argument('--level', type=float, default=-20.0,
                 help='per-tone level, dBFS')
  p.add_argument('--duration', type=float, default=1.5)
  p.add_argument('--tones', default='1600,1800,2000,2200')
  p.add_argument('--no-ac-coupler', action='store_true',
                 help='debug: disable the BM AC coupler')
  p.add_argument('--max-freq', type=float, default=3000.0)
  p.add_argument('--out', help='CSV table: channels x frequency, dB')
  p.add_argument('--check', action='store_true',
                 help='exit nonzero unless all lines are detected and the '
                      '0 Hz bin is < -60 dB re the strongest line')
  p.set_defaults(func=cmd_analyze_distortion)

  p = sub.add_parser('toneburst-compare',
                     help='two_cap vs one_cap NAP on a tone burst')
  _add_design_args(p)
  p.add_argument('--freq', type=float, default=3000.0)
  p.add_argument('--level', type=float, default=-40.0)
  p.add_argument('--duration', type=float, default=0.010)
  p.add_argument('--post-silence', type=float, default=0.020)
  p.add_argument('--channel', type=int, default=None,
                 help='default: channel with the largest BM response')
  p.add_argument('--out', help='CSV of aligned per-sample traces')
  p.add_argument('--expect-ratio', help='lo,hi bounds for the AC ratio')
  p.set_defaults(func=cmd_toneburst_compare)

  p = sub.add_parser('benchmark', help='real-time factor table')
  p.add_argument('--lengths', default='0.01,0.1,1,10',
                 help='segment lengths in seconds')
  p.add_argument('--chunks-ms', default='10,100',
                 help='chunk sizes for the chunked 1 s runs')
  p.add_argument('--repeats', type=int, default=3)
  p.add_argument('--no-delay-compare', action='store_true')
  p.add_argument('--seed', type=int, default=0)
  p.add_argument('--max-rtf', type=float, default=None,
                 help='exit nonzero if the 1 s RTF is not below this')
  p.add_argument('--out')
  p.set_defaults(func=cmd_benchmark)

  p = sub.add_parser('golden', help='dump or compare golden data')
  p.add_argument('mode', choices=('dump', 'compare'))
  p.add_argument('--dir', default=None,
                 help=f'golden directory (default ${golden.ENV_VAR} or '
                      'tests/golden)')
  p.add_argument('--float32', action='store_true',
                 help='compare a 32-bit build at the relaxed tolerance')
  p.set_defaults(func=cmd_golden)

  p = sub.add_parser('cochleagram', help='NAP image as binary PGM')
  _add_design_args(p)
  _add_input_args(p)
  p.add_argument('--ohc-health', default=None)
  p.add_argument('--hop-ms', type=float, default=5.0)
  p.add_argument('--vmax', type=float, default=None,
                 help='clip level (default: image maximum)')
  p.add_argument('output', type=Path)
  p.set_defaults(func=cmd_cochleagram)

  p = sub.add_parser('design-dump', help='write coefficient tables as CSV')
  _add_design_args(p)
  p.add_argument('--out-dir', default='.')
  p.set_defaults(func=cmd_design_dump)
  return parser


def main(argv: Optional[List[str]] = None) -> int:
  parser = build_parser()
  args = parser.parse_args(argv)
  try:
    return args.func(args)
  except CarfacError as err:
    print(f'error: {err}', file=sys.stderr)
    return EXIT_USAGE
  except OSError as err:
    print(f'error: {err}', file=sys.stderr)
    return EXIT_USAGE


if __name__ == '__main__':
  sys.exit(main())
