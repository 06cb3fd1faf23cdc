import shutil
import subprocess
import sys

import numpy as np
import pytest

from carfac import CarfacModel, audio_io, stimuli
from carfac.cli import EXIT_FAIL, EXIT_USAGE, main, parse_health

from conftest import FS


def run_cli(capsys, *argv):
  code = main([str(a) for a in argv])
  out, err = capsys.readouterr()
  return code, out, err


def test_module_entry_point():
  res = subprocess.run([sys.executable, '-m', 'carfac', '--help'],
                       capture_output=True, text=True)
  assert res.returncode == 0 and 'toneburst-compare' in res.stdout


def test_unknown_subcommand_is_usage_error():
  with pytest.raises(SystemExit) as exc:
    main(['frobnicate'])
  assert exc.value.code == 2


# -- run -----------------------------------------------------------------------


def test_run_csv_shape(tmp_path, capsys):
  code, out, _ = run_cli(capsys, 'run', '--stimulus', 'noise:dur=1',
                         '--out-dir', tmp_path)
  assert code == 0 and out.strip() == str(tmp_path / 'nap.csv')
  plane, cf = audio_io.read_csv(tmp_path / 'nap.csv')
  assert plane.shape == (22050, 71)
  lines = (tmp_path / 'nap.csv').read_text().splitlines()
  assert len(lines) == 22051 and len(lines[0].split(',')) == 71
  assert cf[0] > cf[-1]


def test_run_matches_library(tmp_path, capsys, params):
  run_cli(capsys, 'run', '--stimulus', 'noise:dur=0.1,seed=5', '--outputs',
          'bm,nap', '--format', 'raw64', '--out-dir', tmp_path)
  x = stimuli.parse_stimulus('noise:dur=0.1,seed=5').render(FS)
  want = CarfacModel(params).run_segment(x, outputs=('bm', 'nap'))
  assert np.array_equal(audio_io.read_raw64(tmp_path / 'bm.raw64'),
                        want.bm[0])
  assert np.array_equal(audio_io.read_raw64(tmp_path / 'nap.raw64'),
                        want.nap[0])


def test_chunking_does_not_change_files(tmp_path, capsys):
  args = ['run', '--stimulus', 'noise:dur=0.2', '--format', 'raw64',
          '--outputs', 'nap,agc']
  run_cli(capsys, *args, '--out-dir', tmp_path / 'a')
  run_cli(capsys, *args, '--chunk-ms', 7, '--out-dir', tmp_path / 'b')
  for name in ('nap.raw64', 'agc.raw64', 'agc_times.txt'):
    assert (tmp_path / 'a' / name).read_bytes() == (
        tmp_path / 'b' / name).read_bytes(), name


def test_stereo_input_writes_per_ear(tmp_path, capsys):
  x = np.stack([stimuli.noise(-20, 0.05, FS, seed=1),
                stimuli.noise(-30, 0.05, FS, seed=2)])
  audio_io.write_wav(tmp_path / 'st.wav', x, 22050, 'float32')
  code, out, _ = run_cli(capsys, 'run', '--input', tmp_path / 'st.wav',
                         '--outputs', 'bm', '--out-dir', tmp_path)
  assert code == 0
  assert {p.rsplit('/', 1)[-1] for p in out.split()} == {
      'bm_ear0.csv', 'bm_ear1.csv'}


def test_wav_rate_mismatch(tmp_path, capsys):
  audio_io.write_wav(tmp_path / 'a.wav', np.zeros(100), 16000, 'pcm16')
  code, _, err = run_cli(capsys, 'run', '--input', tmp_path / 'a.wav',
                         '--out-dir', tmp_path)
  assert code == EXIT_USAGE and 'resampling' in err
  code, _, _ = run_cli(capsys, 'run', '--input', tmp_path / 'a.wav',
                       '--sample-rate', 16000, '--out-dir', tmp_path)
  assert code == 0


def test_missing_input_file(tmp_path, capsys):
  code, _, err = run_cli(capsys, 'run', '--input', tmp_path / 'nope.wav')
  assert code == EXIT_USAGE and err.startswith('error:')


def test_bad_outputs_and_stimulus(tmp_path, capsys):
  assert run_cli(capsys, 'run', '--stimulus', 'noise', '--outputs', 'bogus',
                 '--out-dir', tmp_path)[0] == EXIT_USAGE
  assert run_cli(capsys, 'run', '--stimulus', 'buzz',
                 '--out-dir', tmp_path)[0] == EXIT_USAGE


def test_seed_determinism(tmp_path, capsys):
  for d, seed in (('a', 3), ('b', 3), ('c', 4)):
    run_cli(capsys, 'run', '--stimulus', 'noise:dur=0.05', '--seed', seed,
            '--format', 'raw64', '--outputs', 'bm', '--out-dir', tmp_path / d)
  a, b, c = ((tmp_path / d / 'bm.raw64').read_bytes() for d in 'abc')
  assert a == b and a != c


def test_health_options(tmp_path, capsys):
  assert parse_health('basal:10', 71).sum() == 61
  assert np.all(parse_health('0.5', 71) == 0.5)
  (tmp_path / 'h.txt').write_text('\n'.join(['1'] * 71))
  assert np.all(parse_health(str(tmp_path / 'h.txt'), 71) == 1)
  (tmp_path / 'short.txt').write_text('1\n1\n')
  code, _, err = run_cli(capsys, 'run', '--stimulus', 'noise:dur=0.01',
                         '--ohc-health', tmp_path / 'short.txt',
                         '--out-dir', tmp_path)
  assert code == EXIT_USAGE and '71' in err


# -- analyses ------------------------------------------------------------------


def test_analyze_distortion_check(tmp_path, capsys):
  code, out, _ = run_cli(capsys, 'analyze-distortion', '--check', '--out',
                         tmp_path / 'd.csv')
  assert code == 0 and 'CHECK PASS' in out
  assert len(out.splitlines()) == 1 + 7 + 1 + 1
  table = np.loadtxt(tmp_path / 'd.csv', delimiter=',', skiprows=1)
  assert table.shape[0] == 71


def test_analyze_distortion_check_fails_without_coupler(capsys):
  code, out, _ = run_cli(capsys, 'analyze-distortion', '--no-ac-coupler',
                         '--check')
  assert code == EXIT_FAIL and 'CHECK FAIL' in out


def test_toneburst_compare(tmp_path, capsys):
  code, out, _ = run_cli(capsys, 'toneburst-compare', '--out',
                         tmp_path / 't.csv', '--expect-ratio', '0.3,0.7')
  assert code == 0 and 'channel,21' in out
  traces = np.loadtxt(tmp_path / 't.csv', delimiter=',', skiprows=1)
  assert traces.shape == (661, 7)
  code, _, _ = run_cli(capsys, 'toneburst-compare', '--expect-ratio',
                       '0.9,1.0')
  assert code == EXIT_FAIL


def test_benchmark(tmp_path, capsys):
  code, out, _ = run_cli(capsys, 'benchmark', '--lengths', '0.01,1',
                         '--chunks-ms', '100', '--repeats', 1, '--max-rtf',
                         1.0, '--out', tmp_path / 'b.csv')
  assert code == 0 and 'CHECK PASS' in out and 'delay_buffer_speedup' in out
  assert (tmp_path / 'b.csv').read_text().startswith('case,')


# -- golden --------------------------------------------------------------------


def test_golden_compare_pass(golden_dir, capsys):
  code, out, _ = run_cli(capsys, 'golden', 'compare', '--dir', golden_dir)
  assert code == 0 and out.splitlines()[-1].startswith('PASS')


def test_golden_compare_fail_names_worst(golden_dir, tmp_path, capsys):
  d = tmp_path / 'g'
  shutil.copytree(golden_dir, d)
  path = d / 'binaural' / 'nap_ear1.raw64'
  plane = audio_io.read_raw64(path)
  plane[10, 40] = 5.0
  audio_io.write_raw64(path, plane)
  code, _, err = run_cli(capsys, 'golden', 'compare', '--dir', d)
  assert code == EXIT_FAIL
  assert 'binaural/nap_ear1 channel 40 sample 10' in err


def test_golden_env_var(golden_dir, monkeypatch, capsys):
  monkeypatch.setenv('CARFAC_GOLDEN_DIR', str(golden_dir))
  assert run_cli(capsys, 'golden', 'compare', '--float32')[0] == 0


def test_golden_missing_dir(tmp_path, capsys):
  code, _, err = run_cli(capsys, 'golden', 'compare', '--dir', tmp_path)
  assert code == EXIT_USAGE and 'manifest' in err


# -- images and tables ---------------------------------------------------------


def test_cochleagram_silence_uniform(tmp_path, capsys):
  path = tmp_path / 'c.pgm'
  code, _, _ = run_cli(capsys, 'cochleagram', '--stimulus', 'silence:dur=0.2',
                       path)
  assert code == 0
  img = audio_io.read_pgm(path)
  assert img.shape[0] == 71 and np.all(img == img.flat[0])


def test_cochleagram_tone(tmp_path, capsys):
  path = tmp_path / 'c.pgm'
  run_cli(capsys, 'cochleagram', '--stimulus',
          'tone:freq=3000,level=-30,dur=0.2', path)
  img = audio_io.read_pgm(path).astype(float)
  assert 15 <= np.argmax(img.mean(axis=1)) <= 25


def test_design_dump(tmp_path, capsys, golden_dir):
  code, out, _ = run_cli(capsys, 'design-dump', '--out-dir', tmp_path)
  assert code == 0 and out.startswith('71 channels')
  for name in ('car_coeffs.csv', 'agc_coeffs.csv', 'ihc_coeffs.csv'):
    assert (tmp_path / name).exists()
  code, _, err = run_cli(capsys, 'design-dump', '--max-zeta', 0.1,
                         '--out-dir', tmp_path)
  assert code == EXIT_USAGE and err.startswith('error:')
