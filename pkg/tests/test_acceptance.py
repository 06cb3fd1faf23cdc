"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS criterion N: ...`` or ``FAIL criterion N:
...`` line (visible even under output capture) before asserting. Run alone
with ``pytest tests/test_acceptance.py -v``.
"""

import sys
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carfac import CarfacModel, IhcVariant, default_design, design_coeffs
from carfac import golden, stimuli
from carfac.analysis import (analyze_distortion, basal_health,
                             measure_ac_corner, small_signal_gains,
                             tone_sensitivity, toneburst_compare,
                             with_variant)
from carfac.audio_io import smooth_and_decimate
from carfac.design import IhcDesignParams, design_ihc_coeffs, stage_gain_exact
from carfac.ihc import ihc_init_state, ihc_step

from conftest import FS, with_car


@pytest.fixture
def report(capsys):
  def emit(n, ok, detail):
    with capsys.disabled():
      print(f'\n{"PASS" if ok else "FAIL"} criterion {n}: {detail}')
    assert ok, detail
  return emit


def test_criterion_01_channel_count(report):
  coeffs = design_coeffs(default_design(22050.0))
  report(1, coeffs.n_ch == 71, f'{coeffs.n_ch} channels at 22050 Hz, '
         f'CF {coeffs.pole_freqs[0]:.0f}..{coeffs.pole_freqs[-1]:.1f} Hz')


def test_criterion_02_dc_suppression(report):
  rep = analyze_distortion()
  dc = rep.max_dc_re_strongest_db()
  missing = [f for f, hit in rep.detected.items() if not hit]
  ok = dc < -60 and not missing
  report(2, ok, f'max DC re strongest line {dc:.1f} dB (< -60), '
         f'lines detected {len(rep.detected) - len(missing)}/'
         f'{len(rep.detected)}, min SNR {rep.line_snr_db.min():.1f} dB')


def test_criterion_03_ac_corner(report):
  corner = measure_ac_corner()
  report(3, abs(corner - 20) <= 1, f'half-power corner {corner:.3f} Hz '
         '(20 +- 1)')


def test_criterion_04_parabola_fit(report):
  car = design_coeffs(default_design()).car
  u = np.linspace(0, 1, 10001)[:, None]
  exact = stage_gain_exact(car.a0, car.c0, car.h, car.r1, car.zr, u)
  err = np.max(np.abs(20 * np.log10(car.stage_gain(u) / exact)))
  report(4, err <= 0.01, f'max parabola error {err:.2e} dB over 10001 u '
         f'values x {car.n_ch} channels (<= 0.01)')


def test_criterion_05_delay_buffer(report):
  params = default_design()
  delayed_params = with_car(params, use_delay_buffer=True)
  imp = stimuli.impulse(0.1, FS)
  kw = dict(open_loop=True, linear=True, outputs=('bm',))
  a = CarfacModel(params).run_segment(imp, **kw).bm[0]
  b = CarfacModel(delayed_params).run_segment(imp, **kw).bm[0]
  n, n_ch = a.shape
  exact = all(np.array_equal(b[c:, c], a[:n - c, c]) and not np.any(b[:c, c])
              for c in range(n_ch))

  # closed loop: undo the one-sample-per-stage stagger, smooth over 10 ms
  x = stimuli.noise(-20, 1.0, FS, seed=7)
  a = CarfacModel(params).run_segment(x, outputs=('nap',)).nap[0]
  b = CarfacModel(delayed_params).run_segment(x, outputs=('nap',)).nap[0]
  m = n_ch - 1
  aligned = np.stack([b[c:b.shape[0] - m + c, c] for c in range(n_ch)], 1)
  hop = int(round(0.010 * FS))
  sa = smooth_and_decimate(a[:aligned.shape[0]], hop)
  sb = smooth_and_decimate(aligned, hop)
  rel = np.sqrt(np.mean((sa - sb)**2) / np.mean(sa**2))
  report(5, exact and rel < 0.01,
         f'impulse stagger exact={exact}, closed-loop smoothed NAP '
         f'relative RMS diff {100 * rel:.2f}% (< 1%)')


@settings(max_examples=25, deadline=None)
@given(n_closed=st.integers(9, 1200), n_open=st.integers(1, 150),
       level=st.floats(-40, -5), seed=st.integers(0, 2**16),
       linear=st.booleans())
def test_open_loop_freeze_property(n_closed, n_open, level, seed, linear):
  model = CarfacModel(default_design())
  x = stimuli.noise(level, (n_closed + n_open) / FS, FS, seed=seed)
  model.run_segment(x[:n_closed])
  car = model.ears[0].car
  zb, g = car.zb.copy(), car.g.copy()
  for xt in x[n_closed:n_closed + n_open]:
    model.run_segment(np.array([xt]), open_loop=True, linear=linear)
    assert np.array_equal(car.zb, zb) and np.array_equal(car.g, g)


def test_criterion_06_open_loop_freeze(report):
  # a fixed mid-ramp case for the report line; the property test above
  # covers random entry points
  model = CarfacModel(default_design())
  model.run_segment(stimuli.noise(-15, 1003 / FS, FS, seed=3))
  car = model.ears[0].car
  mid_ramp = bool(np.any(car.dzb) and np.any(car.dg))
  zb, g = car.zb.copy(), car.g.copy()
  frozen = True
  for xt in stimuli.noise(-15, 0.05, FS, seed=4):
    model.run_segment(np.array([xt]), open_loop=True)
    frozen &= np.array_equal(car.zb, zb) and np.array_equal(car.g, g)
  report(6, mid_ramp and frozen,
         f'entered mid-ramp={mid_ramp}, zB and g unchanged over '
         f'{int(0.05 * FS)} open-loop samples={frozen}')


def test_criterion_07_synchrony(report):
  high = toneburst_compare(3000, -40, 0.010)
  low = toneburst_compare(300, -40, 0.100)
  ok = abs(high.ac_ratio - 0.5) <= 0.15 and low.ac_ratio > 0.8
  report(7, ok, f'AC ratio two_cap/one_cap {high.ac_ratio:.3f} at 3 kHz '
         f'(channel {high.channel}; 0.5 +- 0.15), {low.ac_ratio:.3f} at '
         f'300 Hz (channel {low.channel}; > 0.8)')


def test_criterion_08_impairment(report):
  health = basal_health(71)
  healthy = small_signal_gains()
  impaired = small_signal_gains(health=health)
  drop = healthy.peak_gain_db - impaired.peak_gain_db
  high_cf = np.flatnonzero((health == 0) & (healthy.peak_gain_db >= 35))
  apical = np.flatnonzero(np.arange(71) >= 2 * 71 / 3)  # top third
  # closed-loop tones at best frequency confirm the linear profile
  tone_drop = {}
  for ch in (high_cf[len(high_cf) // 2], apical[0]):
    f = healthy.best_freq_hz[ch]
    tone_drop[ch] = (tone_sensitivity(ch, f) -
                     tone_sensitivity(ch, f, health=health))
  hi_ch, ap_ch = tone_drop
  ok = (high_cf.size > 0 and drop[high_cf].min() >= 30 and
        np.abs(drop[apical]).max() < 3 and tone_drop[hi_ch] >= 30 and
        abs(tone_drop[ap_ch]) < 3)
  report(8, ok, f'high-CF channels {high_cf[0]}-{high_cf[-1]} lose '
         f'{drop[high_cf].min():.1f}..{drop[high_cf].max():.1f} dB '
         f'(>= 30), apical {apical[0]}-{apical[-1]} change <= '
         f'{np.abs(drop[apical]).max():.2f} dB (< 3); tone check '
         f'ch{hi_ch} {tone_drop[hi_ch]:.1f} dB, ch{ap_ch} '
         f'{tone_drop[ap_ch]:.2f} dB')


def test_criterion_09_golden_and_speed(report, golden_dir):
  d64 = golden.compare(golden_dir)
  d32 = golden.compare(golden_dir, dtype=np.float32)
  w64, w32 = golden.worst(d64), golden.worst(d32)
  ok_golden = all(d.ok for d in d64 + d32)
  ok_golden &= w64.max_abs_diff < 1e-6 and w32.max_abs_diff < 1e-3

  params = default_design()
  x = stimuli.noise(-20, 1.0, FS, seed=0)
  model = CarfacModel(params)
  model.run_segment(x[:64])  # compile outside the timing
  model.reset_state()
  t0 = time.perf_counter()
  whole = model.run_segment(x, outputs=('nap', 'bm'))
  rtf = (time.perf_counter() - t0) / 1.0
  model.reset_state()
  chunk = int(round(0.010 * FS))
  parts = [model.run_segment(x[i:i + chunk], outputs=('nap', 'bm'))
           for i in range(0, x.size, chunk)]
  same = all(np.array_equal(np.concatenate([p.plane(k) for p in parts], 1),
                            whole.plane(k)) for k in ('nap', 'bm'))
  report(9, ok_golden and rtf < 1.0 and same,
         f'golden worst 64-bit {w64.max_abs_diff:.1e} ({w64.case}/'
         f'{w64.plane}, < 1e-6), 32-bit {w32.max_abs_diff:.1e} ({w32.case}/'
         f'{w32.plane}, < 1e-3); RTF {rtf:.3f} for 1 s (< 1); '
         f'10 ms chunks bit-identical={same}')


def test_criterion_10_quiescence_determinism(report):
  params = default_design()
  # silence from rest, every IHC variant
  rest = max(np.abs(CarfacModel(with_variant(params, v)).run_segment(
      np.zeros(int(0.05 * FS)), outputs=('nap',)).nap).max()
             for v in IhcVariant)
  # silence after sound, once the loop has settled
  model = CarfacModel(params)
  model.run_segment(stimuli.noise(-20, 0.2, FS, seed=1))
  nap = model.run_segment(np.zeros(int(1.0 * FS)), outputs=('nap',)).nap[0]
  settled = np.abs(nap[-int(0.05 * FS):]).max()

  # segment partitions, two ears, closed loop
  rng = np.random.default_rng(11)
  x = 0.05 * rng.standard_normal((2, 3000))
  whole = CarfacModel(params, n_ears=2).run_segment(x, outputs=('nap', 'bm'))
  partitions_ok = True
  for _ in range(5):
    cuts = np.sort(rng.choice(np.arange(1, 3000), 6, replace=False))
    model = CarfacModel(params, n_ears=2)
    parts = [model.run_segment(s, outputs=('nap', 'bm'))
             for s in np.split(x, cuts, axis=1)]
    for k in ('nap', 'bm'):
      got = np.concatenate([p.plane(k) for p in parts], axis=1)
      partitions_ok &= np.array_equal(got, whole.plane(k))

  # capacitor fuzz: 1000 channels x 1000 samples per smooth variant
  lo, hi = np.inf, -np.inf
  for variant in (IhcVariant.TWO_CAP, IhcVariant.ONE_CAP):
    coeffs = design_ihc_coeffs(IhcDesignParams(variant=variant), FS)
    state = ihc_init_state(coeffs, 1000)
    scale = 10 ** rng.uniform(-3, 1, 1000)
    caps = [state.cap1] + ([state.cap2] if variant is IhcVariant.TWO_CAP
                           else [])
    for _ in range(1000):
      ihc_step(scale * rng.uniform(-1, 1, 1000), coeffs, state)
      lo = min(lo, min(c.min() for c in caps))
      hi = max(hi, max(c.max() for c in caps))
  ok = (rest < 1e-12 and settled < 1e-9 and partitions_ok and 0 <= lo and
        hi <= 1)
  report(10, ok, f'silent NAP from rest {rest:.1e}, after 1 s settling '
         f'{settled:.1e}; 5 random partitions bit-exact={partitions_ok}; '
         f'capacitors in [{lo:.3f}, {hi:.3f}] over 2 x 10^6 fuzzed samples')


if __name__ == '__main__':
  sys.exit(pytest.main([__file__, '-q']))
