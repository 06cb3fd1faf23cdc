"""Design-time parameters and their conversion to run-time coefficients.

Every block (CAR, IHC, AGC) follows the same life cycle:

  params -> coeffs -> state

Params are the user-facing knobs. Design turns them into immutable
per-channel coefficients; the run-time modules only ever see coefficients.
All validation happens here so the sample loop can stay branch-free.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from typing import Tuple

import numpy as np

from carfac.errors import DesignError


class IhcVariant(str, enum.Enum):
  TWO_CAP = 'two_cap'
  ONE_CAP = 'one_cap'
  JUST_HWR = 'just_hwr'


@dataclasses.dataclass(frozen=True)
class CarDesignParams:
  """Knobs for the cascade of asymmetric resonators."""

  velocity_scale: float = 0.1  # OHC NLF input scale
  v_offset: float = 0.04  # offset gives the NLF a quadratic part
  min_zeta: float = 0.10  # minimum damping factor in mid-freq channels
  max_zeta: float = 0.30  # damping of the passive (fully damped) cochlea
  first_pole_fraction: float = 0.85  # top pole as a fraction of Nyquist
  min_pole_hz: float = 30.0
  erb_per_step: float = 0.5
  erb_break_freq_hz: float = 165.3  # Greenwood map's break frequency
  erb_q: float = 1000 / (24.7 * 4.37)  # Glasberg and Moore's high-CF ratio
  high_f_damping_compression: float = 0.5  # 0 to 1 to compress zeta
  zero_ratio: float = math.sqrt(2)  # how far the zero is above the pole
  ac_corner_hz: float = 20.0  # BM output highpass corner
  use_delay_buffer: bool = False


@dataclasses.dataclass(frozen=True)
class IhcDesignParams:
  """Inner hair cell model choice and its time constants (seconds)."""

  variant: IhcVariant = IhcVariant.TWO_CAP
  tau_lpf: float = 80e-6  # output smoothing
  # one_cap reservoir
  tau_out: float = 0.5e-3  # depletion
  tau_in: float = 10e-3  # recovery
  # two_cap receptor capacitor
  tau1_out: float = 0.5e-3
  tau1_in: float = 0.2e-3
  # two_cap transmitter reservoir
  tau2_out: float = 1e-3
  tau2_in: float = 10e-3
  hwr_limit: float = 2.0  # just_hwr clip level


def _default_time_constants() -> Tuple[float, ...]:
  return tuple(0.002 * 4.0**k for k in range(4))


def _default_agc1_scales() -> Tuple[float, ...]:
  return tuple(1.0 * math.sqrt(2) ** k for k in range(4))


def _default_agc2_scales() -> Tuple[float, ...]:
  return tuple(1.65 * math.sqrt(2) ** k for k in range(4))


@dataclasses.dataclass(frozen=True)
class AgcDesignParams:
  """Multi-stage AGC loop filter parameters."""

  n_stages: int = 4
  time_constants: Tuple[float, ...] = dataclasses.field(
      default_factory=_default_time_constants)
  decimation: Tuple[int, ...] = (8, 2, 2, 2)
  # spatial spread per stage, in channels; agc2 spreads more toward the base
  agc1_scales: Tuple[float, ...] = dataclasses.field(
      default_factory=_default_agc1_scales)
  agc2_scales: Tuple[float, ...] = dataclasses.field(
      default_factory=_default_agc2_scales)
  agc_stage_gain: float = 2.0  # gain from each stage to the next faster one
  agc_mix_coeff: float = 0.5  # cross-ear mixing
  max_fir_iterations: int = 16


@dataclasses.dataclass(frozen=True)
class CarfacDesignParams:
  sample_rate: float = 22050.0
  car: CarDesignParams = dataclasses.field(default_factory=CarDesignParams)
  agc: AgcDesignParams = dataclasses.field(default_factory=AgcDesignParams)
  ihc: IhcDesignParams = dataclasses.field(default_factory=IhcDesignParams)


def default_design(sample_rate: float = 22050.0) -> CarfacDesignParams:
  """Return the default v2 parameter set for ``sample_rate``."""
  if not sample_rate > 0:
    raise DesignError(f'sample_rate must be positive, got {sample_rate}')
  return CarfacDesignParams(sample_rate=float(sample_rate))


def validate_car_params(params: CarDesignParams, sample_rate: float) -> None:
  if not sample_rate > 0:
    raise DesignError(f'sample_rate must be positive, got {sample_rate}')
  if not 0 < params.min_zeta < params.max_zeta < 1:
    raise DesignError(
        'need 0 < min_zeta < max_zeta < 1, got '
        f'min_zeta={params.min_zeta}, max_zeta={params.max_zeta}')
  if not params.min_pole_hz > 0:
    raise DesignError(f'min_pole_hz must be positive: {params.min_pole_hz}')
  if not 0 < params.first_pole_fraction < 1:
    raise DesignError('first_pole_fraction must lie in (0, 1) of Nyquist')
  if not params.ac_corner_hz > 0:
    raise DesignError(f'ac_corner_hz must be positive: {params.ac_corner_hz}')
  if not params.erb_per_step > 0 or not params.erb_q > 0:
    raise DesignError('erb_per_step and erb_q must be positive')
  if params.zero_ratio < 1:
    raise DesignError('zero_ratio below 1 puts the zero under the pole')


def validate_agc_params(params: AgcDesignParams) -> None:
  n = params.n_stages
  if n < 1:
    raise DesignError('AGC needs at least one stage')
  for name in ('time_constants', 'decimation', 'agc1_scales', 'agc2_scales'):
    if len(getattr(params, name)) != n:
      raise DesignError(f'{name} must have n_stages={n} entries')
  if any(int(d) != d or d < 1 for d in params.decimation):
    raise DesignError(f'decimation entries must be integers >= 1: '
                      f'{params.decimation}')
  taus = params.time_constants
  if any(t <= 0 for t in taus):
    raise DesignError('AGC time constants must be strictly positive')
  if any(b < a for a, b in zip(taus, taus[1:])):
    raise DesignError('AGC time constants must be nondecreasing')
  for k, (s1, s2) in enumerate(zip(params.agc1_scales, params.agc2_scales)):
    if not 0 <= s1 < s2:
      raise DesignError(
          f'stage {k}: need 0 <= agc1_scale < agc2_scale, got {s1}, {s2}')


# ---------------------------------------------------------------------------
# Channel placement
# ---------------------------------------------------------------------------


def hz_to_erb(cf_hz, erb_break_freq_hz: float = 165.3,
              erb_q: float = 1000 / (24.7 * 4.37)):
  """Nominal equivalent rectangular bandwidth at ``cf_hz``."""
  return (erb_break_freq_hz + cf_hz) / erb_q


@dataclasses.dataclass(frozen=True)
class ChannelMap:
  n_ch: int
  pole_freqs: np.ndarray  # Hz, strictly decreasing from base to apex


def design_channels(params: CarDesignParams,
                    sample_rate: float) -> ChannelMap:
  """Place channel poles from the top pole down by ERB steps.

  A channel is emitted while the running pole frequency is above
  ``min_pole_hz``, except that the top pole is always kept so a design whose
  min_pole_hz equals the top pole yields exactly one channel.
  """
  validate_car_params(params, sample_rate)
  top = params.first_pole_fraction * sample_rate / 2
  freqs = []
  pole_hz = top
  while pole_hz > params.min_pole_hz or (not freqs and pole_hz == top):
    freqs.append(pole_hz)
    pole_hz = pole_hz - params.erb_per_step * hz_to_erb(
        pole_hz, params.erb_break_freq_hz, params.erb_q)
    if len(freqs) > 10000:
      raise DesignError('channel spacing too fine; more than 10000 channels')
  if not freqs:
    raise DesignError(
        f'min_pole_hz={params.min_pole_hz} is above the top pole '
        f'{top:.1f} Hz; no channels')
  return ChannelMap(n_ch=len(freqs), pole_freqs=np.asarray(freqs))


# ---------------------------------------------------------------------------
# CAR coefficients
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class CarCoeffs:
  """Per-channel run-time coefficients of the resonator cascade.

  The stage gain as a function of relative undamping u is approximated by
  ``g_parabola[:, 0] + g_parabola[:, 1] * u + g_parabola[:, 2] * u**2``.
  """

  n_ch: int
  velocity_scale: float
  v_offset: float
  a0: np.ndarray  # cos(theta)
  c0: np.ndarray  # sin(theta)
  r1: np.ndarray  # pole radius at maximum damping
  zr: np.ndarray  # radius range available to undamping
  h: np.ndarray  # zero-forming feed
  g_parabola: np.ndarray  # (n_ch, 3)
  g0: np.ndarray  # exact stage gain at full undamping, for initial state
  ac_coeff: float
  use_delay_buffer: bool = False

  def stage_gain(self, undamping) -> np.ndarray:
    p = self.g_parabola
    return p[:, 0] + p[:, 1] * undamping + p[:, 2] * undamping**2


def stage_gain_exact(a0, c0, h, r1, zr, undamping):
  """Stage gain giving unity DC gain, from the pole-zero polynomials."""
  r = r1 + zr * undamping
  return (1 - 2 * r * a0 + r**2) / (1 - 2 * r * a0 + h * r * c0 + r**2)


def fit_stage_gain_parabola(a0, c0, h, r1, zr) -> np.ndarray:
  """Interpolate the exact stage gain at u = 0, 0.5, 1 with a quadratic.

  Works on scalars or per-channel vectors. Returns columns (p0, p1, p2) with
  ``g(u) ~= p0 + p1 * u + p2 * u**2``.
  """
  g0 = stage_gain_exact(a0, c0, h, r1, zr, 0.0)
  g1 = stage_gain_exact(a0, c0, h, r1, zr, 1.0)
  ghalf = stage_gain_exact(a0, c0, h, r1, zr, 0.5)
  p2 = 2 * (g0 + g1 - 2 * ghalf)
  p1 = 4 * ghalf - 3 * g0 - g1
  p0 = g0
  return np.stack(np.broadcast_arrays(p0, p1, p2), axis=-1)


def ac_coupler_coeff(ac_corner_hz: float, sample_rate: float) -> float:
  return 2 * math.pi * ac_corner_hz / sample_rate


def design_car_coeffs(params: CarDesignParams, sample_rate: float,
                      channels: ChannelMap) -> CarCoeffs:
  validate_car_params(params, sample_rate)
  pole_freqs = np.asarray(channels.pole_freqs, dtype=np.float64)
  if np.any(pole_freqs <= 0) or np.any(pole_freqs >= sample_rate / 2):
    raise DesignError('pole frequencies must lie in (0, sample_rate/2)')

  theta = pole_freqs * (2 * math.pi / sample_rate)
  c0 = np.sin(theta)
  a0 = np.cos(theta)

  # Compress theta to give somewhat higher Q at the highest thetas.
  ff = params.high_f_damping_compression
  x = theta / math.pi
  zr_scale = math.pi * (x - ff * x**3)
  r1 = 1 - zr_scale * params.max_zeta
  # Pull min damping 25% of the way toward ERB/CF where channels spread out.
  min_zetas = params.min_zeta + 0.25 * (
      hz_to_erb(pole_freqs, params.erb_break_freq_hz, params.erb_q) /
      pole_freqs - params.min_zeta)
  zr = zr_scale * (params.max_zeta - min_zetas)

  if np.any(r1 <= 0) or np.any(zr < 0) or np.any(r1 + zr >= 1):
    bad = int(np.argmax((r1 <= 0) | (zr < 0) | (r1 + zr >= 1)))
    raise DesignError(
        f'unstable or inverted damping range at channel {bad} '
        f'({pole_freqs[bad]:.1f} Hz): r1={r1[bad]:.6f}, zr={zr[bad]:.6f}')

  # zero_ratio**2 = 1 + f, with h = f * c0
  h = c0 * (params.zero_ratio**2 - 1)

  return CarCoeffs(
      n_ch=channels.n_ch,
      velocity_scale=params.velocity_scale,
      v_offset=params.v_offset,
      a0=a0,
      c0=c0,
      r1=r1,
      zr=zr,
      h=h,
      g_parabola=fit_stage_gain_parabola(a0, c0, h, r1, zr),
      g0=stage_gain_exact(a0, c0, h, r1, zr, 1.0),
      ac_coeff=ac_coupler_coeff(params.ac_corner_hz, sample_rate),
      use_delay_buffer=params.use_delay_buffer,
  )


# ---------------------------------------------------------------------------
# IHC coefficients
# ---------------------------------------------------------------------------


def ihc_detect(x):
  """Saturating soft rectifier from BM displacement to conductance."""
  scalar = np.isscalar(x)
  z = np.maximum(0.0, np.asarray(x, dtype=np.float64) + 0.175)
  z_sq = z * z
  z_cube = z_sq * z
  conductance = z_cube / (z_cube + z_sq + 0.1)
  return float(conductance) if scalar else conductance


def ihc_detect_slope(x):
  """Derivative of :func:`ihc_detect`."""
  z = np.maximum(0.0, np.asarray(x, dtype=np.float64) + 0.175)
  return (z**4 + 0.3 * z**2) / (z**3 + z**2 + 0.1)**2


@dataclasses.dataclass(frozen=True)
class IhcCoeffs:
  """Run-time IHC coefficients; fields unused by a variant stay zero.

  Rates are per-sample fractions. ``quiescent_output`` is the silence
  steady-state output that is subtracted so the NAP rests at zero.
  """

  variant: IhcVariant
  lpf_coeff: float = 0.0  # output smoother
  # two_cap
  out1_rate: float = 0.0
  in1_rate: float = 0.0
  out2_rate: float = 0.0
  in2_rate: float = 0.0
  rest_cap1: float = 0.0
  rest_cap2: float = 0.0
  # one_cap
  out_rate: float = 0.0
  in_rate: float = 0.0
  rest_cap: float = 0.0
  output_gain: float = 0.0
  quiescent_output: float = 0.0
  hwr_limit: float = 2.0

  @property
  def rates(self) -> dict:
    names = {
        IhcVariant.TWO_CAP: ('lpf_coeff', 'out1_rate', 'in1_rate',
                             'out2_rate', 'in2_rate'),
        IhcVariant.ONE_CAP: ('lpf_coeff', 'out_rate', 'in_rate'),
        IhcVariant.JUST_HWR: (),
    }[self.variant]
    return {n: getattr(self, n) for n in names}


def one_pole_coeff(tau: float, sample_rate: float) -> float:
  return 1 - math.exp(-1 / (tau * sample_rate))


def design_ihc_coeffs(params: IhcDesignParams,
                      sample_rate: float) -> IhcCoeffs:
  if not sample_rate > 0:
    raise DesignError(f'sample_rate must be positive, got {sample_rate}')
  variant = IhcVariant(params.variant)
  fs = sample_rate

  if variant is IhcVariant.JUST_HWR:
    return IhcCoeffs(variant=variant, hwr_limit=params.hwr_limit)

  if variant is IhcVariant.ONE_CAP:
    ro = 1 / ihc_detect(10.0)  # output resistance at a very high level
    c = params.tau_out / ro
    ri = params.tau_in / c
    # steady-state average: double ro for a 50% duty cycle
    saturation_output = 1 / (2 * ro + ri)
    r0 = 1 / ihc_detect(0.0)
    current = 1 / (ri + r0)
    return IhcCoeffs(
        variant=variant,
        lpf_coeff=one_pole_coeff(params.tau_lpf, fs),
        out_rate=ro / (params.tau_out * fs),
        in_rate=1 / (params.tau_in * fs),
        rest_cap=1 - current * ri,
        output_gain=1 / (saturation_output - current),
        quiescent_output=current / (saturation_output - current),
    )

  g1_max = ihc_detect(10.0)  # receptor conductance at a high level
  r1min = 1 / g1_max
  c1 = params.tau1_out * g1_max
  r1 = params.tau1_in / c1
  g10 = ihc_detect(0.0)
  rest_current1 = 1 / (r1 + 1 / g10)
  rest_cap1 = 1 - rest_current1 * r1

  # Second cap works the same way, driven by the receptor potential.
  g2max = r1 / (r1min + r1)
  r2min = 1 / g2max
  c2 = params.tau2_out * g2max
  r2 = params.tau2_in / c2
  saturation_current2 = 1 / (2 * r2min + r2)
  rest_vrecep = r1 * rest_current1
  rest_current2 = 1 / (r2 + 1 / rest_vrecep)
  rest_cap2 = 1 - rest_current2 * r2

  return IhcCoeffs(
      variant=variant,
      lpf_coeff=one_pole_coeff(params.tau_lpf, fs),
      out1_rate=r1min / (params.tau1_out * fs),
      in1_rate=1 / (params.tau1_in * fs),
      out2_rate=r2min / (params.tau2_out * fs),
      in2_rate=1 / (params.tau2_in * fs),
      rest_cap1=rest_cap1,
      rest_cap2=rest_cap2,
      output_gain=1 / (saturation_current2 - rest_current2),
      quiescent_output=rest_current2 / (saturation_current2 - rest_current2),
  )


# ---------------------------------------------------------------------------
# AGC coefficients
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class AgcStageCoeffs:
  decimation: int
  epsilon: float  # temporal one-pole coefficient at the decimated rate
  fir_taps: Tuple[float, float, float]  # (left, mid, right)
  n_iterations: int
  stage_gain: float
  mix_coeff: float


@dataclasses.dataclass(frozen=True)
class AgcCoeffs:
  n_ch: int
  stages: Tuple[AgcStageCoeffs, ...]
  detect_scale: float  # reciprocal DC gain of the stage cascade
  decimation_reduced: bool = False

  @property
  def n_stages(self) -> int:
    return len(self.stages)

  @property
  def decimation(self) -> Tuple[int, ...]:
    return tuple(s.decimation for s in self.stages)

  def update_interval(self, stage: int) -> int:
    return int(np.prod(self.decimation[:stage + 1]))


def design_fir_taps(spread_sq: float, delay: float,
                    n_iter: int) -> Tuple[Tuple[float, float, float], bool]:
  """Moment-match a 3-tap smoother applied ``n_iter`` times.

  The taps [a, 1-a-b, b] form a distribution over channel offsets; its mean
  matches ``delay / n_iter`` and its variance ``spread_sq / n_iter``.
  Feasible when all taps are nonnegative and the center tap stays >= 0.25,
  which keeps the kernel unimodal.
  """
  mean = delay / n_iter
  var = spread_sq / n_iter
  a = (var + mean * mean - mean) / 2
  b = (var + mean * mean + mean) / 2
  taps = (a, 1 - a - b, b)
  ok = taps[1] >= 0.25 and a >= 0 and b >= 0
  return taps, ok


def _design_agc_stages(params: AgcDesignParams, sample_rate: float,
                       decimation: Tuple[int, ...]):
  stages = []
  decim = 1
  for k in range(params.n_stages):
    tau = params.time_constants[k]
    decim *= decimation[k]
    epsilon = 1 - math.exp(-decim / (tau * sample_rate))
    # number of updates within one time constant; smoothing repeats this often
    n_times = tau * (sample_rate / decim)
    s1, s2 = params.agc1_scales[k], params.agc2_scales[k]
    delay = (s2 - s1) / n_times
    spread_sq = (s1**2 + s2**2) / n_times

    taps = None
    for n_iter in range(1, params.max_fir_iterations + 1):
      taps, ok = design_fir_taps(spread_sq, delay, n_iter)
      if ok:
        break
    else:
      return None, k

    mix = 0.0 if k == 0 else params.agc_mix_coeff / n_times
    stages.append(
        AgcStageCoeffs(decimation=int(decimation[k]), epsilon=epsilon,
                       fir_taps=taps, n_iterations=n_iter,
                       stage_gain=params.agc_stage_gain, mix_coeff=mix))
  return tuple(stages), None


def design_agc_coeffs(params: AgcDesignParams, sample_rate: float,
                      n_ch: int) -> AgcCoeffs:
  """Design the AGC loop filter, reducing first-stage decimation if needed.

  When the requested spatial smoothing cannot be reached by the 3-tap FIR
  within ``max_fir_iterations`` passes, the first stage's decimation is
  halved (floor 1) and the whole cascade is redesigned.
  """
  validate_agc_params(params)
  if not sample_rate > 0:
    raise DesignError(f'sample_rate must be positive, got {sample_rate}')
  decimation = tuple(int(d) for d in params.decimation)
  reduced = False
  while True:
    stages, bad_stage = _design_agc_stages(params, sample_rate, decimation)
    if stages is not None:
      break
    if decimation[0] == 1:
      raise DesignError(
          f'AGC stage {bad_stage}: requested spatial smoothing is not '
          'reachable with a 3-tap FIR even at first-stage decimation 1')
    decimation = (max(1, decimation[0] // 2),) + decimation[1:]
    reduced = True

  total_dc_gain = sum(params.agc_stage_gain**k for k in range(params.n_stages))
  return AgcCoeffs(n_ch=n_ch, stages=stages, detect_scale=1 / total_dc_gain,
                   decimation_reduced=reduced)


# ---------------------------------------------------------------------------
# Whole model
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class CarfacCoeffs:
  sample_rate: float
  channels: ChannelMap
  car: CarCoeffs
  ihc: IhcCoeffs
  agc: AgcCoeffs

  @property
  def n_ch(self) -> int:
    return self.channels.n_ch

  @property
  def pole_freqs(self) -> np.ndarray:
    return self.channels.pole_freqs


def design_coeffs(params: CarfacDesignParams) -> CarfacCoeffs:
  """Run every design step; a pure function of ``params``."""
  fs = params.sample_rate
  channels = design_channels(params.car, fs)
  return CarfacCoeffs(
      sample_rate=fs,
      channels=channels,
      car=design_car_coeffs(params.car, fs, channels),
      ihc=design_ihc_coeffs(params.ihc, fs),
      agc=design_agc_coeffs(params.agc, fs, channels.n_ch),
  )
