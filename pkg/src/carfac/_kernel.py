"""Compiled sample loop for the full CAR -> IHC -> AGC pipeline.

Operation order matches the numpy step functions in car.py, ihc.py and
agc.py exactly, so float64 results agree bit for bit with the reference
engine. State arrays are modified in place.

Store layouts (leading index is the field):
  car_store: (9, n_ears, n_ch) in CarState.FIELDS order
  ihc_store: (4, n_ears, n_ch) in IhcState.FIELDS order
"""

import numba
import numpy as np

TWO_CAP, ONE_CAP, JUST_HWR = 0, 1, 2

# CarState field indices
Z1, Z2, ZA, ZB, DZB, G, DG, ZY, AC = range(9)
# IhcState field indices
CAP1, CAP2, LPF1, LPF2 = range(4)
# ihc_params vector layout
(I_LPF, I_OUT1, I_IN1, I_OUT2, I_IN2, I_REST1, I_OUT, I_IN, I_GAIN, I_QUIET,
 I_LIMIT) = range(11)
N_IHC_PARAMS = 11


@numba.njit(cache=True)
def _smooth(x, tmp, left, mid, right, n_iter):
  n = x.shape[0]
  for _ in range(n_iter):
    for c in range(n):
      prev = x[c - 1] if c > 0 else x[0]
      nxt = x[c + 1] if c < n - 1 else x[n - 1]
      tmp[c] = left * prev + mid * x[c] + right * nxt
    for c in range(n):
      x[c] = tmp[c]


@numba.njit(cache=True)
def run_kernel(audio, a0, c0, r1, zr, h, gp, vel_scale, v_offset, ac_coeff,
               use_delay, linear, ihc_variant, ihc_params, decim, eps, taps,
               n_iter, stage_gain, mix, detect_scale, health, open_loop,
               car_store, ihc_store, agc_mem, agc_accum, agc_phase,
               nap_out, bm_out, bm_raw_out, rp_out, ohc_out, agc_out,
               agc_times):
  n_samp, n_ears = audio.shape
  n_ch = a0.shape[0]
  n_stages = decim.shape[0]
  rec_nap = nap_out.shape[1] > 0
  rec_bm = bm_out.shape[1] > 0
  rec_raw = bm_raw_out.shape[1] > 0
  rec_rp = rp_out.shape[1] > 0
  rec_ohc = ohc_out.shape[1] > 0

  z1n = np.empty(n_ch, dtype=car_store.dtype)
  z2n = np.empty(n_ch, dtype=car_store.dtype)
  nap = np.empty(n_ch, dtype=car_store.dtype)
  avg = np.empty((n_stages, n_ch), dtype=car_store.dtype)
  tmp = np.empty(n_ch, dtype=car_store.dtype)
  depth = np.zeros(n_ears, dtype=np.int64)

  lpf_c = ihc_params[I_LPF]
  n_updates = 0

  for t in range(n_samp):
    for e in range(n_ears):
      z1 = car_store[Z1, e]
      z2 = car_store[Z2, e]
      za = car_store[ZA, e]
      zb = car_store[ZB, e]
      g = car_store[G, e]
      zy = car_store[ZY, e]
      acs = car_store[AC, e]

      # --- CAR, channel-parallel part
      for c in range(n_ch):
        gc = g[c] + car_store[DG, e, c]
        zbc = zb[c] + car_store[DZB, e, c]
        v = z2[c] - za[c]
        if linear:
          nlf = 1.0
        else:
          q = v * vel_scale + v_offset
          nlf = 1.0 / (1 + q * q)
        r = r1[c] + zbc * nlf
        z1n[c] = r * (a0[c] * z1[c] - c0[c] * z2[c])
        z2n[c] = r * (c0[c] * z1[c] + a0[c] * z2[c])
        za[c] = z2[c]
        zb[c] = zbc
        g[c] = gc
        if rec_ohc:
          ohc_out[e, t, c] = zbc * nlf

      # --- stage coupling
      x = audio[t, e]
      if use_delay:
        for c in range(n_ch - 1, -1, -1):
          stage_in = zy[c - 1] if c > 0 else x
          z1n[c] = z1n[c] + stage_in
          zy[c] = g[c] * (h[c] * z2n[c] + stage_in)
      else:
        in_out = x
        for c in range(n_ch):
          z1n[c] += in_out
          in_out = g[c] * (in_out + h[c] * z2n[c])
          zy[c] = in_out
      for c in range(n_ch):
        z1[c] = z1n[c]
        z2[c] = z2n[c]

      # --- AC coupler and IHC
      cap1 = ihc_store[CAP1, e]
      cap2 = ihc_store[CAP2, e]
      lpf1 = ihc_store[LPF1, e]
      lpf2 = ihc_store[LPF2, e]
      for c in range(n_ch):
        bm = zy[c] - acs[c]
        acs[c] = acs[c] + ac_coeff * bm
        if rec_raw:
          bm_raw_out[e, t, c] = zy[c]
        if rec_bm:
          bm_out[e, t, c] = bm

        if ihc_variant == JUST_HWR:
          nap[c] = min(ihc_params[I_LIMIT], max(0.0, bm))
          rp = 0.0
        else:
          zz = max(0.0, bm + 0.175)
          zz_sq = zz * zz
          zz_cube = zz_sq * zz
          cond = zz_cube / (zz_cube + zz_sq + 0.1)
          if ihc_variant == TWO_CAP:
            cur = cond * cap1[c]
            cap1[c] = (cap1[c] - cur * ihc_params[I_OUT1] +
                       (1 - cap1[c]) * ihc_params[I_IN1])
            vrec = 1 - cap1[c]
            rel = vrec * cap2[c]
            cap2[c] = (cap2[c] - rel * ihc_params[I_OUT2] +
                       (1 - cap2[c]) * ihc_params[I_IN2])
            out = rel * ihc_params[I_GAIN]
            lpf1[c] = lpf1[c] + lpf_c * (out - lpf1[c])
            nap[c] = lpf1[c] - ihc_params[I_QUIET]
            rp = ihc_params[I_REST1] - cap1[c]
          else:
            rel = cond * cap1[c]
            cap1[c] = (cap1[c] - rel * ihc_params[I_OUT] +
                       (1 - cap1[c]) * ihc_params[I_IN])
            out = rel * ihc_params[I_GAIN]
            lpf1[c] = lpf1[c] + lpf_c * (out - lpf1[c])
            lpf2[c] = lpf2[c] + lpf_c * (lpf1[c] - lpf2[c])
            nap[c] = lpf2[c] - ihc_params[I_QUIET]
            rp = 0.0
        if rec_nap:
          nap_out[e, t, c] = nap[c]
        if rec_rp:
          rp_out[e, t, c] = rp

      # --- AGC: accumulate up the cascade while stages fire
      mem = agc_mem[e]
      acc = agc_accum[e]
      ph = agc_phase[e]
      d = 0
      for s in range(n_stages):
        ph[s] = (ph[s] + 1) % decim[s]
        if s == 0:
          for c in range(n_ch):
            acc[0, c] += detect_scale * nap[c]
        else:
          for c in range(n_ch):
            acc[s, c] += avg[s - 1, c]
        if ph[s] != 0:
          break
        for c in range(n_ch):
          avg[s, c] = acc[s, c] / decim[s]
          acc[s, c] = 0.0
        d = s + 1
      # then update fired stages from slowest to fastest
      for s in range(d - 1, -1, -1):
        for c in range(n_ch):
          stage_in = avg[s, c]
          if s < n_stages - 1:
            stage_in = stage_in + stage_gain[s] * mem[s + 1, c]
          tmp[c] = mem[s, c] + eps[s] * (stage_in - mem[s, c])
        for c in range(n_ch):
          mem[s, c] = tmp[c]
        _smooth(mem[s], tmp, taps[s, 0], taps[s, 1], taps[s, 2], n_iter[s])
      depth[e] = d

    if depth[0] == 0:
      continue

    # --- cross-ear mixing of the stages that just fired
    if n_ears > 1:
      for s in range(depth[0]):
        m = max(mix[s], 0.0)
        for c in range(n_ch):
          total = 0.0
          for e in range(n_ears):
            total += agc_mem[e, s, c]
          mean = total / n_ears
          for e in range(n_ears):
            agc_mem[e, s, c] = agc_mem[e, s, c] + m * (mean - agc_mem[e, s, c])

    # --- loop closure
    for e in range(n_ears):
      for c in range(n_ch):
        if open_loop:
          car_store[DZB, e, c] = 0.0
          car_store[DG, e, c] = 0.0
        else:
          u = max(1 - agc_mem[e, 0, c], 0.0) * health[e, c]
          new_g = gp[c, 0] + gp[c, 1] * u + gp[c, 2] * u**2
          car_store[DZB, e, c] = (zr[c] * u - car_store[ZB, e, c]) / decim[0]
          car_store[DG, e, c] = (new_g - car_store[G, e, c]) / decim[0]
    if n_updates < agc_out.shape[0]:
      for e in range(n_ears):
        for c in range(n_ch):
          agc_out[n_updates, e, c] = agc_mem[e, 0, c]
      agc_times[n_updates] = t
    n_updates += 1

  return n_updates
