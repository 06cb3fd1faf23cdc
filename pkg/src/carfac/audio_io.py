"""WAV input and output-plane serialization (CSV, raw64, PGM)."""

from __future__ import annotations

import io
import struct
import wave
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy.io import wavfile

from carfac.errors import UsageError

RAW64_MAGIC = b'CARFAC64'
FORMATS = ('csv', 'raw64', 'pgm')
SILENT_LEVEL = 1e-9  # auto-scaled images below this are blank


# -- WAV ---------------------------------------------------------------------


def read_wav(path) -> Tuple[np.ndarray, int]:
  """Read a WAV file as float64 audio shaped (n_channels, n_samples).

  Accepts 16-, 24- and 32-bit integer PCM and 32/64-bit IEEE float. Integer
  PCM is scaled so full scale maps to [-1, 1).
  """
  try:
    rate, data = wavfile.read(path)
  except ValueError as err:
    raise UsageError(f'unsupported WAV file {path}: {err}') from err
  if data.dtype == np.int16:
    x = data / 32768.0
  elif data.dtype == np.int32:  # 24-bit data arrives left-justified
    x = data / 2147483648.0
  elif data.dtype in (np.float32, np.float64):
    x = data.astype(np.float64)
  else:
    raise UsageError(f'unsupported WAV sample type {data.dtype} in {path}')
  x = np.asarray(x, dtype=np.float64)
  if x.ndim == 1:
    x = x[np.newaxis]
  else:
    x = x.T
  return np.ascontiguousarray(x), int(rate)


def write_wav(path, audio, sample_rate: int, encoding: str = 'float32') -> None:
  """Write (n_channels, n_samples) or 1-D audio.

  ``encoding`` is one of float32, pcm16, pcm24.
  """
  x = np.atleast_2d(np.asarray(audio, dtype=np.float64))
  frames = x.T
  if encoding == 'float32':
    wavfile.write(path, int(sample_rate), frames.astype(np.float32))
  elif encoding == 'pcm16':
    q = np.clip(np.round(frames * 32768.0), -32768, 32767).astype('<i2')
    wavfile.write(path, int(sample_rate), q)
  elif encoding == 'pcm24':
    q = np.clip(np.round(frames * 8388608.0), -8388608, 8388607)
    q = np.ascontiguousarray(q, dtype='<i4')
    packed = q.view(np.uint8).reshape(-1, 4)[:, :3].tobytes()
    with wave.open(str(path), 'wb') as w:
      w.setnchannels(x.shape[0])
      w.setsampwidth(3)
      w.setframerate(int(sample_rate))
      w.writeframes(packed)
  else:
    raise UsageError(f'unknown WAV encoding {encoding!r}')


# -- planes ------------------------------------------------------------------


def write_csv(path, plane: np.ndarray, cf_hz: np.ndarray) -> None:
  """One row per sample, one column per channel, header row of CFs in Hz."""
  plane = np.asarray(plane)
  if plane.ndim != 2 or plane.shape[1] != len(cf_hz):
    raise UsageError('CSV plane must be (n_samples, n_ch) matching cf_hz')
  header = ','.join(f'{f:.6f}' for f in cf_hz)
  np.savetxt(path, plane, delimiter=',', fmt='%.17g', header=header,
             comments='')


def read_csv(path) -> Tuple[np.ndarray, np.ndarray]:
  """Returns (plane, cf_hz)."""
  with open(path) as f:
    header = f.readline()
    cf = np.array([float(v) for v in header.strip().split(',')])
    plane = np.loadtxt(f, delimiter=',', ndmin=2)
  if plane.size == 0:
    plane = plane.reshape(0, cf.size)
  return plane, cf


def raw64_bytes(plane: np.ndarray) -> bytes:
  plane = np.asarray(plane, dtype='<f8')
  n_samples, n_ch = plane.shape
  header = RAW64_MAGIC + struct.pack('<II', n_ch, n_samples)
  return header + np.ascontiguousarray(plane).tobytes()


def write_raw64(path, plane: np.ndarray) -> None:
  """16-byte header (magic, uint32 n_ch, uint32 n_samples), then
  little-endian float64 samples x channels in C order."""
  Path(path).write_bytes(raw64_bytes(plane))


def read_raw64(path) -> np.ndarray:
  blob = Path(path).read_bytes()
  if blob[:8] != RAW64_MAGIC:
    raise UsageError(f'{path} is not a raw64 plane')
  n_ch, n_samples = struct.unpack('<II', blob[8:16])
  expected = 16 + 8 * n_ch * n_samples
  if len(blob) != expected:
    raise UsageError(f'{path}: size {len(blob)} != expected {expected}')
  return np.frombuffer(blob, dtype='<f8', offset=16).reshape(
      n_samples, n_ch).astype(np.float64)


def smooth_and_decimate(plane: np.ndarray, hop: int) -> np.ndarray:
  """Average (n_samples, n_ch) over non-overlapping windows of ``hop``."""
  hop = max(1, int(hop))
  n = plane.shape[0] // hop
  if n == 0:
    return np.zeros((0, plane.shape[1]))
  return plane[:n * hop].reshape(n, hop, -1).mean(axis=1)


def pgm_bytes(plane: np.ndarray, hop: int = 1,
              vmax: Optional[float] = None) -> bytes:
  """Binary 8-bit PGM with rows = channels (base on top), columns = frames.

  Values are clipped to [0, vmax]; vmax defaults to the frame maximum. An
  image whose maximum is at rounding level (silence) maps to all zeros.
  """
  frames = smooth_and_decimate(np.asarray(plane, dtype=np.float64), hop)
  img = np.clip(frames.T, 0.0, None)
  if vmax is None:
    top = float(img.max()) if img.size else 0.0
    if top < SILENT_LEVEL:
      top = 0.0
  else:
    top = vmax
  if top > 0:
    pix = np.round(255 * np.minimum(img, top) / top).astype(np.uint8)
  else:
    pix = np.zeros(img.shape, dtype=np.uint8)
  height, width = pix.shape
  buf = io.BytesIO()
  buf.write(f'P5\n{width} {height}\n255\n'.encode('ascii'))
  buf.write(pix.tobytes())
  return buf.getvalue()


def write_pgm(path, plane: np.ndarray, hop: int = 1,
              vmax: Optional[float] = None) -> None:
  Path(path).write_bytes(pgm_bytes(plane, hop, vmax))


def read_pgm(path) -> np.ndarray:
  blob = Path(path).read_bytes()
  parts = blob.split(b'\n', 3)
  if parts[0] != b'P5':
    raise UsageError(f'{path} is not a binary PGM')
  width, height = (int(v) for v in parts[1].split())
  return np.frombuffer(parts[3], dtype=np.uint8).reshape(height, width)


def write_plane(path_stem, plane: np.ndarray, cf_hz: np.ndarray, fmt: str,
                hop: int = 1) -> Path:
  """Write one (n_samples, n_ch) plane; returns the path written."""
  if fmt not in FORMATS:
    raise UsageError(f'unknown format {fmt!r}; expected one of {FORMATS}')
  path = Path(f'{path_stem}.{fmt}')
  if fmt == 'csv':
    write_csv(path, plane, cf_hz)
  elif fmt == 'raw64':
    write_raw64(path, plane)
  else:
    write_pgm(path, plane, hop)
  return path
