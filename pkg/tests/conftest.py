import dataclasses
from pathlib import Path

import numpy as np
import pytest

from carfac import default_design, design_coeffs

FS = 22050.0
GOLDEN_DIR = Path(__file__).parent / 'golden'


def with_car(params, **changes):
  return dataclasses.replace(params,
                             car=dataclasses.replace(params.car, **changes))


def with_ihc(params, **changes):
  return dataclasses.replace(params,
                             ihc=dataclasses.replace(params.ihc, **changes))


@pytest.fixture(scope='session')
def params():
  return default_design(FS)


@pytest.fixture(scope='session')
def coeffs(params):
  return design_coeffs(params)


@pytest.fixture(scope='session')
def golden_dir():
  return GOLDEN_DIR


@pytest.fixture
def rng():
  return np.random.default_rng(1234)
