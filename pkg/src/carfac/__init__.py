"""CARFAC v2 cochlear model: cascaded asymmetric resonators with fast-acting
compression."""

from carfac.design import (AgcDesignParams, CarDesignParams, CarfacCoeffs,
                           CarfacDesignParams, IhcDesignParams, IhcVariant,
                           default_design, design_coeffs)
from carfac.errors import CarfacError, DesignError, UsageError
from carfac.model import (CarfacModel, SegmentOutput, design_and_init,
                          reset_state, run_segment, set_ohc_health)

__version__ = '0.1.0'

__all__ = [
    'AgcDesignParams', 'CarDesignParams', 'CarfacCoeffs', 'CarfacDesignParams',
    'CarfacError', 'CarfacModel', 'DesignError', 'IhcDesignParams',
    'IhcVariant', 'SegmentOutput', 'UsageError', 'default_design',
    'design_and_init', 'design_coeffs', 'reset_state', 'run_segment',
    'set_ohc_health',
]
