"""Exception types raised by the CARFAC library."""


class CarfacError(Exception):
  """Base class for all library errors."""


class DesignError(CarfacError, ValueError):
  """Design parameters are invalid or lead to an unusable filterbank."""


class UsageError(CarfacError, ValueError):
  """A run-time call does not match the model it is applied to."""
