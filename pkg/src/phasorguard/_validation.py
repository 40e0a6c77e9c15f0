"""Input validation for complex measurement arrays.

``sklearn.utils.check_array`` rejects complex dtypes, so frames get their own
checks here.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigurationError, FrameError


def check_frame(z, m: int | None = None) -> np.ndarray:
    """Return ``z`` as a finite complex 1-D array of length ``m``."""
    z = np.asarray(z)
    if z.ndim != 1:
        raise FrameError(f"expected a 1-D measurement vector, got shape {z.shape}")
    z = z.astype(complex, copy=False)
    if m is not None and z.shape[0] != m:
        raise FrameError(f"frame has {z.shape[0]} rows, expected {m}")
    if not np.all(np.isfinite(z)):
        raise FrameError("measurement vector contains non-finite values")
    return z


def check_frames(Z, m: int | None = None) -> np.ndarray:
    """Return ``Z`` as a finite complex 2-D array (frames x measurements)."""
    Z = np.asarray(Z)
    if Z.ndim == 1:
        Z = Z[None, :]
    if Z.ndim != 2:
        raise FrameError(f"expected a 2-D array of frames, got shape {Z.shape}")
    Z = Z.astype(complex, copy=False)
    if m is not None and Z.shape[1] != m:
        raise FrameError(f"frames have {Z.shape[1]} rows, expected {m}")
    if not np.all(np.isfinite(Z)):
        raise FrameError("frames contain non-finite values")
    return Z


def check_unit_interval(value, name: str, *, closed: bool = False) -> float:
    v = float(value)
    ok = 0.0 <= v <= 1.0 if closed else 0.0 < v < 1.0
    if not ok:
        raise ConfigurationError(f"{name} must lie in {'[0, 1]' if closed else '(0, 1)'}, got {value}")
    return v


def check_positive(value, name: str) -> float:
    v = float(value)
    if not (np.isfinite(v) and v > 0):
        raise ConfigurationError(f"{name} must be positive, got {value}")
    return v
