"""Reduced device models.

Synchronous generator: swing equation plus a first-order governor (3 states).
Grid-forming inverter, multi-loop droop: angle plus low-pass filtered
pre-converter power (2 states); its frequency is an output of the droop law.

Per-unit convention: powers on device base, frequency deviations on f0, and
droops are pure ratios so that ``delta_f_hz = f0 * droop * delta_p``.

Parameter and state fields may be floats or equal-length numpy arrays; the
engine evaluates a whole fleet of one kind in a single call that way.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

F0 = 60.0

# filter cutoff must exceed nominal angular speed / 5
GFM_TAU_WARN = 0.08
SG_TAU_WARN = 0.5


@dataclass(frozen=True)
class GfmParams:
    droop: float = 0.05
    tau: float = 0.05
    rating: float = 200.0
    p_set: float = 0.0
    f0: float = F0

    def __post_init__(self):
        if not np.all(np.asarray(self.droop) > 0):
            raise ValueError("GFM droop M_P must be positive")
        if not np.all(np.asarray(self.tau) > 0):
            raise ValueError("GFM filter time constant must be positive")
        if not np.all(np.asarray(self.rating) > 0):
            raise ValueError("GFM rating must be positive")
        if np.any(np.asarray(self.tau) > GFM_TAU_WARN):
            warnings.warn(f"GFM tau_I above {GFM_TAU_WARN} s violates the filter bandwidth bound", stacklevel=2)


@dataclass(frozen=True)
class SgParams:
    H: float = 4.0
    D: float = 0.0
    droop: float = 0.05
    tau: float = 0.5
    rating: float = 200.0
    p_set: float = 0.0
    f0: float = F0

    def __post_init__(self):
        if not np.all(np.asarray(self.H) > 0):
            raise ValueError("SG inertia H must be positive")
        if not np.all(np.asarray(self.droop) > 0):
            raise ValueError("SG droop R_D must be positive")
        if not np.all(np.asarray(self.rating) > 0):
            raise ValueError("SG rating must be positive")
        if not np.all(np.asarray(self.tau) > 0):
            raise ValueError("SG governor time constant must be positive")
        if np.any(np.asarray(self.tau) < SG_TAU_WARN):
            warnings.warn(f"SG tau_G below {SG_TAU_WARN} s is faster than typical governors", stacklevel=2)

    @property
    def omega_s(self):
        return 2 * math.pi * self.f0

    @property
    def M(self):
        return 2 * self.H / self.omega_s


@dataclass(frozen=True)
class GfmState:
    delta: float
    p_m: float


@dataclass(frozen=True)
class SgState:
    delta: float
    omega: float
    p_m: float


def gfm_derivatives(state: GfmState, p_e, params: GfmParams) -> GfmState:
    d_pm = 2 * math.pi * (p_e - state.p_m) / params.tau
    d_delta = 2 * math.pi * params.f0 * params.droop * (params.p_set - state.p_m)
    return GfmState(d_delta, d_pm)


def gfm_frequency(state: GfmState, params: GfmParams):
    """Droop frequency in Hz; equals f0 when ``p_m == p_set``."""
    return params.f0 + params.f0 * params.droop * (params.p_set - state.p_m)


def sg_derivatives(state: SgState, p_e, params: SgParams) -> SgState:
    ws = 2 * math.pi * params.f0
    slip = state.omega - ws
    d_omega = (state.p_m - p_e - params.D * slip / ws) * ws / (2 * params.H)
    # (f0 - f) / f0 with f = f0 * omega / ws
    d_pm = ((ws - state.omega) / ws / params.droop - (state.p_m - params.p_set)) / params.tau
    return SgState(slip, d_omega, d_pm)


def sg_frequency(state: SgState, params: SgParams):
    return params.f0 * (state.omega / params.omega_s)


def init_steady_state(params, p_e0, delta=0.0):
    """Equilibrium state and matching params for output ``p_e0`` at f0.

    Returns ``(state, params)``; the set point is moved to ``p_e0`` so every
    derivative is exactly zero.
    """
    params = replace(params, p_set=p_e0)
    if isinstance(params, GfmParams):
        return GfmState(delta, p_e0), params
    if isinstance(params, SgParams):
        return SgState(delta, params.omega_s, p_e0), params
    raise TypeError(f"unsupported device parameters {type(params).__name__}")
