"""Time-scale-separated approximations and model self-checks.

* GFM: with the power filter taken as instantaneous, frequency is a memoryless
  function of electrical power.
* SG: before the governor moves, frequency declines on the inertial line.
* SG second-order relation: the governor output must satisfy
  ``p_m'' = (-(p_m - p_e) / (2 H R_D) - p_m') / tau_G`` on any simulated trace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .devices import GfmParams, SgParams
from .engine import write_csv

GFM_ALGEBRAIC = "gfm_algebraic"
SG_FIRST_ORDER = "sg_first_order"


@dataclass
class ReducedTrace:
    t: np.ndarray
    f_reduced: np.ndarray
    source_model: str
    name: str = "device"

    def to_csv(self, path) -> None:
        write_csv(path, ["t", f"dev:{self.name}:f_reduced"], np.column_stack([self.t, self.f_reduced]))


def gfm_reduced_frequency(p_e, params: GfmParams) -> np.ndarray:
    """Droop frequency with ``p_m`` replaced by ``p_e`` (device base)."""
    p_e = np.asarray(p_e, dtype=float)
    return params.f0 + params.f0 * params.droop * (params.p_set - p_e)


def sg_reduced_trajectory(params: SgParams, delta_p: float, horizon: float,
                          dt: float = 0.001) -> ReducedTrace:
    """Inertial response to a constant electrical excess ``delta_p`` with
    mechanical power frozen at its set point.

    Without damping this is the line ``f0 - delta_p * f0 / (2 H) * t``; with
    ``D > 0`` the speed relaxes exponentially towards ``-delta_p / D``.
    """
    if params.D < 0:
        raise ValueError("damping must be non-negative")
    t = np.arange(int(round(horizon / dt)) + 1) * dt
    H, D, f0 = params.H, params.D, params.f0
    if D == 0:
        x = -delta_p * t / (2 * H)
    else:
        x = -(delta_p / D) * (1.0 - np.exp(-D * t / (2 * H)))
    return ReducedTrace(t, f0 * (1.0 + x), SG_FIRST_ORDER)


def droop_settling(params, delta_p: float) -> float:
    """Steady frequency once the device's pre-converter power rose by ``delta_p``."""
    return params.f0 - params.f0 * params.droop * delta_p


def sg_second_order_residual(series, device, params: SgParams, event_times=(), guard: int = 1):
    """Residual of the SG second-order governor relation on recorded samples.

    Derivatives come from central differences at the recording step; the two
    end samples and samples within ``guard`` of an event (where ``p_e``
    jumps) are dropped. Returns ``(t, residual)`` in pu/s^2.
    """
    k = series.device(device) if isinstance(device, str) else int(device)
    t = np.asarray(series.t)
    if t.size < 3:
        raise ValueError("need at least three samples for second differences")
    dt = t[1] - t[0]
    pm = series.p_m[:, k]
    pe = series.p_e[:, k]
    f = series.f[:, k]
    d1 = (pm[2:] - pm[:-2]) / (2 * dt)
    d2 = (pm[2:] - 2 * pm[1:-1] + pm[:-2]) / dt**2
    mid = slice(1, -1)
    slip = (f[mid] - params.f0) / params.f0
    accel = (pm[mid] - pe[mid] - params.D * slip) / (2 * params.H)
    model = (-accel / params.droop - d1) / params.tau
    r = d2 - model
    keep = np.ones(r.size, dtype=bool)
    for te in event_times:
        ke = int(round((te - t[0]) / dt)) - 1
        keep[max(0, ke - guard): max(0, ke + guard + 1)] = False
    return t[mid][keep], r[keep]
