"""Frequency metrics: rating-weighted average frequency, windowed ROCOF,
aggregate inertia, nadir/settling detection and response-order classification."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

ROCOF_WINDOW = 0.1
SETTLING_WINDOW = 0.5
SETTLING_PP = 1e-3
CLASSIFY_EPS = 2e-3

FIRST_ORDER = "first_order"
SECOND_ORDER = "second_order"
INDETERMINATE = "indeterminate"


def average_frequency(device_f, ratings) -> np.ndarray:
    """Rating-weighted mean frequency per sample.

    ``device_f`` is ``(n_samples, n_devices)`` (or a 1-d single sample).
    """
    ratings = np.asarray(ratings, dtype=float)
    if ratings.size == 0:
        raise ValueError("average frequency needs at least one device")
    if np.any(ratings <= 0):
        raise ValueError("device ratings must be positive")
    f = np.asarray(device_f, dtype=float)
    if f.shape[-1] != ratings.size:
        raise ValueError(f"got {f.shape[-1]} frequency traces for {ratings.size} ratings")
    return f @ ratings / ratings.sum()


def rocof(f, dt: float, window: float = ROCOF_WINDOW) -> tuple[float, float]:
    """Largest absolute sliding-window ROCOF and the window start time.

    ``(f[t + window] - f[t]) / window`` over every ``t`` on the sample grid,
    times measured from the first sample.
    """
    f = np.asarray(f, dtype=float)
    n = int(round(window / dt))
    if n < 1:
        raise ValueError("ROCOF window shorter than one sample")
    if n >= f.size:
        raise ValueError(f"ROCOF window {window} s is not shorter than the {f.size}-sample trace")
    slope = np.abs(f[n:] - f[:-n]) / (n * dt)
    k = int(np.argmax(slope))
    return float(slope[k]), k * dt


def aggregate_inertia(devices: Sequence[tuple[float, float]]) -> float:
    """Rating-weighted inertia ``sum(H_i S_i) / sum(S_i)``; GFMs enter with H = 0."""
    if len(devices) == 0:
        raise ValueError("aggregate inertia of an empty fleet")
    H = np.array([d[0] for d in devices], dtype=float)
    S = np.array([d[1] for d in devices], dtype=float)
    if np.any(S <= 0):
        raise ValueError("device ratings must be positive")
    return float(H @ S / S.sum())


def nadir_and_settling(t, f, event_time: float, window: float = SETTLING_WINDOW,
                       max_pp: float = SETTLING_PP):
    """Post-event minimum and settling frequency.

    Settling is the mean of the last ``window`` seconds, or ``None`` when that
    window's peak-to-peak exceeds ``max_pp``.
    """
    t = np.asarray(t, dtype=float)
    f = np.asarray(f, dtype=float)
    post = t >= event_time - 1e-12
    if not post.any():
        raise ValueError("no samples after the event")
    idx = np.nonzero(post)[0]
    k = idx[np.argmin(f[idx])]
    tail = t >= t[-1] - window + 1e-12
    seg = f[tail]
    settling = float(seg.mean()) if np.ptp(seg) < max_pp else None
    return float(f[k]), float(t[k]), settling


def classify_response(t, f, event_time: float, settling: float, eps: float = CLASSIFY_EPS):
    """Label the post-event trace first_order / second_order / indeterminate.

    Works in the direction of the excursion, so over-frequency events are
    mirrored. Returns ``(label, overshoot)`` where overshoot is the distance
    from settling to the extreme beyond it (zero when it never passes).
    """
    t = np.asarray(t, dtype=float)
    f = np.asarray(f, dtype=float)
    post = f[t >= event_time - 1e-12]
    pre = f[t < event_time - 1e-12]
    start = pre[-1] if pre.size else post[0]
    # x decreases towards settling for a normal under-frequency event
    sign = 1.0 if settling <= start else -1.0
    x = sign * (post - settling)
    overshoot = max(0.0, float(-x.min()))
    monotone = bool(np.all(x <= np.minimum.accumulate(x) + eps))
    if overshoot <= eps and monotone:
        return FIRST_ORDER, overshoot
    if overshoot > eps:
        k = int(np.argmin(x))
        if np.any(x[k:] >= -eps):
            return SECOND_ORDER, overshoot
    return INDETERMINATE, overshoot


def delta_f_prior(rocof_value: float, t_response: float) -> float:
    """Deviation accumulated before pre-converter power responds."""
    if rocof_value < 0 or t_response < 0:
        raise ValueError("inputs must be non-negative")
    return rocof_value * t_response


@dataclass
class MetricsReport:
    rocof_max_abs: float
    rocof_time: float
    nadir: float
    nadir_time: float
    settling_f: float | None
    aggregate_H: float
    order_class: str
    overshoot: float
    label: str = ""
    device_rocof: dict = field(default_factory=dict)

    FIELDS = ("label", "aggregate_H", "rocof_max_abs", "rocof_time", "nadir", "nadir_time",
              "settling_f", "overshoot", "order_class")

    def to_text(self) -> str:
        lines = []
        for k in self.FIELDS:
            lines.append(f"{k}={_fmt(getattr(self, k))}")
        for name, v in self.device_rocof.items():
            lines.append(f"rocof[{name}]={_fmt(v)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.FIELDS)

    def csv_row(self) -> str:
        return ",".join(_fmt(getattr(self, k)) for k in self.FIELDS)

    def as_dict(self) -> dict:
        return asdict(self)


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def parse_metrics_text(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def evaluate(series, scenario, window: float | None = None, label: str = "") -> MetricsReport:
    """Full metric suite for one simulated run on its average frequency."""
    window = window or scenario.sim.rocof_window
    dt = series.dt
    event_time = min((e.time for e in scenario.events), default=float(series.t[0]))
    value, when = rocof(series.avg_f, dt, window)
    nadir, nadir_t, settling = nadir_and_settling(series.t, series.avg_f, event_time)
    if settling is None:
        order, over = INDETERMINATE, float("nan")
    else:
        order, over = classify_response(series.t, series.avg_f, event_time, settling)
    H = aggregate_inertia([(d.inertia, d.rating) for d in scenario.devices])
    per_dev = {name: rocof(series.f[:, k], dt, window)[0] for k, name in enumerate(series.names)}
    return MetricsReport(value, float(series.t[0]) + when, nadir, nadir_t, settling, H, order, over,
                         label or scenario.name, per_dev)


def portrait_linearity(p_m, f) -> float:
    """Largest orthogonal distance of the (p_m, f) path from its total least
    squares line, as a fraction of the p_m span.

    Frequency is first scaled to the p_m span so both axes weigh equally.
    Returns 0 for a path that does not move.
    """
    p_m = np.asarray(p_m, dtype=float)
    f = np.asarray(f, dtype=float)
    span_p, span_f = np.ptp(p_m), np.ptp(f)
    if span_p == 0:
        return 0.0
    xy = np.column_stack([p_m / span_p, f / span_f if span_f else f])
    xy -= xy.mean(axis=0)
    _, _, vt = np.linalg.svd(xy, full_matrices=False)
    normal = vt[-1]
    return float(np.max(np.abs(xy @ normal)))


def portrait_winding(p_m, f, center=None) -> float:
    """Net angle (rad) swept by the normalized (p_m, f) path around ``center``
    (default: the final point). Converging spirals sweep more than 2 pi;
    a straight approach sweeps nothing."""
    p_m = np.asarray(p_m, dtype=float)
    f = np.asarray(f, dtype=float)
    cx, cy = (p_m[-1], f[-1]) if center is None else center
    sp, sf = np.ptp(p_m) or 1.0, np.ptp(f) or 1.0
    x, y = (p_m - cx) / sp, (f - cy) / sf
    r = np.hypot(x, y)
    keep = r > 1e-3 * r.max() if r.max() > 0 else r > 0
    ang = np.unwrap(np.arctan2(y[keep], x[keep]))
    return float(abs(ang[-1] - ang[0])) if ang.size > 1 else 0.0
