"""Fixed-step RK4 integration of the device fleet with the network re-solved
at every stage, and exact-time load-step events."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import network as netmod
from .metrics import average_frequency
from .devices import (
    GfmParams,
    GfmState,
    SgParams,
    SgState,
    gfm_derivatives,
    gfm_frequency,
    sg_derivatives,
)

log = logging.getLogger(__name__)

DIVERGENCE_HZ = 5.0
GRID_TOL = 1e-12


class SimulationError(Exception):
    """Network failure during a run, tagged with the simulation time."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message if time is None else f"t={time:.6f} s: {message}")
        self.time = time


class InstabilityError(SimulationError):
    pass


class InitializationError(SimulationError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.001
    duration: float = 20.0
    record_stride: int = 1
    newton_tol: float = netmod.NEWTON_TOL
    newton_max_iter: int = netmod.NEWTON_MAX_ITER
    rocof_window: float = 0.1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if not self.rocof_window > 0:
            raise ValueError("rocof_window must be positive")

    @property
    def n_steps(self) -> int:
        return grid_index(self.duration, self.dt)


def grid_index(t: float, dt: float) -> int:
    k = round(t / dt)
    if abs(k * dt - t) > GRID_TOL * max(1.0, abs(t)):
        raise ValueError(f"time {t!r} is not on the {dt!r} s grid")
    return k


@dataclass(frozen=True)
class Event:
    time: float
    bus: int
    delta_p: float
    kind: str = "load_step"

    def __post_init__(self):
        if self.kind != "load_step":
            raise ValueError(f"unsupported event kind {self.kind!r}")


def apply_event(loads: np.ndarray, event: Event, network: netmod.Network) -> np.ndarray:
    """Return a copy of the per-bus load vector with the step applied."""
    if event.bus not in network.index:
        raise ValueError(f"event targets unknown bus {event.bus}")
    out = np.array(loads, dtype=float)
    out[network.index[event.bus]] += event.delta_p
    return out


@dataclass
class TimeSeries:
    t: np.ndarray
    names: list
    kinds: list
    ratings: np.ndarray
    f: np.ndarray
    p_m: np.ndarray
    p_e: np.ndarray
    bus_ids: list
    angles: np.ndarray
    avg_f: np.ndarray
    load_total: np.ndarray = field(repr=False)
    p_e_system: np.ndarray = field(repr=False)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    def device(self, name: str) -> int:
        return self.names.index(name)

    def columns(self) -> tuple[list[str], np.ndarray]:
        header = ["t"]
        cols = [self.t]
        for k, name in enumerate(self.names):
            header += [f"dev:{name}:f", f"dev:{name}:pm", f"dev:{name}:pe"]
            cols += [self.f[:, k], self.p_m[:, k], self.p_e[:, k]]
        for k, bid in enumerate(self.bus_ids):
            header.append(f"bus:{bid}:angle")
            cols.append(self.angles[:, k])
        header.append("avg_f")
        cols.append(self.avg_f)
        return header, np.column_stack(cols)

    def to_csv(self, path) -> None:
        header, data = self.columns()
        write_csv(path, header, data)


def write_csv(path, header: Sequence[str], data: np.ndarray) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            fh.write(",".join(f"{v:.9g}" for v in row) + "\n")


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def _bank(params_list, cls):
    # stack per-device dataclasses into one with array fields
    if not params_list:
        return None
    fields = cls.__dataclass_fields__
    return cls(**{k: np.array([getattr(p, k) for p in params_list], dtype=float) for k in fields})


class System:
    """A scenario compiled into flat arrays for integration.

    State vector layout: ``[delta (all devices) | sg omega | sg p_m | gfm p_m]``.
    Device angles are in scenario order.
    """

    def __init__(self, scenario):
        self.scenario = scenario
        net = scenario.network
        self.network = net
        self.base_mva = float(scenario.base_mva)
        self.f0 = float(scenario.f0)
        devs = list(scenario.devices)
        self.names = [d.name for d in devs]
        self.kinds = [d.kind for d in devs]
        self.ratings = np.array([d.params.rating for d in devs], dtype=float)
        self.to_sys = self.ratings / self.base_mva
        n = len(devs)
        self.n_dev = n

        pos_in_devidx = {int(b): k for k, b in enumerate(net.device_idx)}
        dev_bus = [net.index[d.bus] for d in devs]
        if sorted(dev_bus) != sorted(pos_in_devidx):
            raise ValueError("each device bus must host exactly one device")
        # scenario order -> network device order
        self.perm = np.array([pos_in_devidx[b] for b in dev_bus], dtype=int)
        self.inv_perm = np.argsort(self.perm)
        self.ref = 0

        self.sg_pos = np.array([k for k, d in enumerate(devs) if d.kind == "SG"], dtype=int)
        self.gfm_pos = np.array([k for k, d in enumerate(devs) if d.kind == "GFM"], dtype=int)
        n_sg, n_gfm = len(self.sg_pos), len(self.gfm_pos)
        self.sl_omega = slice(n, n + n_sg)
        self.sl_sg_pm = slice(n + n_sg, n + 2 * n_sg)
        self.sl_gfm_pm = slice(n + 2 * n_sg, n + 2 * n_sg + n_gfm)
        self.n_state = n + 2 * n_sg + n_gfm
        self.device_params = [replace(d.params, f0=self.f0) for d in devs]
        self._tol = scenario.sim.newton_tol
        self._max_iter = scenario.sim.newton_max_iter
        self._rebank()

    def _rebank(self):
        self.sgp = _bank([self.device_params[k] for k in self.sg_pos], SgParams)
        self.gfmp = _bank([self.device_params[k] for k in self.gfm_pos], GfmParams)

    # -- initialization -----------------------------------------------------
    def initialize(self, loads=None):
        """Equilibrium state at the scheduled dispatch.

        The first device (angle reference) absorbs any dispatch imbalance; its
        set point is updated. Returns ``(y0, angles)``.
        """
        net = self.network
        loads = net.base_loads() if loads is None else np.asarray(loads, dtype=float)
        dispatch_sys = np.array([d.dispatch for d in self.scenario.devices]) * self.to_sys
        out = np.zeros(self.n_dev)
        out[self.perm] = dispatch_sys
        try:
            theta, slack = netmod.power_flow(
                net, out, loads, ref=int(self.perm[self.ref]),
                tol=self.scenario.sim.newton_tol, max_iter=self.scenario.sim.newton_max_iter,
            )
        except netmod.NetworkError as exc:
            raise InitializationError(f"dispatch initialization failed: {exc}") from exc
        imbalance = slack - dispatch_sys[self.ref]
        if abs(imbalance) > self.scenario.sim.newton_tol:
            log.warning("dispatch unbalanced by %.6g pu; reference device %s absorbs it",
                        imbalance, self.names[self.ref])
        p_dev = dispatch_sys.copy()
        p_dev[self.ref] = slack
        p_dev = p_dev / self.to_sys
        self.device_params = [replace(p, p_set=float(v)) for p, v in zip(self.device_params, p_dev)]
        self._rebank()

        y = np.zeros(self.n_state)
        y[: self.n_dev] = theta[net.device_idx][self.perm]
        if len(self.sg_pos):
            y[self.sl_omega] = self.sgp.omega_s
            y[self.sl_sg_pm] = p_dev[self.sg_pos]
        if len(self.gfm_pos):
            y[self.sl_gfm_pm] = p_dev[self.gfm_pos]
        return y, theta

    # -- dynamics ------------------------------------------------------------
    def solve(self, y, loads, guess=None):
        if guess is None:
            sim = self.scenario.sim
            return netmod.solve_network(
                self.network, y[: self.n_dev][self.inv_perm], loads,
                tol=sim.newton_tol, max_iter=sim.newton_max_iter,
            )
        return netmod._solve(self.network, y[: self.n_dev][self.inv_perm], loads, guess.copy(),
                             self._tol, self._max_iter)

    def p_e_device(self, sol) -> np.ndarray:
        return sol.device_p_e[self.perm] / self.to_sys

    def rates(self, y, loads, guess=None):
        sol = self.solve(y, loads, guess)
        pe = self.p_e_device(sol)
        dy = np.empty_like(y)
        n = self.n_dev
        if len(self.sg_pos):
            st = SgState(y[:n][self.sg_pos], y[self.sl_omega], y[self.sl_sg_pm])
            d = sg_derivatives(st, pe[self.sg_pos], self.sgp)
            dy[self.sg_pos] = d.delta
            dy[self.sl_omega] = d.omega
            dy[self.sl_sg_pm] = d.p_m
        if len(self.gfm_pos):
            st = GfmState(y[:n][self.gfm_pos], y[self.sl_gfm_pm])
            d = gfm_derivatives(st, pe[self.gfm_pos], self.gfmp)
            dy[self.gfm_pos] = d.delta
            dy[self.sl_gfm_pm] = d.p_m
        return dy, sol

    def frequencies(self, y) -> np.ndarray:
        f = np.empty(self.n_dev)
        if len(self.sg_pos):
            f[self.sg_pos] = self.f0 * (y[self.sl_omega] / self.sgp.omega_s)
        if len(self.gfm_pos):
            st = GfmState(y[: self.n_dev][self.gfm_pos], y[self.sl_gfm_pm])
            f[self.gfm_pos] = gfm_frequency(st, self.gfmp)
        return f

    def pre_converter(self, y) -> np.ndarray:
        pm = np.empty(self.n_dev)
        if len(self.sg_pos):
            pm[self.sg_pos] = y[self.sl_sg_pm]
        if len(self.gfm_pos):
            pm[self.gfm_pos] = y[self.sl_gfm_pm]
        return pm


def step(system: System, y, loads, dt, guess=None, k1=None):
    """One classical RK4 step; each stage re-solves the network.

    ``k1`` may carry the already evaluated first stage ``(rates, solution)``.
    Returns ``(y_next, angles)`` where ``angles`` seed the next solve.
    """
    if k1 is None:
        k1 = system.rates(y, loads, guess)
    r1, s1 = k1
    r2, s2 = system.rates(y + 0.5 * dt * r1, loads, s1.angles)
    r3, s3 = system.rates(y + 0.5 * dt * r2, loads, s2.angles)
    r4, s4 = system.rates(y + dt * r3, loads, s3.angles)
    return y + (dt / 6.0) * (r1 + 2.0 * r2 + 2.0 * r3 + r4), s4.angles


def simulate(scenario, config: SimConfig | None = None, system: System | None = None) -> TimeSeries:
    """Run ``scenario`` from its dispatch equilibrium and record every stride."""
    cfg = config or scenario.sim
    if cfg is not scenario.sim:
        scenario = replace(scenario, sim=cfg)
    system = system or System(scenario)
    net = system.network
    dt = cfg.dt
    n_steps = cfg.n_steps

    events_at: dict[int, list] = {}
    for ev in scenario.events:
        if not 0 <= ev.time <= cfg.duration:
            raise ValueError(f"event at t={ev.time} outside [0, {cfg.duration}]")
        events_at.setdefault(grid_index(ev.time, dt), []).append(ev)

    loads = net.base_loads()
    y, theta = system.initialize(loads)
    guess = theta

    stride = cfg.record_stride
    n_rec = n_steps // stride + 1
    n_dev, n_bus = system.n_dev, net.n_bus
    t_rec = np.empty(n_rec)
    f_rec = np.empty((n_rec, n_dev))
    pm_rec = np.empty((n_rec, n_dev))
    pe_rec = np.empty((n_rec, n_dev))
    ang_rec = np.empty((n_rec, n_bus))
    load_rec = np.empty(n_rec)
    pesys_rec = np.empty(n_rec)
    ratings = system.ratings
    f0 = system.f0

    r = 0
    for k in range(n_steps + 1):
        t = k * dt
        for ev in events_at.get(k, ()):
            loads = apply_event(loads, ev, net)
        try:
            k1 = system.rates(y, loads, guess)
        except netmod.NetworkError as exc:
            raise SimulationError(str(exc), t) from exc
        sol = k1[1]
        if k % stride == 0:
            f = system.frequencies(y)
            if np.any(np.abs(f - f0) > DIVERGENCE_HZ) or not np.all(np.isfinite(y)):
                raise InstabilityError(f"frequency left f0 +/- {DIVERGENCE_HZ} Hz", t)
            t_rec[r] = t
            f_rec[r] = f
            pm_rec[r] = system.pre_converter(y)
            pe_rec[r] = system.p_e_device(sol)
            ang_rec[r] = sol.angles - y[system.ref]
            load_rec[r] = loads.sum()
            pesys_rec[r] = sol.device_p_e.sum()
            r += 1
        if k == n_steps:
            break
        try:
            y, guess = step(system, y, loads, dt, k1=k1)
        except netmod.NetworkError as exc:
            raise SimulationError(str(exc), t) from exc

    return TimeSeries(
        t=t_rec[:r],
        names=list(system.names),
        kinds=list(system.kinds),
        ratings=ratings.copy(),
        f=f_rec[:r],
        p_m=pm_rec[:r],
        p_e=pe_rec[:r],
        bus_ids=net.bus_ids,
        angles=ang_rec[:r],
        avg_f=average_frequency(f_rec[:r], ratings),
        load_total=load_rec[:r],
        p_e_system=pesys_rec[:r],
    )
