"""Lossless algebraic network under fixed voltage magnitudes.

Active power follows the sine law ``p_ij = b_ij V_i V_j sin(theta_i - theta_j)``.
Device bus angles are boundary conditions; every other bus angle is found by
Newton iteration on the nodal balance of constant-power loads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50

BUS_KINDS = ("device", "load", "passthrough")


class NetworkError(Exception):
    """Base class for network-layer failures."""


class StructuralError(NetworkError):
    """Bad topology: invalid endpoints or a disconnected graph."""


class ConvergenceError(NetworkError):
    def __init__(self, message: str, mismatch: float, iterations: int):
        super().__init__(message)
        self.mismatch = mismatch
        self.iterations = iterations


class InfeasibleError(NetworkError):
    """Requested transfer exceeds what the sine law can deliver."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str = "load"
    voltage_mag: float = 1.0
    p_load: float = 0.0

    def __post_init__(self):
        if self.kind not in BUS_KINDS:
            raise ValueError(f"bus {self.id}: unknown kind {self.kind!r}")
        if not self.voltage_mag > 0:
            raise ValueError(f"bus {self.id}: voltage_mag must be positive")
        if self.kind == "passthrough" and self.p_load != 0.0:
            raise ValueError(f"bus {self.id}: passthrough bus cannot carry load")


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    susceptance: float
    in_service: bool = True

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: self loop")
        if not self.susceptance > 0:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: susceptance must be positive")


@dataclass(frozen=True)
class NetworkSolution:
    angles: np.ndarray
    device_p_e: np.ndarray
    max_mismatch: float
    iterations: int = 0


def _components(n_bus: int, edges: Sequence[tuple[int, int]]) -> list[list[int]]:
    parent = list(range(n_bus))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra
    groups: dict[int, list[int]] = {}
    for i in range(n_bus):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: (-len(g), g[0]))


def build_susceptance(branches: Sequence[Branch], n_bus: int) -> np.ndarray:
    """Nodal susceptance (Laplacian) matrix over positional bus indices.

    ``branches`` must already use indices ``0..n_bus-1``. Parallel branches
    add. Raises :class:`StructuralError` if the in-service graph does not span
    every bus.
    """
    B = np.zeros((n_bus, n_bus))
    edges = []
    for br in branches:
        i, j = br.from_bus, br.to_bus
        if not (0 <= i < n_bus and 0 <= j < n_bus):
            raise StructuralError(f"branch {i}-{j} references a bus outside 0..{n_bus - 1}")
        if not br.in_service:
            continue
        B[i, j] -= br.susceptance
        B[j, i] -= br.susceptance
        edges.append((i, j))
    comps = _components(n_bus, edges)
    if len(comps) > 1:
        isolated = comps[1:]
        raise StructuralError(f"network is disconnected; isolated bus groups (by index): {isolated}")
    np.fill_diagonal(B, -B.sum(axis=1))
    return B


@dataclass(frozen=True, eq=False)
class Network:
    """Buses and branches with cached index maps and matrices.

    Bus ids are arbitrary integers; arrays are ordered as ``buses``.
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    B: np.ndarray = field(init=False, repr=False)
    V: np.ndarray = field(init=False, repr=False)
    index: dict = field(init=False, repr=False)
    device_idx: np.ndarray = field(init=False, repr=False)
    free_idx: np.ndarray = field(init=False, repr=False)
    adjacency: tuple = field(init=False, repr=False)
    free_pos: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        index = {b.id: k for k, b in enumerate(self.buses)}
        if len(index) != len(self.buses):
            raise StructuralError("duplicate bus ids")
        positional = []
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in index:
                    raise StructuralError(f"branch {br.from_bus}-{br.to_bus}: bus {end} does not exist")
            positional.append(Branch(index[br.from_bus], index[br.to_bus], br.susceptance, br.in_service))
        B = build_susceptance(positional, len(self.buses))
        dev = np.array([k for k, b in enumerate(self.buses) if b.kind == "device"], dtype=np.int64)
        free = np.array([k for k, b in enumerate(self.buses) if b.kind != "device"], dtype=np.int64)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "V", np.array([b.voltage_mag for b in self.buses]))
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "device_idx", dev)
        object.__setattr__(self, "free_idx", free)
        object.__setattr__(self, "adjacency", _adjacency(B, self.V))
        pos = -np.ones(len(self.buses), dtype=np.int64)
        pos[free] = np.arange(free.size)
        object.__setattr__(self, "free_pos", pos)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def base_loads(self) -> np.ndarray:
        return np.array([b.p_load for b in self.buses])


def _adjacency(B, V):
    # CSR rows of b_ij * V_i * V_j, parallel branches already merged
    W = -B * np.outer(V, V)
    np.fill_diagonal(W, 0.0)
    indptr = np.zeros(len(V) + 1, dtype=np.int64)
    nbr, wts = [], []
    for i in range(len(V)):
        js = np.nonzero(W[i])[0]
        nbr.extend(js)
        wts.extend(W[i, js])
        indptr[i + 1] = len(nbr)
    return indptr, np.array(nbr, dtype=np.int64), np.array(wts, dtype=float)


@njit(cache=True)
def _csr_injections(indptr, nbr, wts, theta, rows):
    out = np.empty(rows.size)
    for a in range(rows.size):
        i = rows[a]
        s = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            s += wts[p] * np.sin(theta[i] - theta[nbr[p]])
        out[a] = s
    return out


@njit(cache=True)
def _newton_kernel(indptr, nbr, wts, theta, free, pos, loads, tol, max_iter):
    """Newton on the free-bus balance; ``theta`` is updated in place.

    ``pos[i]`` is bus i's row in the reduced system or -1 for device buses.
    Returns (iterations, max mismatch, status) with status 0 converged,
    1 iteration limit or non-finite, 2 singular Jacobian.
    """
    nf = free.size
    J = np.empty((nf, nf))
    it = 0
    while True:
        mis = _csr_injections(indptr, nbr, wts, theta, free)
        worst = 0.0
        for a in range(nf):
            mis[a] += loads[free[a]]
            v = abs(mis[a])
            if not v <= worst:
                worst = v
        if worst <= tol:
            return it, worst, 0
        if it >= max_iter or not np.isfinite(worst):
            return it, worst, 1
        J[:, :] = 0.0
        for a in range(nf):
            i = free[a]
            for p in range(indptr[i], indptr[i + 1]):
                j = nbr[p]
                c = wts[p] * np.cos(theta[i] - theta[j])
                J[a, a] += c
                if pos[j] >= 0:
                    J[a, pos[j]] -= c
        if abs(np.linalg.det(J)) < 1e-300:
            return it, worst, 2
        step = np.linalg.solve(J, mis)
        for a in range(nf):
            theta[free[a]] -= step[a]
        it += 1


def injections(B: np.ndarray, V: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Net active power leaving each bus into the network."""
    diff = theta[:, None] - theta[None, :]
    K = -B * np.outer(V, V)
    return (K * np.sin(diff)).sum(axis=1)


def _jacobian(B, V, theta):
    diff = theta[:, None] - theta[None, :]
    C = -B * np.outer(V, V) * np.cos(diff)
    np.fill_diagonal(C, 0.0)
    J = -C
    J[np.diag_indices_from(J)] = C.sum(axis=1)
    return J


def _check_capacity(B, V, free, loads):
    # a bus can absorb at most sum_j b_ij V_i V_j
    cap = -(B[free] * V[free, None] * V[None, :]).sum(axis=1) + B[free, free] * V[free] ** 2
    over = np.abs(loads[free]) > cap
    if np.any(over):
        k = free[np.argmax(over)]
        raise InfeasibleError(f"bus index {k}: load {loads[k]:.6g} pu exceeds sine-law transfer capacity")


def solve_network(
    network: Network,
    device_angles: np.ndarray,
    loads: np.ndarray,
    guess: np.ndarray | None = None,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> NetworkSolution:
    """Solve the free bus angles for imposed device angles.

    ``device_angles`` follow ``network.device_idx`` order; ``loads`` and
    ``guess`` are per bus. The reported ``device_p_e`` is the device output:
    network injection plus any load on the device's own bus.
    """
    dev, free = network.device_idx, network.free_idx
    if dev.size == 0:
        raise StructuralError("at least one device bus is required as angle reference")
    device_angles = np.asarray(device_angles, dtype=float)
    if not np.all(np.isfinite(device_angles)):
        raise ValueError("device angles must be finite")
    loads = np.asarray(loads, dtype=float)

    theta = np.empty(network.n_bus)
    if guess is None:
        theta[free] = _dc_guess(network, device_angles, loads)
    else:
        theta[:] = guess
    return _solve(network, device_angles, loads, theta, tol, max_iter)


def _solve(network, device_angles, loads, theta, tol, max_iter):
    # unchecked path used once per integration stage; overwrites theta
    dev, free = network.device_idx, network.free_idx
    theta[dev] = device_angles
    it, worst = 0, 0.0
    if free.size:
        indptr, nbr, wts = network.adjacency
        it, worst, status = _newton_kernel(indptr, nbr, wts, theta, free, network.free_pos, loads, tol, max_iter)
        if status:
            _check_capacity(network.B, network.V, free, loads)
            if status == 2:
                raise InfeasibleError("singular network Jacobian: transfer at the sine-law limit")
            raise ConvergenceError(
                f"network Newton did not converge in {it} iterations (mismatch {worst:.3e} pu)", worst, it
            )
    p_e = _csr_injections(*network.adjacency, theta, dev) + loads[dev]
    return NetworkSolution(theta, p_e, worst, it)

def _dc_guess(network: Network, device_angles, loads):
    B, dev, free = network.B, network.device_idx, network.free_idx
    Bff = B[np.ix_(free, free)]
    Bfd = B[np.ix_(free, dev)]
    return np.linalg.solve(Bff, -loads[free] - Bfd @ device_angles)


def power_flow(
    network: Network,
    device_output: np.ndarray,
    loads: np.ndarray,
    ref: int = 0,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> tuple[np.ndarray, float]:
    """Dispatch power flow: all angles from device outputs and loads.

    The device at position ``ref`` (in ``network.device_idx`` order) is the
    angle reference and absorbs any imbalance. Returns ``(angles, slack)``
    where ``slack`` is the output the reference device must actually supply.
    """
    B, V = network.B, network.V
    dev = network.device_idx
    loads = np.asarray(loads, dtype=float)
    spec = -loads.copy()
    spec[dev] += np.asarray(device_output, dtype=float)
    ref_bus = dev[ref]
    unknown = np.array([k for k in range(network.n_bus) if k != ref_bus], dtype=int)

    theta = np.zeros(network.n_bus)
    if unknown.size:
        Buu = B[np.ix_(unknown, unknown)]
        theta[unknown] = np.linalg.solve(Buu, spec[unknown])
        for it in range(max_iter + 1):
            mis = injections(B, V, theta)[unknown] - spec[unknown]
            worst = float(np.max(np.abs(mis)))
            if worst <= tol:
                break
            if it == max_iter or not np.isfinite(worst):
                raise ConvergenceError(f"dispatch power flow did not converge (mismatch {worst:.3e} pu)", worst, it)
            J = _jacobian(B, V, theta)[np.ix_(unknown, unknown)]
            try:
                theta[unknown] -= np.linalg.solve(J, mis)
            except np.linalg.LinAlgError:
                raise InfeasibleError("singular Jacobian in dispatch power flow")
        if np.any(np.abs(theta[:, None] - theta[None, :])[B < 0] >= np.pi / 2):
            raise InfeasibleError("dispatch power flow lands beyond the sine-law stability limit")
    slack = float(injections(B, V, theta)[ref_bus] + loads[ref_bus])
    return theta, slack
