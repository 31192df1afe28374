"""
mgdfl Network - Radial feeder topology and LinDistFlow.

The lossless LinDistFlow model relates branch flows to downstream net load
and bus voltages to the flows along the path from the slack bus:

    P_ij = sum of net active load downstream of j
    v_j  = v_i - (r_ij * P_ij + x_ij * Q_ij) / v_base

Voltages are eliminated by substitution, so every bus voltage is an affine
function of the per-bus net loads through path-impedance matrices.
Loads carry reactive power at their bus power factor; DERs run at unity.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from mgdfl import feeders
from mgdfl.errors import ConfigError, DimensionError
from mgdfl.objects import LoadTrajectory

log = logging.getLogger(__name__)

DEFAULT_POWER_FACTOR = 0.95
DEVICES = ("ess", "pv", "wt")


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float  # p.u.
    x: float  # p.u.


@dataclass
class FeederTopology:
    """Validated radial feeder. Per-bus arrays follow the order of `bus_labels`."""
    bus_labels: tuple[int, ...]
    branches: list[Branch]
    slack_bus: int
    load_participation: np.ndarray
    power_factor: np.ndarray
    der_placement: dict[str, int] = field(default_factory=dict)
    base_voltage: float = 1.0
    base_kva: float = feeders.FEEDER_BASE_KVA
    # parent branch index of each bus (slack: -1)
    parent_branch: np.ndarray = field(default=None, repr=False)

    @property
    def buses(self) -> int:
        return len(self.bus_labels)

    def index(self, bus: int) -> int:
        try:
            return self.bus_labels.index(bus)
        except ValueError:
            raise ConfigError(f"Unknown bus: {bus!r}")

    def path_matrix(self) -> np.ndarray:
        """M[i, b] = 1 when branch b lies on the path from the slack bus to bus i."""
        m = np.zeros((self.buses, len(self.branches)))
        for i in range(self.buses):
            node = i
            while self.parent_branch[node] >= 0:
                b = self.parent_branch[node]
                m[i, b] = 1.0
                node = self.index(self.branches[b].from_bus)
        return m


# ----------------------------------------------------------------------
# Loading and validation
# ----------------------------------------------------------------------

def _read_branch_rows(source) -> list[tuple[int, int, float, float]]:
    if isinstance(source, (str, Path)):
        source = pd.read_csv(source)
    if isinstance(source, pd.DataFrame):
        missing = {"from", "to", "r_pu", "x_pu"} - set(source.columns)
        if missing:
            raise ConfigError(f"branch table missing columns: {sorted(missing)}")
        return [(int(r["from"]), int(r["to"]), float(r["r_pu"]), float(r["x_pu"]))
                for _, r in source.iterrows()]
    rows = []
    for row in source:
        if len(row) != 4:
            raise ConfigError(f"branch row must be (from, to, r, x), got {row!r}")
        f, t, r, x = row
        rows.append((int(f), int(t), float(r), float(x)))
    return rows


def _read_bus_loads(source) -> tuple[dict[int, float], dict[int, float]]:
    if isinstance(source, (str, Path)):
        source = pd.read_csv(source)
    if isinstance(source, pd.DataFrame):
        if not {"bus", "p_kw"} <= set(source.columns):
            raise ConfigError("bus load table needs columns bus,p_kw[,q_kvar]")
        p = {int(r["bus"]): float(r["p_kw"]) for _, r in source.iterrows()}
        q = ({int(r["bus"]): float(r["q_kvar"]) for _, r in source.iterrows()}
             if "q_kvar" in source.columns else {})
        return p, q
    return {int(b): float(v) for b, v in dict(source).items()}, {}


def _find(parent: dict[int, int], a: int) -> int:
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


def load_topology(source, bus_loads=None, slack_bus: int | None = None,
                  placement: dict[str, int] | None = None,
                  power_factor: float = DEFAULT_POWER_FACTOR,
                  base_kva: float = feeders.FEEDER_BASE_KVA) -> FeederTopology:
    """Build a FeederTopology from a branch table.

    `source` is a CSV path, a DataFrame with columns from,to,r_pu,x_pu, or
    an iterable of (from, to, r_pu, x_pu) rows. `bus_loads` (CSV path,
    DataFrame bus,p_kw[,q_kvar] or {bus: p_kw}) sets the load participation;
    without it load is spread uniformly over the non-slack buses. A q_kvar
    column overrides the default power factor per bus.

    Raises:
        ConfigError: duplicate branch, cycle detected, disconnected bus.
    """
    rows = _read_branch_rows(source)
    if not rows:
        raise ConfigError("branch table is empty")

    seen: set[frozenset[int]] = set()
    labels: set[int] = set()
    for f, t, r, x in rows:
        if f == t:
            raise ConfigError(f"self-loop at bus {f}")
        pair = frozenset((f, t))
        if pair in seen:
            raise ConfigError(f"duplicate branch ({f}, {t})")
        seen.add(pair)
        labels.update((f, t))
        if r < 0 or x < 0:
            raise ConfigError(f"negative impedance on branch ({f}, {t})")

    p_loads, q_loads = ({}, {}) if bus_loads is None else _read_bus_loads(bus_loads)
    labels.update(p_loads)

    parent = {b: b for b in labels}
    for f, t, _, _ in rows:
        ra, rb = _find(parent, f), _find(parent, t)
        if ra == rb:
            raise ConfigError(f"cycle detected at branch ({f}, {t})")
        parent[ra] = rb

    bus_labels = tuple(sorted(labels))
    slack = bus_labels[0] if slack_bus is None else int(slack_bus)
    if slack not in labels:
        raise ConfigError(f"slack bus {slack} not in feeder")

    adjacency: dict[int, list[tuple[int, int, float, float]]] = {b: [] for b in bus_labels}
    for f, t, r, x in rows:
        adjacency[f].append((t, f, r, x))
        adjacency[t].append((f, t, r, x))

    # Orient branches away from the slack bus.
    branches: list[Branch] = []
    parent_branch = {slack: -1}
    queue = deque([slack])
    while queue:
        bus = queue.popleft()
        for other, _, r, x in adjacency[bus]:
            if other in parent_branch:
                continue
            parent_branch[other] = len(branches)
            branches.append(Branch(bus, other, r, x))
            queue.append(other)
    unreachable = [b for b in bus_labels if b not in parent_branch]
    if unreachable:
        raise ConfigError(f"disconnected bus {unreachable[0]}")

    n = len(bus_labels)
    participation = np.zeros(n)
    if p_loads:
        for bus, p in p_loads.items():
            if p < 0:
                raise ConfigError(f"negative load at bus {bus}")
            participation[bus_labels.index(bus)] = p
    else:
        participation[:] = 1.0
        participation[bus_labels.index(slack)] = 0.0
    total = participation.sum()
    if total <= 0:
        raise ConfigError("bus loads sum to zero")
    participation /= total

    pf = np.full(n, float(power_factor))
    for bus, q in q_loads.items():
        p = p_loads.get(bus, 0.0)
        if p > 0:
            pf[bus_labels.index(bus)] = p / np.hypot(p, q)
    if np.any(pf <= 0) or np.any(pf > 1):
        raise ConfigError("power factors must be in (0, 1]")

    placement = dict(placement or {})
    for device, bus in placement.items():
        if device not in DEVICES:
            raise ConfigError(f"Unknown device in placement: {device!r}")
        if bus not in labels:
            raise ConfigError(f"{device} placed at unknown bus {bus}")

    topo = FeederTopology(
        bus_labels=bus_labels,
        branches=branches,
        slack_bus=slack,
        load_participation=participation,
        power_factor=pf,
        der_placement=placement,
        base_kva=base_kva,
        parent_branch=np.array([parent_branch[b] for b in bus_labels]),
    )
    log.debug("Loaded feeder: %d buses, %d branches, slack %d", n, len(branches), slack)
    return topo


def ieee_feeder(name: str, placement: dict[str, int] | None = None) -> FeederTopology:
    """One of the built-in feeders ('ieee33', 'ieee69') with its default placement."""
    try:
        rows = feeders.branch_table(name)
    except KeyError as exc:
        raise ConfigError(str(exc))
    return load_topology(rows, bus_loads=feeders.bus_loads(name), slack_bus=1,
                         placement=placement or feeders.DEFAULT_PLACEMENT[name])


# ----------------------------------------------------------------------
# Disaggregation and power flow
# ----------------------------------------------------------------------

def disaggregate(load: LoadTrajectory | np.ndarray,
                 topology: FeederTopology) -> tuple[np.ndarray, np.ndarray]:
    """Per-bus active and reactive load (buses x steps) from an aggregate trajectory."""
    values = load.values if isinstance(load, LoadTrajectory) else np.asarray(load, dtype=float)
    p = np.outer(topology.load_participation, values)
    q = p * np.tan(np.arccos(topology.power_factor))[:, None]
    return p, q


@dataclass
class NetworkState:
    """Branch flows (kW, kvar) and bus voltages (p.u.), each per step."""
    p_flow: np.ndarray
    q_flow: np.ndarray
    v: np.ndarray

    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.v - 1.0), initial=0.0))


def power_flow(topology: FeederTopology, p_bus: np.ndarray, q_bus: np.ndarray) -> NetworkState:
    """Evaluate LinDistFlow for per-bus net loads (buses x steps, consumption positive)."""
    p_bus = np.atleast_2d(np.asarray(p_bus, dtype=float).T).T
    q_bus = np.atleast_2d(np.asarray(q_bus, dtype=float).T).T
    if p_bus.shape[0] != topology.buses or q_bus.shape != p_bus.shape:
        raise DimensionError(f"expected ({topology.buses}, T) bus arrays, got {p_bus.shape}")
    m = topology.path_matrix()
    p_flow = m.T @ p_bus
    q_flow = m.T @ q_bus
    r = np.array([b.r for b in topology.branches])
    x = np.array([b.x for b in topology.branches])
    drop = m @ (r[:, None] * p_flow + x[:, None] * q_flow)
    v = topology.base_voltage - drop / (topology.base_kva * topology.base_voltage)
    return NetworkState(p_flow=p_flow, q_flow=q_flow, v=v)


# ----------------------------------------------------------------------
# Constraint blocks
# ----------------------------------------------------------------------

@dataclass
class LinDistFlow:
    """Voltage sensitivities of a feeder with aggregated load and DERs.

    For bus i the voltage drop (1 - v_i, p.u.) is

        load_coef[i] * (load - dlc) - sum_d device_coef[d][i] * injection_d

    with load and injections in kW. Rows exist for every non-slack bus.
    """
    topology: FeederTopology
    r_path: np.ndarray
    x_path: np.ndarray
    load_coef: np.ndarray
    device_coef: dict[str, np.ndarray]

    @property
    def rows(self) -> np.ndarray:
        """Internal indices of the buses that carry voltage constraints."""
        slack = self.topology.index(self.topology.slack_bus)
        return np.array([i for i in range(self.topology.buses) if i != slack])

    def drop(self, net_load: np.ndarray, injections: dict[str, np.ndarray]) -> np.ndarray:
        """Voltage drop (p.u.) per bus and step (buses x steps)."""
        net_load = np.atleast_1d(np.asarray(net_load, dtype=float))
        out = np.outer(self.load_coef, net_load)
        for device, inj in injections.items():
            if device in self.device_coef:
                out -= np.outer(self.device_coef[device], np.atleast_1d(inj))
        return out

    def voltages(self, net_load: np.ndarray, injections: dict[str, np.ndarray]) -> np.ndarray:
        return self.topology.base_voltage - self.drop(net_load, injections)

    def bus_state(self, net_load: np.ndarray, injections: dict[str, np.ndarray]) -> NetworkState:
        """Full flow/voltage state for aggregated quantities."""
        p, q = disaggregate(np.asarray(net_load, dtype=float), self.topology)
        for device, inj in injections.items():
            bus = self.topology.der_placement.get(device)
            if bus is not None:
                p[self.topology.index(bus)] -= np.asarray(inj, dtype=float)
        return power_flow(self.topology, p, q)


def lindistflow_constraints(topology: FeederTopology) -> LinDistFlow:
    """Path-impedance sensitivities used to build voltage limit rows."""
    m = topology.path_matrix()
    r = np.array([b.r for b in topology.branches])
    x = np.array([b.x for b in topology.branches])
    r_path = (m * r) @ m.T
    x_path = (m * x) @ m.T
    scale = topology.base_kva * topology.base_voltage
    tan_phi = np.tan(np.arccos(topology.power_factor))
    load_coef = (r_path + x_path * tan_phi[None, :]) @ topology.load_participation / scale
    device_coef = {
        device: r_path[:, topology.index(bus)] / scale
        for device, bus in topology.der_placement.items()
    }
    return LinDistFlow(topology=topology, r_path=r_path, x_path=x_path,
                       load_coef=load_coef, device_coef=device_coef)
