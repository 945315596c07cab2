"""Radial low-voltage network power flow and grid-impact metrics.

The solver is a backward/forward sweep on a balanced single-phase
equivalent with constant-power injections and the transformer LV busbar as
slack at 1.0 p.u. Injections are given as net consumption (import minus
export, kW), so a PV-exporting building has a negative injection.

Sign convention: ``transformer_flow`` is positive when the LV network draws
power from MV. Reports flip the sign where a figure expects the opposite.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from .timegrid import TimeGrid

log = logging.getLogger(__name__)

S_BASE_KVA = 100.0
V_MIN, V_MAX = 0.9, 1.1
DEFAULT_CURVE_POINTS = ((5.0, 2.0), (30.0, 1.5), (120.0, 1.3), (480.0, 1.1))


class NetworkError(ValueError):
    """Raised for an invalid network description; ``errors`` lists every problem."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class PowerFlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class Bus:
    id: str
    v_nominal: float = 400.0  # line-to-line, V


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: str
    to_bus: str
    r_ohm: float
    x_ohm: float
    ampacity: float
    length_m: float = 0.0


@dataclass(frozen=True)
class Transformer:
    s_rated: float  # kVA per unit
    n_parallel: int = 1
    lv_bus: str = "lv"
    virtual_rating: float | None = None

    @property
    def rating(self) -> float:
        """Combined nameplate rating of the parallel units."""
        return self.s_rated * self.n_parallel

    def effective_rating(self, use_virtual: bool = False) -> float:
        if use_virtual and self.virtual_rating:
            return self.virtual_rating
        return self.rating


@dataclass(frozen=True, eq=False)
class Network:
    """Radial LV network rooted at the transformer LV busbar."""

    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    transformer: Transformer
    injections: Mapping[str, str]  # building id -> bus id
    name: str = "network"
    _topo: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        errors = _validate(self.buses, self.lines, self.transformer, self.injections)
        if errors:
            raise NetworkError(errors)
        self._topo.update(_topology(self))

    @property
    def bus_ids(self) -> list[str]:
        return [b.id for b in self.buses]

    @property
    def line_ids(self) -> list[str]:
        return [l.id for l in self.lines]

    @property
    def slack(self) -> str:
        return self.transformer.lv_bus

    @property
    def n_injection_points(self) -> int:
        return len(set(self.injections.values()))

    def bus_index(self, bus_id: str) -> int:
        return self._topo["bus_pos"][bus_id]


def _validate(buses, lines, transformer, injections) -> list[str]:
    errors = []
    ids = [b.id for b in buses]
    seen = set()
    for b in ids:
        if b in seen:
            errors.append(f"duplicate bus id {b!r}")
        seen.add(b)
    for b in buses:
        if not b.v_nominal > 0:
            errors.append(f"bus {b.id!r}: nominal voltage must be positive")
    if transformer.lv_bus not in seen:
        errors.append(f"transformer LV bus {transformer.lv_bus!r} is not a bus")
    if not transformer.s_rated > 0 or transformer.n_parallel < 1:
        errors.append("transformer: s_rated must be positive and n_parallel >= 1")
    line_seen = set()
    for l in lines:
        if l.id in line_seen:
            errors.append(f"duplicate line id {l.id!r}")
        line_seen.add(l.id)
        for end in (l.from_bus, l.to_bus):
            if end not in seen:
                errors.append(f"line {l.id!r}: unknown bus {end!r}")
        if l.from_bus == l.to_bus:
            errors.append(f"line {l.id!r}: both ends on bus {l.from_bus!r}")
        if l.ampacity is None or not np.isfinite(l.ampacity) or l.ampacity <= 0:
            errors.append(f"line {l.id!r}: ampacity must be given and positive")
        if l.r_ohm is None or l.r_ohm < 0:
            errors.append(f"line {l.id!r}: R must be >= 0")
    for bid, bus in injections.items():
        if bus not in seen:
            errors.append(f"injection {bid!r}: unknown bus {bus!r}")
    if errors:
        return errors

    # cycles via union-find, then connectivity from the slack
    parent = {b: b for b in ids}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    tree_adj: dict[str, list[tuple[str, str]]] = {b: [] for b in ids}
    for l in lines:
        ra, rb = find(l.from_bus), find(l.to_bus)
        if ra == rb:
            path = _tree_path(tree_adj, l.from_bus, l.to_bus)
            errors.append(f"network is not radial: cycle through lines {', '.join(path + [l.id])}")
            continue
        parent[ra] = rb
        tree_adj[l.from_bus].append((l.to_bus, l.id))
        tree_adj[l.to_bus].append((l.from_bus, l.id))
    root = find(transformer.lv_bus)
    cut = [b for b in ids if find(b) != root]
    if cut:
        errors.append(f"buses not connected to {transformer.lv_bus!r}: {', '.join(cut)}")
    return errors


def _tree_path(adj, a: str, b: str) -> list[str]:
    """Line ids on the tree path between two buses (DFS)."""
    stack = [(a, [])]
    visited = {a}
    while stack:
        node, path = stack.pop()
        if node == b:
            return path
        for nxt, lid in adj[node]:
            if nxt not in visited:
                visited.add(nxt)
                stack.append((nxt, path + [lid]))
    return []


def _topology(net: Network) -> dict:
    """Orientation of every line away from the slack plus the path matrix.

    ``path[b, l]`` is 1 when line ``l`` lies on the path from the slack to bus
    ``b``. Branch currents are then ``I_bus @ path`` and voltage drops at the
    buses are ``(Z * J) @ path.T``.
    """
    bus_pos = {b.id: i for i, b in enumerate(net.buses)}
    adj: dict[str, list[tuple[str, int]]] = {b.id: [] for b in net.buses}
    for k, l in enumerate(net.lines):
        adj[l.from_bus].append((l.to_bus, k))
        adj[l.to_bus].append((l.from_bus, k))
    n_bus, n_line = len(net.buses), len(net.lines)
    path = np.zeros((n_bus, n_line))
    child = np.zeros(n_line, dtype=int)
    parent_of = np.full(n_line, -1)
    order = [net.slack]
    on_path: dict[str, list[int]] = {net.slack: []}
    i = 0
    while i < len(order):
        node = order[i]
        i += 1
        for nxt, k in adj[node]:
            if nxt in on_path:
                continue
            on_path[nxt] = on_path[node] + [k]
            child[k] = bus_pos[nxt]
            parent_of[k] = bus_pos[node]
            order.append(nxt)
    for b, ks in on_path.items():
        path[bus_pos[b], ks] = 1.0

    v_base = np.array([b.v_nominal for b in net.buses])
    z_base = (v_base[child] ** 2) / (S_BASE_KVA * 1e3)
    z = np.array([complex(l.r_ohm, l.x_ohm) for l in net.lines]) / np.where(z_base > 0, z_base, 1.0)
    i_base = S_BASE_KVA * 1e3 / (math.sqrt(3) * v_base[child])
    return dict(bus_pos=bus_pos, path=path, child=child, parent=parent_of, z_pu=z, i_base=i_base,
                slack_pos=bus_pos[net.slack])


@dataclass(frozen=True)
class OverloadCurve:
    """Permissible transformer loading (fraction of rating) versus duration (minutes)."""

    points: tuple[tuple[float, float], ...] = DEFAULT_CURVE_POINTS

    def __post_init__(self) -> None:
        pts = tuple(sorted((float(d), float(f)) for d, f in self.points))
        object.__setattr__(self, "points", pts)
        if not pts:
            raise ValueError("overload curve needs at least one point")
        if any(d <= 0 for d, _ in pts):
            raise ValueError("overload curve durations must be positive")
        if any(f < 1 for _, f in pts):
            raise ValueError("permissible loading must be >= 1 at every point")
        if any(b[1] >= a[1] or b[0] == a[0] for a, b in zip(pts, pts[1:])):
            raise ValueError("permissible loading must strictly decrease with duration")

    def permissible(self, duration_min) -> np.ndarray:
        """Linear interpolation in log-duration, clamped beyond the end points."""
        d = np.log(np.maximum(np.asarray(duration_min, dtype=float), 1e-12))
        xs = np.log([p[0] for p in self.points])
        ys = np.array([p[1] for p in self.points])
        return np.interp(d, xs, ys)

    def violates(self, duration_min: float, loading: float) -> bool:
        return bool(loading > float(self.permissible(duration_min)))


@dataclass
class Snapshot:
    voltage: np.ndarray  # complex p.u. per bus
    line_current: np.ndarray  # complex p.u. per line, oriented away from the slack
    slack_power: complex  # kVA drawn from MV
    losses: float  # kW
    iterations: int


@dataclass
class PowerFlowResult:
    bus_ids: list[str]
    line_ids: list[str]
    bus_voltage: np.ndarray  # (T, n_bus) p.u. magnitude
    line_loading: np.ndarray  # (T, n_line) current / ampacity
    transformer_flow: np.ndarray  # (T,) kW, positive = import from MV
    losses: np.ndarray  # (T,) kW
    injection_total: np.ndarray  # (T,) kW, sum of net consumption

    def __len__(self) -> int:
        return len(self.transformer_flow)

    def check_conservation(self, rtol: float = 1e-6) -> float:
        """Worst relative mismatch of slack power against injections + losses."""
        expected = self.injection_total + self.losses
        scale = np.maximum(np.abs(self.transformer_flow), np.abs(expected))
        scale = np.maximum(scale, 1e-9)
        err = float(np.max(np.abs(self.transformer_flow - expected) / scale)) if len(self) else 0.0
        if err > rtol or np.any(self.losses < -1e-9):
            raise PowerFlowError(f"power balance mismatch {err:.3g} exceeds {rtol:g}")
        return err


def _sweep(net: Network, s_pu: np.ndarray, tol: float, max_iter: int, offset: int = 0):
    """Vectorised sweep over rows of ``s_pu`` (T, n_bus), complex consumption in p.u.

    Each row stops updating once it converges, so the result of a row does
    not depend on which other rows share the call.
    """
    topo = net._topo
    path, z = topo["path"], topo["z_pu"]
    T, n_bus = s_pu.shape
    v = np.ones((T, n_bus), dtype=complex)
    active = np.ones(T, dtype=bool)
    iters = np.zeros(T, dtype=int)
    drop_ops = path.T
    for it in range(1, max_iter + 1):
        rows = np.flatnonzero(active)
        if len(rows) == 0:
            break
        va = v[rows]
        i_bus = np.conj(s_pu[rows] / va)
        j = i_bus @ path
        v_new = 1.0 - (j * z) @ drop_ops
        delta = np.max(np.abs(v_new - va), axis=1)
        v[rows] = v_new
        iters[rows] = it
        low = np.min(np.abs(v_new), axis=1)
        if np.any(low < 0.5):
            t = int(rows[np.argmin(low)]) + offset
            raise PowerFlowError(f"voltage collapse at timestep {t}: {low.min():.3f} p.u.")
        active[rows[delta < tol]] = False
    if active.any():
        rows = np.flatnonzero(active)
        va = v[rows]
        mismatch = np.abs(va - (1.0 - (np.conj(s_pu[rows] / va) @ path * z) @ drop_ops)).max(axis=1)
        worst = int(np.argmax(mismatch))
        raise PowerFlowError(
            f"sweep did not converge in {max_iter} iterations at timestep {int(rows[worst]) + offset} "
            f"(worst mismatch {mismatch[worst]:.3g} p.u.)"
        )
    j = np.conj(s_pu / v) @ path
    return v, j, iters


def _bus_power(net: Network, p_kw: Mapping[str, float] | np.ndarray, q_kvar=None) -> np.ndarray:
    """Complex per-bus consumption in p.u. from a bus-id map or an array."""
    n = len(net.buses)
    if isinstance(p_kw, Mapping):
        p = np.zeros(n)
        for bus, val in p_kw.items():
            p[net.bus_index(bus)] += val
    else:
        p = np.asarray(p_kw, dtype=float)
    q = np.zeros_like(p)
    if q_kvar is not None:
        if isinstance(q_kvar, Mapping):
            for bus, val in q_kvar.items():
                q[..., net.bus_index(bus)] += val
        else:
            q = np.asarray(q_kvar, dtype=float)
    return (p + 1j * q) / S_BASE_KVA


def sweep_snapshot(
    net: Network,
    p_injection: Mapping[str, float],
    q_injection: Mapping[str, float] | None = None,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> Snapshot:
    """Solve one operating point. Injections are net consumption per bus (kW, kvar)."""
    s = _bus_power(net, p_injection, q_injection)[None, :]
    v, j, iters = _sweep(net, s, tol, max_iter)
    z = net._topo["z_pu"]
    losses = float(np.sum(np.abs(j[0]) ** 2 * z.real)) * S_BASE_KVA
    s_slack = s[0, net._topo["slack_pos"]] + _slack_export(v[0], j[0], net)
    return Snapshot(v[0], j[0], complex(s_slack * S_BASE_KVA), losses, int(iters[0]))


def _slack_export(v_row, j_row, net: Network) -> complex:
    """Complex power leaving the slack bus into its feeders (p.u.)."""
    topo = net._topo
    feeders = topo["parent"] == topo["slack_pos"]
    return complex(v_row[topo["slack_pos"]] * np.conj(np.sum(j_row[feeders])))


def net_injections(net: Network, designs: Mapping, pv_scale: float = 1.0) -> np.ndarray:
    """Per-bus net consumption (T, n_bus) in kW from building dispatches.

    ``pv_scale`` scales each building's behind-the-meter offset
    ``load - (import - export)``; 1 reproduces the dispatch, 0 is the bare load.
    """
    missing = [b for b in designs if b not in net.injections]
    if missing:
        raise NetworkError([f"building {b!r} has no injection point" for b in missing])
    lengths = {len(np.asarray(d.grid_import)) for d in designs.values()}
    if len(lengths) != 1:
        raise ValueError("all dispatches must share one time grid")
    T = lengths.pop()
    out = np.zeros((T, len(net.buses)))
    for bid, d in designs.items():
        net_kw = np.asarray(d.grid_import, dtype=float) - np.asarray(d.grid_export, dtype=float)
        if pv_scale != 1.0:
            load = np.asarray(d.load, dtype=float)
            net_kw = load - pv_scale * (load - net_kw)
        out[:, net.bus_index(net.injections[bid])] += net_kw
    return out


def run_timeseries(
    net: Network,
    designs: Mapping | np.ndarray,
    pv_scale: float = 1.0,
    tol: float = 1e-12,
    max_iter: int = 200,
    chunk: int = 4096,
) -> PowerFlowResult:
    """Power flow for every timestep of a set of building dispatches.

    ``designs`` maps building id to an object with ``grid_import``,
    ``grid_export`` (and ``load`` when ``pv_scale`` != 1), or is a ready
    (T, n_bus) array of net consumption in kW.
    """
    p = designs if isinstance(designs, np.ndarray) else net_injections(net, designs, pv_scale)
    s = p / S_BASE_KVA + 0j
    topo = net._topo
    z, slack_pos = topo["z_pu"], topo["slack_pos"]
    feeders = topo["parent"] == slack_pos
    amp = np.array([l.ampacity for l in net.lines])
    T = len(p)
    volts = np.empty((T, len(net.buses)))
    loading = np.empty((T, len(net.lines)))
    flow = np.empty(T)
    losses = np.empty(T)
    for a in range(0, T, chunk):
        b = min(T, a + chunk)
        v, j, _ = _sweep(net, s[a:b], tol, max_iter, offset=a)
        volts[a:b] = np.abs(v)
        loading[a:b] = np.abs(j) * topo["i_base"] / amp
        losses[a:b] = (np.abs(j) ** 2 @ z.real) * S_BASE_KVA
        export = v[:, slack_pos] * np.conj(j[:, feeders].sum(axis=1))
        flow[a:b] = (export.real + s[a:b, slack_pos].real) * S_BASE_KVA
    return PowerFlowResult(net.bus_ids, net.line_ids, volts, loading, flow, losses, p.sum(axis=1))


# Transformer overload analytics

@dataclass(frozen=True)
class OverloadEvent:
    start: int  # timestep index
    duration_min: float
    peak_loading: float  # fraction of rating
    permissible: float
    violates_curve: bool


@dataclass
class OverloadReport:
    events: list[OverloadEvent]
    load_duration: np.ndarray  # flow sorted descending, kW
    overload_hours: float
    rating: float

    @property
    def n_violations(self) -> int:
        return sum(e.violates_curve for e in self.events)


def overload_events(
    flow: np.ndarray,
    s_rated: float,
    curve: OverloadCurve | None = None,
    step_hours: float = 0.25,
    contiguous: np.ndarray | None = None,
) -> OverloadReport:
    """Maximal runs of |flow| above the rating, checked against the curve.

    Unity power factor is assumed, so kW compares directly with kVA. A run
    also ends at a gap in the time grid (``contiguous[t]`` False).
    """
    curve = curve or OverloadCurve()
    flow = np.asarray(flow, dtype=float)
    over = np.abs(flow) > s_rated
    if contiguous is None:
        contiguous = np.ones(len(flow), dtype=bool)
    events = []
    t, n = 0, len(flow)
    while t < n:
        if not over[t]:
            t += 1
            continue
        start = t
        t += 1
        while t < n and over[t] and contiguous[t]:
            t += 1
        duration = (t - start) * step_hours * 60.0
        peak = float(np.max(np.abs(flow[start:t]))) / s_rated
        allowed = float(curve.permissible(duration))
        events.append(OverloadEvent(start, duration, peak, allowed, peak > allowed))
    return OverloadReport(events, np.sort(flow)[::-1], float(over.sum()) * step_hours, s_rated)


# Voltage and loading statistics

def nearest_rank(values, pct: float) -> float:
    """Nearest-rank percentile; 0.0 for an empty sample."""
    x = np.sort(np.asarray(values, dtype=float).ravel())
    if len(x) == 0:
        return 0.0
    rank = max(1, math.ceil(pct / 100.0 * len(x) - 1e-12))
    return float(x[rank - 1])


@dataclass
class BusStats:
    bus_id: str
    p95_over: float  # p.u. above 1, over steps with v > 1
    p95_under: float  # p.u. below 1, over steps with v < 1
    n_over_limit: int
    n_under_limit: int


@dataclass
class LineStats:
    line_id: str
    p95_loading: float
    max_loading: float
    n_overloaded: int


def voltage_line_stats(
    result: PowerFlowResult, pct: float = 95.0, v_min: float = V_MIN, v_max: float = V_MAX,
    buses: Iterable[str] | None = None,
) -> tuple[list[BusStats], list[LineStats]]:
    if len(result) == 0:
        raise ValueError("empty power-flow result")
    keep = set(buses) if buses is not None else None
    bus_stats = []
    for k, bid in enumerate(result.bus_ids):
        if keep is not None and bid not in keep:
            continue
        v = result.bus_voltage[:, k]
        bus_stats.append(BusStats(
            bid,
            nearest_rank(v[v > 1] - 1, pct),
            nearest_rank(1 - v[v < 1], pct),
            int(np.sum(v > v_max)),
            int(np.sum(v < v_min)),
        ))
    line_stats = [
        LineStats(lid, nearest_rank(result.line_loading[:, k], pct),
                  float(result.line_loading[:, k].max()), int(np.sum(result.line_loading[:, k] > 1.0)))
        for k, lid in enumerate(result.line_ids)
    ]
    return bus_stats, line_stats


# Hosting capacity

@dataclass
class HostingCapacity:
    scale: float
    bounded: bool  # False when the search cap itself is violation-free
    probes: list[tuple[float, bool]]  # (scale, violating)

    @property
    def label(self) -> str:
        return f"{self.scale:.4g}" if self.bounded else f">= {self.scale:.4g} (unbounded within cap)"


@dataclass(frozen=True)
class HostingLimits:
    curve: OverloadCurve = field(default_factory=OverloadCurve)
    v_min: float = V_MIN
    v_max: float = V_MAX
    use_virtual_rating: bool = False


def violations(net: Network, result: PowerFlowResult, limits: HostingLimits, grid: TimeGrid | None = None) -> dict:
    rating = net.transformer.effective_rating(limits.use_virtual_rating)
    step = grid.step_hours if grid is not None else 0.25
    contig = grid.contiguous() if grid is not None else None
    report = overload_events(result.transformer_flow, rating, limits.curve, step, contig)
    return {
        "transformer": report.n_violations,
        "lines": int(np.sum(result.line_loading > 1.0)),
        "overvoltage": int(np.sum(result.bus_voltage > limits.v_max)),
        "undervoltage": int(np.sum(result.bus_voltage < limits.v_min)),
    }


def hosting_capacity(
    net: Network,
    designs: Mapping,
    limits: HostingLimits | None = None,
    grid: TimeGrid | None = None,
    tol: float = 1e-3,
    cap: float = 10.0,
) -> HostingCapacity:
    """Largest uniform PV scale factor with no violation, by bisection."""
    limits = limits or HostingLimits()
    probes: list[tuple[float, bool]] = []

    def violating(s: float) -> bool:
        res = run_timeseries(net, designs, pv_scale=s)
        bad = any(violations(net, res, limits, grid).values())
        probes.append((s, bad))
        return bad

    if violating(0.0):
        counts = violations(net, run_timeseries(net, designs, pv_scale=0.0), limits, grid)
        raise PowerFlowError(f"violations without PV (demand side), hosting capacity undefined: {counts}")
    if not violating(cap):
        return HostingCapacity(cap, False, probes)
    lo, hi = 0.0, cap
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if violating(mid):
            hi = mid
        else:
            lo = mid
    worst_ok = max(s for s, bad in probes if not bad)
    first_bad = min(s for s, bad in probes if bad)
    if worst_ok > first_bad:
        raise PowerFlowError("violations are not monotone in the PV scale on the probe points")
    return HostingCapacity(lo, True, probes)


# Network files

def network_to_dict(net: Network) -> dict:
    t = net.transformer
    trafo = {"s_rated": t.s_rated, "n_parallel": t.n_parallel, "lv_bus": t.lv_bus}
    if t.virtual_rating:
        trafo["virtual_rating"] = t.virtual_rating
    return {
        "name": net.name,
        "buses": [{"id": b.id, "v_nominal": b.v_nominal} for b in net.buses],
        "lines": [
            {"id": l.id, "from": l.from_bus, "to": l.to_bus, "r_ohm": l.r_ohm, "x_ohm": l.x_ohm,
             "ampacity": l.ampacity, "length_m": l.length_m}
            for l in net.lines
        ],
        "transformer": trafo,
        "injections": dict(net.injections),
    }


def network_from_dict(doc: Mapping) -> Network:
    errors = []
    if not isinstance(doc, Mapping):
        raise NetworkError(["network file must contain a mapping"])
    for key in ("buses", "lines", "transformer"):
        if key not in doc:
            errors.append(f"missing section {key!r}")
    if errors:
        raise NetworkError(errors)
    buses = []
    for i, b in enumerate(doc["buses"] or []):
        if "id" not in b:
            errors.append(f"buses[{i}]: missing id")
            continue
        buses.append(Bus(str(b["id"]), float(b.get("v_nominal", 400.0))))
    lines = []
    for i, l in enumerate(doc["lines"] or []):
        lid = str(l.get("id", f"line{i}"))
        miss = [k for k in ("from", "to", "r_ohm", "x_ohm", "ampacity") if l.get(k) is None]
        if miss:
            errors.append(f"line {lid!r}: missing {', '.join(miss)}")
            continue
        lines.append(Line(lid, str(l["from"]), str(l["to"]), float(l["r_ohm"]), float(l["x_ohm"]),
                          float(l["ampacity"]), float(l.get("length_m", 0.0))))
    t = doc["transformer"] or {}
    if "s_rated" not in t:
        errors.append("transformer: missing s_rated")
    if errors:
        raise NetworkError(errors)
    trafo = Transformer(float(t["s_rated"]), int(t.get("n_parallel", 1)), str(t.get("lv_bus", "lv")),
                        float(t["virtual_rating"]) if t.get("virtual_rating") else None)
    inj = {str(k): str(v) for k, v in (doc.get("injections") or {}).items()}
    return Network(tuple(buses), tuple(lines), trafo, inj, name=str(doc.get("name", "network")))


def load_network(path) -> Network:
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise NetworkError([f"{path}: {exc}"]) from exc
    return network_from_dict(doc)


def save_network(path, net: Network) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(network_to_dict(net), fh, sort_keys=False)


# Synthetic networks shaped like the studied urban, semi-urban and rural grids

# kind -> (injection points, transformer units, unit kVA, virtual kVA, buildings, span m)
NETWORK_SHAPES = {
    "urban": (33, 2, 630.0, 1000.0, 65, (15.0, 45.0)),
    "semiurban": (37, 2, 400.0, 1000.0, 71, (25.0, 70.0)),
    "rural": (24, 1, 630.0, 630.0, 32, (60.0, 180.0)),
}

# (R ohm/km, X ohm/km, ampacity A) of common LV cables
CABLES = {"150": (0.206, 0.080, 275.0), "95": (0.320, 0.082, 205.0), "50": (0.641, 0.085, 140.0)}


def synth_network(
    kind: str,
    building_ids: Sequence[str],
    seed: int = 0,
    n_feeders: int = 4,
    s_rated: float | None = None,
    n_injection_points: int | None = None,
    name: str | None = None,
) -> Network:
    """Random radial feeder tree of the given kind.

    Buildings are spread over the injection points in order, so each point
    gets one or more buildings. Cable size shrinks with depth.
    """
    if kind not in NETWORK_SHAPES:
        raise ValueError(f"unknown network kind {kind!r}; choose from {sorted(NETWORK_SHAPES)}")
    n_points, units, unit_kva, virtual, _, span = NETWORK_SHAPES[kind]
    if n_injection_points is not None:
        n_points = n_injection_points
    rng = np.random.default_rng(seed)
    buses = [Bus("lv")] + [Bus(f"n{i + 1}") for i in range(n_points)]
    depth = {"lv": 0}
    lines = []
    heads: list[str] = []
    for i in range(n_points):
        bus = f"n{i + 1}"
        if i < min(n_feeders, n_points):
            parent = "lv"
            heads.append(bus)
        else:
            # extend mostly along the feeder ends, sometimes branch
            candidates = [b.id for b in buses[1:i + 1]]
            parent = candidates[-1 - int(rng.integers(0, min(len(candidates), 3)))] if rng.random() < 0.7 \
                else candidates[int(rng.integers(0, len(candidates)))]
        depth[bus] = depth[parent] + 1
        cable = CABLES["150"] if depth[bus] <= 2 else CABLES["95"] if depth[bus] <= 5 else CABLES["50"]
        length = float(np.round(rng.uniform(*span), 1))
        r, x, amp = cable
        lines.append(Line(f"l{i + 1}", parent, bus, round(r * length / 1000, 6), round(x * length / 1000, 6),
                          amp, length))
    points = [b.id for b in buses[1:]]
    injections = {bid: points[k % n_points] for k, bid in enumerate(building_ids)}
    trafo = Transformer(s_rated if s_rated is not None else unit_kva,
                        1 if s_rated is not None else units, "lv",
                        None if s_rated is not None else virtual)
    return Network(tuple(buses), tuple(lines), trafo, injections, name=name or kind)
