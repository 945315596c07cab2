"""Reference implementations used to cross-check the package.

Everything here is written from the tariff table and textbook methods
without calling into the code under test: a straight-loop biller, a dense
dispatch LP with its own variable layout, a polar Newton-Raphson power flow,
a two-bus closed form, vertex enumeration for the stage-2 LP, brute-force
profile assignment and a brute-force rank-sum distribution.
"""

from __future__ import annotations

import itertools
import math
from datetime import datetime

import numpy as np
from scipy.optimize import linprog

TAX = 0.0292
FIT = 0.095

# (energy, grid) in currency/kWh
FT = (0.0798, 0.0845)
DT_PEAK = (0.0917, 0.0986)
DT_OFF = (0.0587, 0.0526)
CT_ENERGY = 0.0798
CT_MONTHLY = 16.4
CT_DAILY = {"summer": 0.5312, "fall_spring": 0.9296, "winter": 1.3280}
DYNAMIC_MEDIAN = 0.1076


def _dt(ts: datetime):
    return DT_PEAK if ts.weekday() < 5 and 6 <= ts.hour < 22 else DT_OFF


def price_components(name: str, ts: datetime, dyn_level: float | None = None) -> tuple[float, float, float]:
    """(energy, grid, tax) per kWh for one timestamp, straight from the table."""
    summer_half = 4 <= ts.month <= 9
    if name == "FT reference":
        e, g = FT
    elif name == "DT reference":
        e, g = _dt(ts)
    elif name == "DT solar":
        if summer_half:
            e, g = DT_PEAK if ts.hour >= 18 else DT_OFF
        else:
            e, g = _dt(ts)
    elif name == "DT summer flat":
        e, g = FT if summer_half else _dt(ts)
    elif name == "Dynamic":
        e = g = dyn_level
    elif name in ("CT monthly", "CT daily"):
        e, g = CT_ENERGY, 0.0
    else:
        raise KeyError(name)
    return e, g, TAX


def meteo_season(month: int) -> str:
    if month in (12, 1, 2):
        return "winter"
    if month in (6, 7, 8):
        return "summer"
    return "fall_spring"


def loop_bill(name: str, stamps, step_hours: float, imp, exp, aggregate=None) -> dict:
    """Bill by explicit loops over steps and billing periods."""
    levels = None
    if name == "Dynamic":
        med = float(np.median(aggregate))
        levels = [DYNAMIC_MEDIAN * a / med for a in aggregate]
    vol = credit = grid_part = tax_part = 0.0
    peaks: dict = {}
    for t, ts in enumerate(stamps):
        e, g, tax = price_components(name, ts, levels[t] if levels else None)
        kwh = imp[t] * step_hours
        vol += (e + g + tax) * kwh
        grid_part += g * kwh
        tax_part += tax * kwh
        credit += FIT * exp[t] * step_hours
        if name == "CT monthly":
            key = (ts.year, ts.month)
        elif name == "CT daily":
            key = (ts.year, ts.month, ts.day)
        else:
            continue
        peaks[key] = max(peaks.get(key, 0.0), imp[t])
    cap = 0.0
    for key, p in peaks.items():
        rate = CT_MONTHLY if name == "CT monthly" else CT_DAILY[meteo_season(key[1])]
        cap += rate * p
    return {"volumetric": vol, "credit": credit, "capacity": cap, "grid": grid_part + cap,
            "tax": tax_part, "total": vol - credit + cap}


def annuity(rate: float, years: float) -> float:
    return rate / (1 - (1 + rate) ** -years)


def dense_dispatch_cost(load, pv_per_kw, pv_kw, batt_kwh, price, export_price, step_hours,
                        period_ids=None, period_rates=None, eta_c=0.96, eta_d=0.96, c_rate=1.0):
    """Minimum operating cost for fixed sizes.

    Variables per step are charge, discharge, export, curtailment and the
    state of charge at the start of the step; import is eliminated through
    the balance ``imp = load - pv + curt + ch + exp - dis`` and kept >= 0
    by an inequality, PV used on site by another.
    """
    T = len(load)
    gen = np.asarray(pv_per_kw) * pv_kw
    K = 0 if period_ids is None else int(max(period_ids)) + 1
    nv = 5 * T + K
    CH, DIS, EXP, CURT, SOC = (np.arange(T) + k * T for k in range(5))
    PK = 5 * T + np.arange(K)
    c = np.zeros(nv)
    const = 0.0
    rows, rhs = [], []
    for t in range(T):
        # import cost with import substituted
        w = price[t] * step_hours
        const += w * (load[t] - gen[t])
        c[CURT[t]] += w
        c[CH[t]] += w
        c[EXP[t]] += w - export_price * step_hours
        c[DIS[t]] -= w
        # imp >= 0  ->  -(curt + ch + exp - dis) <= load - gen
        r = np.zeros(nv)
        r[[CURT[t], CH[t], EXP[t]]] = -1
        r[DIS[t]] = 1
        rows.append(r)
        rhs.append(load[t] - gen[t])
        # PV to load >= 0  ->  curt + ch + exp <= gen
        r = np.zeros(nv)
        r[[CURT[t], CH[t], EXP[t]]] = 1
        rows.append(r)
        rhs.append(gen[t])
        # discharge never exceeds the load: dis <= load
        r = np.zeros(nv)
        r[DIS[t]] = 1
        rows.append(r)
        rhs.append(load[t])
        if K:
            # peak >= imp
            r = np.zeros(nv)
            r[[CURT[t], CH[t], EXP[t]]] = 1
            r[DIS[t]] = -1
            r[PK[period_ids[t]]] = -1
            rows.append(r)
            rhs.append(-(load[t] - gen[t]))
    A_eq = np.zeros((T, nv))
    for t in range(T):
        A_eq[t, SOC[(t + 1) % T]] = 1
        A_eq[t, SOC[t]] = -1
        A_eq[t, CH[t]] = -eta_c * step_hours
        A_eq[t, DIS[t]] = step_hours / eta_d
    for k in range(K):
        c[PK[k]] = period_rates[k]
    bounds = [(0, c_rate * batt_kwh)] * T * 2 + [(0, None)] * T * 2 + [(0, batt_kwh)] * T + [(0, None)] * K
    res = linprog(c, A_ub=np.array(rows), b_ub=np.array(rhs), A_eq=A_eq, b_eq=np.zeros(T),
                  bounds=bounds, method="highs", options={"primal_feasibility_tolerance": 1e-10,
                                                           "dual_feasibility_tolerance": 1e-10})
    assert res.status == 0, res.message
    return float(res.fun + const)


def enumerate_sizes(load, pv_per_kw, price, export_price, step_hours, pv_sizes, batt_sizes, capex,
                    period_ids=None, period_rates=None) -> tuple[float, float, float]:
    """(tco, pv, battery) minimising capex(pv, batt) + dispatch cost over the size grid."""
    best = None
    for pv_kw, b in itertools.product(pv_sizes, batt_sizes):
        cost = capex(pv_kw, b) + dense_dispatch_cost(load, pv_per_kw, pv_kw, b, price, export_price, step_hours,
                                                      period_ids, period_rates)
        if best is None or cost < best[0]:
            best = (cost, pv_kw, b)
    return best


# Power flow

def newton_powerflow(buses, lines, slack, p_kw, q_kvar=None, s_base_kva=100.0, tol=1e-12, max_iter=50):
    """Polar Newton-Raphson on the dense nodal admittance matrix.

    ``buses`` is a list of (id, v_nominal), ``lines`` of (from, to, R, X) in
    ohm; ``p_kw`` maps bus id to consumption. Returns complex voltages (p.u.)
    in bus order.
    """
    ids = [b for b, _ in buses]
    vnom = dict(buses)
    pos = {b: i for i, b in enumerate(ids)}
    n = len(ids)
    Y = np.zeros((n, n), dtype=complex)
    for f, t, r, x in lines:
        zb = vnom[t] ** 2 / (s_base_kva * 1e3)
        y = 1.0 / complex(r / zb, x / zb)
        i, j = pos[f], pos[t]
        Y[i, i] += y
        Y[j, j] += y
        Y[i, j] -= y
        Y[j, i] -= y
    s_spec = np.zeros(n, dtype=complex)
    for b, p in p_kw.items():
        s_spec[pos[b]] -= p / s_base_kva
    for b, q in (q_kvar or {}).items():
        s_spec[pos[b]] -= 1j * q / s_base_kva
    pq = [i for i in range(n) if ids[i] != slack]
    vm = np.ones(n)
    va = np.zeros(n)
    G, B = Y.real, Y.imag
    for _ in range(max_iter):
        V = vm * np.exp(1j * va)
        s_calc = V * np.conj(Y @ V)
        mis = np.concatenate([(s_spec - s_calc).real[pq], (s_spec - s_calc).imag[pq]])
        if np.max(np.abs(mis)) < tol:
            break
        m = len(pq)
        J = np.zeros((2 * m, 2 * m))
        P, Q = s_calc.real, s_calc.imag
        for a, i in enumerate(pq):
            for b, k in enumerate(pq):
                if i == k:
                    J[a, b] = -Q[i] - B[i, i] * vm[i] ** 2
                    J[a, m + b] = P[i] / vm[i] + G[i, i] * vm[i]
                    J[m + a, b] = P[i] - G[i, i] * vm[i] ** 2
                    J[m + a, m + b] = Q[i] / vm[i] - B[i, i] * vm[i]
                else:
                    th = va[i] - va[k]
                    J[a, b] = vm[i] * vm[k] * (G[i, k] * math.sin(th) - B[i, k] * math.cos(th))
                    J[a, m + b] = vm[i] * (G[i, k] * math.cos(th) + B[i, k] * math.sin(th))
                    J[m + a, b] = -vm[i] * vm[k] * (G[i, k] * math.cos(th) + B[i, k] * math.sin(th))
                    J[m + a, m + b] = vm[i] * (G[i, k] * math.sin(th) - B[i, k] * math.cos(th))
        dx = np.linalg.solve(J, mis)
        va[pq] += dx[:len(pq)]
        vm[pq] += dx[len(pq):]
    else:
        raise RuntimeError("Newton did not converge")
    return vm * np.exp(1j * va)


def two_bus_voltage(r_pu: float, x_pu: float, p_pu: float, q_pu: float = 0.0) -> float:
    """Receiving-end magnitude for a load p+jq behind r+jx from a 1.0 p.u. source.

    Larger root of U^4 + (2(rp + xq) - 1) U^2 + (r^2 + x^2)(p^2 + q^2) = 0.
    """
    b = 2 * (r_pu * p_pu + x_pu * q_pu) - 1.0
    c = (r_pu ** 2 + x_pu ** 2) * (p_pu ** 2 + q_pu ** 2)
    u2 = (-b + math.sqrt(b * b - 4 * c)) / 2
    return math.sqrt(u2)


def two_bus_injection_for_voltage(r_pu: float, x_pu: float, u: float) -> float:
    """Consumption p (negative for generation, q = 0) giving receiving voltage ``u``."""
    # (r^2 + x^2) p^2 + 2 r u^2 p + u^4 - u^2 = 0, generation root
    a = r_pu ** 2 + x_pu ** 2
    b = 2 * r_pu * u * u
    c = u ** 4 - u * u
    disc = math.sqrt(b * b - 4 * a * c)
    roots = ((-b + disc) / (2 * a), (-b - disc) / (2 * a))
    return max(roots)  # the root nearer zero (normal operating branch)


# Demand allocation

def stage2_vertex_oracle(profiles: np.ndarray, target: float, weights) -> float:
    """Minimum of sum w_i |a_i - p_i| s.t. sum a_i = target, a >= 0, by vertex enumeration.

    Variables are (up_i, down_i) with a_i = p_i + up_i - down_i,
    0 <= down_i <= p_i, up_i >= 0. Every vertex has 2n - 1 active bounds
    alongside the equality.
    """
    p = np.asarray(profiles, dtype=float)
    w = np.asarray(weights, dtype=float)
    n = len(p)
    nv = 2 * n
    bounds = []  # (row, rhs): row . x = rhs when active
    for i in range(n):
        e = np.zeros(nv)
        e[i] = 1
        bounds.append((e, 0.0))  # up_i = 0
        e = np.zeros(nv)
        e[n + i] = 1
        bounds.append((e, 0.0))  # down_i = 0
        bounds.append((e.copy(), p[i]))  # down_i = p_i
    eq = np.concatenate([np.ones(n), -np.ones(n)])
    gap = target - p.sum()
    best = math.inf
    for active in itertools.combinations(range(len(bounds)), nv - 1):
        A = np.vstack([eq] + [bounds[k][0] for k in active])
        b = np.array([gap] + [bounds[k][1] for k in active])
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        x = np.linalg.solve(A, b)
        up, down = x[:n], x[n:]
        if np.any(up < -1e-9) or np.any(down < -1e-9) or np.any(down > p + 1e-9):
            continue
        best = min(best, float(np.dot(w, up + down)))
    return best


def brute_force_assignment(energies, categories, library) -> float:
    """Smallest total |ln(E / source)| over all same-category assignments."""
    options = []
    for e, cat in zip(energies, categories):
        options.append([abs(math.log(e / src)) for c, src in library if c == cat])
    return min(sum(combo) for combo in itertools.product(*options))


# Rank-sum

def brute_rank_sum_p(a, b) -> float:
    """Two-sided p by enumerating every split of the pooled midranks."""
    x = np.concatenate([np.asarray(a, float), np.asarray(b, float)])
    N, n = len(x), len(a)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(N)
    sx = x[order]
    i = 0
    while i < N:
        j = i
        while j + 1 < N and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    mean = n * (N + 1) / 2
    obs = abs(ranks[:n].sum() - mean)
    hits = total = 0
    for combo in itertools.combinations(range(N), n):
        total += 1
        if abs(ranks[list(combo)].sum() - mean) >= obs - 1e-9:
            hits += 1
    return hits / total
