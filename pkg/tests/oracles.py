"""Reference implementations used only by the tests.

Each one is written from the textbook definition and shares no code with the
package, so agreement between the two is meaningful.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.linalg import expm
from scipy.optimize import fsolve


def loop_sweep(p_kw, q_kvar, branches, open_ids, kv, tol=1e-10, max_iter=500):
    """Backward/forward sweep in volts and amperes with explicit loops.

    ``branches`` is a list of (id, from_bus, to_bus, r_ohm, x_ohm), buses
    1-based with bus 1 the source. Returns (|V| p.u. array, loss kW, iterations).
    """
    n = len(p_kw)
    v_base = kv * 1000.0 / math.sqrt(3.0)
    adj = {i: [] for i in range(1, n + 1)}
    for bid, f, t, r, x in branches:
        if bid in open_ids:
            continue
        adj[f].append((t, complex(r, x)))
        adj[t].append((f, complex(r, x)))
    parent, z_in, order = {1: None}, {}, [1]
    for node in order:
        for nxt, z in adj[node]:
            if nxt not in parent:
                parent[nxt] = node
                z_in[nxt] = z
                order.append(nxt)
    s_phase = {i: complex(p_kw[i - 1], q_kvar[i - 1]) * 1000.0 / 3.0 for i in range(1, n + 1)}
    v = {i: complex(v_base, 0.0) for i in range(1, n + 1)}
    for it in range(1, max_iter + 1):
        inj = {i: (s_phase[i] / v[i]).conjugate() for i in v}
        i_br = dict(inj)
        for node in reversed(order[1:]):
            i_br[parent[node]] += i_br[node]
        new = {1: complex(v_base, 0.0)}
        for node in order[1:]:
            new[node] = new[parent[node]] - z_in[node] * i_br[node]
        delta = max(abs(new[i] - v[i]) for i in v) / v_base
        v = new
        if delta < tol:
            break
    inj = {i: (s_phase[i] / v[i]).conjugate() for i in v}
    i_br = dict(inj)
    for node in reversed(order[1:]):
        i_br[parent[node]] += i_br[node]
    loss = sum(3.0 * z_in[node].real * abs(i_br[node]) ** 2 for node in order[1:]) / 1000.0
    return np.array([abs(v[i]) / v_base for i in range(1, n + 1)]), loss, it


def newton_voltages(p_kw, q_kvar, branches, open_ids, kv, base_kva):
    """Polar power-balance equations solved with ``fsolve`` (small systems only)."""
    n = len(p_kw)
    z_base = kv**2 * 1000.0 / base_kva
    y = np.zeros((n, n), dtype=complex)
    for bid, f, t, r, x in branches:
        if bid in open_ids:
            continue
        yk = 1.0 / (complex(r, x) / z_base)
        i, j = f - 1, t - 1
        y[i, i] += yk
        y[j, j] += yk
        y[i, j] -= yk
        y[j, i] -= yk
    p = -np.asarray(p_kw) / base_kva
    q = -np.asarray(q_kvar) / base_kva

    def residual(xv):
        ang = np.concatenate([[0.0], xv[: n - 1]])
        mag = np.concatenate([[1.0], xv[n - 1 :]])
        vc = mag * np.exp(1j * ang)
        s = vc * np.conj(y @ vc)
        return np.concatenate([s.real[1:] - p[1:], s.imag[1:] - q[1:]])

    x0 = np.concatenate([np.zeros(n - 1), np.ones(n - 1)])
    sol = fsolve(residual, x0, xtol=1e-13)
    return np.concatenate([[1.0], sol[n - 1 :]])


def markov_up_probability(failure_per_year, repair_per_year, up_at_0, hours):
    lam = failure_per_year / 8760.0
    mu = repair_per_year / 8760.0
    gen = np.array([[-lam, lam], [mu, -mu]])
    start = np.array([up_at_0, 1.0 - up_at_0])
    return float((start @ expm(gen * hours))[0])


def units_up_by_enumeration(T, A, failure_per_year, repair_per_year, hours):
    """Distribution of units up, summing over all 2**T unit-state vectors."""
    p_uu = markov_up_probability(failure_per_year, repair_per_year, 1.0, hours)
    p_du = markov_up_probability(failure_per_year, repair_per_year, 0.0, hours)
    pmf = np.zeros(T + 1)
    for states in itertools.product((0, 1), repeat=T):
        prob = 1.0
        for k, up in enumerate(states):
            p_up = p_uu if k < T - A else p_du
            prob *= p_up if up else 1.0 - p_up
        pmf[sum(states)] += prob
    return pmf


def best_subset_by_enumeration(points, prob, keep):
    """Optimal K-subset under the Kantorovich distance and its redistributed mass.

    Returns (sorted indices, probabilities in that order, distance). Ties go
    to the lexicographically first subset; dropped scenarios move to the
    nearest kept one, lowest index on ties.
    """
    points = np.asarray(points, dtype=float).reshape(len(prob), -1)
    prob = np.asarray(prob, dtype=float)
    n = len(prob)
    dist = np.array([[np.linalg.norm(points[i] - points[j]) for j in range(n)] for i in range(n)])
    best = None
    for subset in itertools.combinations(range(n), keep):
        d = sum(prob[i] * min(dist[i, s] for s in subset) for i in range(n))
        if best is None or d < best[1] - 1e-12:
            best = (subset, d)
    subset, d = best
    mass = {s: 0.0 for s in subset}
    for i in range(n):
        target = min(subset, key=lambda s: (dist[i, s], s))
        mass[target] += prob[i]
    return list(subset), np.array([mass[s] for s in subset]), d


def rounded_exponential_mean(mean_hours):
    """E[max(1, round_half_up(X))] for X ~ Exp(mean), by direct series summation."""
    k = np.arange(1, int(60 * mean_hours) + 100, dtype=float)
    # P(round(X) = k) = P(k - 0.5 <= X < k + 0.5)
    pk = np.exp(-(k - 0.5) / mean_hours) - np.exp(-(k + 0.5) / mean_hours)
    p0 = 1.0 - np.exp(-0.5 / mean_hours)
    return float(p0 * 1.0 + np.sum(k * pk))


def renewal_unavailability(mttf_hours, mttr_hours):
    """Long-run fraction of time down for alternating whole-hour up/down periods."""
    up = rounded_exponential_mean(mttf_hours)
    down = rounded_exponential_mean(mttr_hours)
    return down / (up + down)


def mantegna_sigma_direct(tau):
    num = math.gamma(1.0 + tau) * math.sin(math.pi * tau / 2.0)
    den = math.gamma((1.0 + tau) / 2.0) * tau * 2.0 ** ((tau - 1.0) / 2.0)
    return (num / den) ** (1.0 / tau)


def pv_unit_kw_by_hand(s, t_amb, noct, v_oc, v_mp, i_sc, i_mp, k_v, k_i, modules):
    t_cell = t_amb + s * (noct - 20.0) / 0.8
    v = v_oc - k_v * t_cell
    i = s * (i_sc + k_i * (t_cell - 25.0))
    ff = v_mp * i_mp / (v_oc * i_sc)
    return modules * ff * v * i / 1000.0


def radial_by_matrix_power(closed, from_bus, to_bus, n_bus):
    """Spanning-tree test through reachability: N-1 closed branches and every
    entry of (I + M)^(N-1) positive, M the adjacency of the closed branches."""
    closed = np.asarray(closed, dtype=bool)
    if closed.sum() != n_bus - 1:
        return False
    m = np.eye(n_bus)
    for k in np.flatnonzero(closed):
        a, b = from_bus[k] - 1, to_bus[k] - 1
        m[a, b] = m[b, a] = 1.0
    return bool(np.all(np.linalg.matrix_power(m, n_bus - 1) > 0))


# Small scenario sets for the reduction tests: (points, probabilities, keep).
HAND_SETS = [
    ([0.0, 1.0, 2.0, 10.0], [0.25] * 4, 2),
    ([0.0, 0.1, 5.0, 5.1, 10.0], [0.2] * 5, 3),
    ([0.0, 0.0, 3.0, 3.0, 3.0, 9.0], [0.1, 0.1, 0.2, 0.2, 0.2, 0.2], 2),
    ([[0, 0], [0, 1], [5, 5], [5, 6], [10, 0], [10, 1], [0, 10], [1, 10]], [0.125] * 8, 4),
    ([1.0, 2.0, 3.0, 4.0], [0.4, 0.1, 0.1, 0.4], 1),
    ([0.0, 4.0, 4.5, 20.0, 21.0, 40.0, 41.0], [0.1, 0.2, 0.1, 0.2, 0.1, 0.2, 0.1], 3),
]

