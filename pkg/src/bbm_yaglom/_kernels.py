"""Compiled inner loops.

Trees are simulated depth-first, one replica after another, from a single
``numpy.random.Generator`` per call. Every call is deterministic given the
generator state, which is what makes chunked parallel runs reproducible.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

_JIT = dict(nogil=True, cache=True)

# reasons a replica stops early
CENSOR_NONE = 0
CENSOR_POPULATION = 1
CENSOR_TIME = 2
ABORT_ABOVE = 3

_FLAT_EPS = 1e-14
# a pruned particle may use at most this share of the remaining budget, so the
# budget is never exhausted and the threshold tightens as it is spent
_PRUNE_SHARE = 1e-3


@nb.njit(**_JIT)
def inverse_gaussian(gen, mean, shape):
    """Michael-Schucany-Haas sampler, rewritten to stay stable for huge means.

    ``mean = inf`` gives the Levy limit ``shape / N^2``.
    """
    nu = gen.standard_normal()
    y = nu * nu
    if not math.isfinite(mean):
        return shape / max(y, 1e-300)
    w = mean * y / (2.0 * shape)
    x = mean / (1.0 + w + math.sqrt(w * w + 2.0 * w))
    if gen.random() * (mean + x) <= mean:
        return x
    return mean * mean / x


@nb.njit(**_JIT)
def bridge_hit(gen, a, b, dt):
    """Hitting time of 0 for a Brownian bridge ``a -> b`` on ``[0, dt]`` that hits 0."""
    if a <= 0.0:
        return 0.0
    bb = abs(b)
    mean = a * dt / bb if bb > 0.0 else math.inf
    u = inverse_gaussian(gen, mean, a * a)
    if not math.isfinite(u):
        return dt
    return min(u * dt / (dt + u), dt)


@nb.njit(**_JIT)
def _grow_f(a):
    out = np.empty(max(16, 2 * a.size), dtype=a.dtype)
    out[: a.size] = a
    return out


@nb.njit(**_JIT)
def _grow_i(a):
    out = np.empty(max(16, 2 * a.size), dtype=a.dtype)
    out[: a.size] = a
    return out


@nb.njit(**_JIT)
def _ceil_L(c, T, s):
    d = T - s
    return c * np.cbrt(d) if d > 0.0 else 0.0


@nb.njit(**_JIT)
def _substep_kill(gen, x, y, t0, t1, absorb, c, T, crossing_dt):
    """Walk a bridge ``(t0, x) -> (t1, y)`` in ``crossing_dt`` pieces against both barriers.

    Returns ``(kind, time)`` with kind 0 = survived, 1 = absorbed at 0,
    2 = killed at the ceiling. Each piece uses the exact bridge formula against
    0 and the bridge formula against the chord of the ceiling.
    """
    dt = t1 - t0
    n = max(1, int(math.ceil(dt / crossing_dt - 1e-9)))
    h = dt / n
    cx = x
    ct = t0
    for k in range(1, n + 1):
        nt = t1 if k == n else t0 + k * h
        hk = nt - ct
        if k == n:
            nx = y
        else:
            rem = t1 - ct
            nx = cx + (y - cx) * (hk / rem) + math.sqrt(max(hk * (rem - hk) / rem, 0.0)) * gen.standard_normal()
        t_lo = math.inf
        t_up = math.inf
        if absorb:
            if nx <= 0.0:
                t_lo = ct + bridge_hit(gen, cx, nx, hk)
            elif gen.random() < math.exp(-2.0 * cx * nx / hk):
                t_lo = ct + bridge_hit(gen, cx, nx, hk)
        da = _ceil_L(c, T, ct) - cx
        db = _ceil_L(c, T, nt) - nx
        if da <= 0.0:
            t_up = ct
        elif db <= 0.0:
            t_up = ct + bridge_hit(gen, da, db, hk)
        elif gen.random() < math.exp(-2.0 * da * db / hk):
            t_up = ct + bridge_hit(gen, da, db, hk)
        if t_lo < math.inf or t_up < math.inf:
            if t_lo <= t_up:
                return 1, t_lo
            return 2, t_up
        cx = nx
        ct = nt
    return 0, t1


@nb.njit(**_JIT)
def log_ndtr_upper(a):
    """``log Phi(a)``, replaced by the Mills-ratio upper bound deep in the left tail."""
    if a > -5.0:
        return math.log(0.5 * math.erfc(-a / math.sqrt(2.0)))
    return -0.5 * a * a - math.log(-a) - 0.5 * math.log(2.0 * math.pi)


@nb.njit(**_JIT)
def log_mass(x, r, rho):
    """Upper bound on log E[#descendants alive after time ``r``] for one particle at ``x``.

    Many-to-one gives ``e^r P_x(drifted path stays positive on [0, r])``; the
    probability is bounded both by the endpoint being positive and by the
    first-passage density integral.
    """
    if r <= 0.0:
        return 0.0 if x > 0.0 else -math.inf
    if x <= 0.0:
        return -math.inf
    sr = math.sqrt(r)
    lp = log_ndtr_upper((x - rho * r) / sr)
    if rho > 0.0:
        lb = math.log(2.0 * x / (rho * rho * math.sqrt(2.0 * math.pi))) - 1.5 * math.log(r) + rho * x - 0.5 * rho * rho * r
        lp = min(lp, lb)
    return r + min(lp, 0.0)


@nb.njit(**_JIT)
def bbm_kernel(
    gen,
    offsets,
    init_x,
    init_t0,
    init_tstop,
    rho,
    branch_rate,
    absorb,
    snap_times,
    moving,
    curve_t,
    curve_c,
    crossing_dt,
    max_created,
    abort_above,
    prune_below,
    prune_budget,
):
    """Simulate ``len(offsets) - 1`` independent replicas.

    Replica ``r`` starts from particles ``offsets[r]:offsets[r+1]`` of the
    ``init_*`` arrays; particle ``i`` lives on ``[init_t0[i], init_tstop[i]]``
    and its descendants inherit that stop time. Trees are run depth-first and
    initial particles in array order, so callers control the order of early
    aborts.

    With ``prune_below > 0`` a particle is dropped as soon as the bound
    ``exp(log_mass)`` on its expected number of survivors at its stop time
    falls below ``prune_below`` and below ``_PRUNE_SHARE`` times what is left
    of ``prune_budget[r]``. The dropped total never exceeds the budget.

    Returns per-replica arrays (zeta, status, births, absorbed, top_kills,
    created, pruned, pruned_mass) and flat arrays of survivors at their stop
    time (rep, pos) and of snapshot records (rep, snap_index, pos).
    """
    n_rep = offsets.size - 1
    zeta = np.zeros(n_rep)
    status = np.zeros(n_rep, dtype=np.int64)
    births = np.zeros(n_rep, dtype=np.int64)
    absorbed = np.zeros(n_rep, dtype=np.int64)
    top_kills = np.zeros(n_rep, dtype=np.int64)
    created = np.zeros(n_rep, dtype=np.int64)
    pruned = np.zeros(n_rep, dtype=np.int64)
    pruned_mass = np.zeros(n_rep)
    log_cut = math.log(prune_below) if prune_below > 0.0 else -math.inf

    fin_rep = np.empty(64, dtype=np.int64)
    fin_pos = np.empty(64)
    n_fin = 0
    snap_rep = np.empty(64, dtype=np.int64)
    snap_idx = np.empty(64, dtype=np.int64)
    snap_pos = np.empty(64)
    n_snap = 0

    st_x = np.empty(64)
    st_t = np.empty(64)
    st_s = np.empty(64)
    n_times = snap_times.size

    for r in range(n_rep):
        sp = 0
        lo, hi = offsets[r], offsets[r + 1]
        # push in reverse so the first initial particle is processed first
        for i in range(hi - 1, lo - 1, -1):
            if sp == st_x.size:
                st_x = _grow_f(st_x)
                st_t = _grow_f(st_t)
                st_s = _grow_f(st_s)
            st_x[sp] = init_x[i]
            st_t[sp] = init_t0[i]
            st_s[sp] = init_tstop[i]
            sp += 1
        created[r] = hi - lo
        fin_mark = n_fin
        snap_mark = n_snap
        last_death = 0.0
        stop = False
        while sp > 0 and not stop:
            sp -= 1
            x = st_x[sp]
            t = st_t[sp]
            ts = st_s[sp]
            # first snapshot strictly after t
            k = np.searchsorted(snap_times, t, side="right")
            while True:
                if prune_below > 0.0 and t < ts:
                    lm = log_mass(x, ts - t, rho)
                    if lm < log_cut:
                        m = math.exp(lm)
                        if m <= _PRUNE_SHARE * (prune_budget[r] - pruned_mass[r]):
                            pruned_mass[r] += m
                            pruned[r] += 1
                            break
                t_snap = snap_times[k] if k < n_times else math.inf
                t_br = t + gen.exponential() / branch_rate if branch_rate > 0.0 else math.inf
                t_end = min(t_br, t_snap, ts)
                dt = t_end - t
                if dt > 0.0:
                    y = x - rho * dt + math.sqrt(dt) * gen.standard_normal()
                    kind = 0
                    t_kill = t_end
                    if moving:
                        L1 = _ceil_L(curve_c, curve_t, t_end)
                        if y >= L1 or x >= L1 or math.exp(-2.0 * (L1 - x) * (L1 - y) / dt) > _FLAT_EPS:
                            kind, t_kill = _substep_kill(gen, x, y, t, t_end, absorb, curve_c, curve_t, crossing_dt)
                        elif absorb and (y <= 0.0 or gen.random() < math.exp(-2.0 * x * y / dt)):
                            kind = 1
                            t_kill = t + bridge_hit(gen, x, y, dt)
                    elif absorb and (y <= 0.0 or gen.random() < math.exp(-2.0 * x * y / dt)):
                        kind = 1
                        t_kill = t + bridge_hit(gen, x, y, dt)
                    if kind != 0:
                        if kind == 1:
                            absorbed[r] += 1
                        else:
                            top_kills[r] += 1
                        if t_kill > last_death:
                            last_death = t_kill
                        break
                    x = y
                    t = t_end
                if t >= t_snap:
                    if n_snap == snap_pos.size:
                        snap_pos = _grow_f(snap_pos)
                        snap_rep = _grow_i(snap_rep)
                        snap_idx = _grow_i(snap_idx)
                    snap_rep[n_snap] = r
                    snap_idx[n_snap] = k
                    snap_pos[n_snap] = x
                    n_snap += 1
                    k += 1
                if t >= ts:
                    if n_fin == fin_pos.size:
                        fin_pos = _grow_f(fin_pos)
                        fin_rep = _grow_i(fin_rep)
                    fin_rep[n_fin] = r
                    fin_pos[n_fin] = x
                    n_fin += 1
                    if x > abort_above[r]:
                        status[r] = ABORT_ABOVE
                        stop = True
                    break
                if t_br < t_snap and t_br < ts:
                    if sp == st_x.size:
                        st_x = _grow_f(st_x)
                        st_t = _grow_f(st_t)
                        st_s = _grow_f(st_s)
                    st_x[sp] = x
                    st_t[sp] = t
                    st_s[sp] = ts
                    sp += 1
                    births[r] += 1
                    created[r] += 1
                    if created[r] > max_created:
                        status[r] = CENSOR_POPULATION
                        stop = True
                        break
        if stop:
            # drop partial output of an abandoned replica
            n_fin = fin_mark
            n_snap = snap_mark
        zeta[r] = last_death
    return (
        zeta,
        status,
        births,
        absorbed,
        top_kills,
        created,
        pruned,
        pruned_mass,
        fin_rep[:n_fin].copy(),
        fin_pos[:n_fin].copy(),
        snap_rep[:n_snap].copy(),
        snap_idx[:n_snap].copy(),
        snap_pos[:n_snap].copy(),
    )


@nb.njit(**_JIT)
def _line(k, s, rho, delta):
    # 0: rho s (drift -rho), 1: sqrt2 s (drift -sqrt2), 2: delta + sqrt2 s (shifted)
    if k == 0:
        return rho * s
    if k == 1:
        return math.sqrt(2.0) * s
    return delta + math.sqrt(2.0) * s


@nb.njit(**_JIT)
def coupled_kernel(gen, offsets, init_x, rho, delta, horizon, snap_times, max_created):
    """One driftless driver read through three absorbing lines.

    Returns per-replica death times ``zeta[r, k]`` (the last death in process
    ``k``), an alive-at-horizon flag per process, the census status, and
    snapshot records ``(rep, snap_index, lineage, alive_mask, driver_pos)``.
    """
    n_rep = offsets.size - 1
    eps = rho - math.sqrt(2.0)
    s_cross = delta / eps if eps > 0.0 else math.inf
    zeta = np.zeros((n_rep, 3))
    alive_end = np.zeros((n_rep, 3), dtype=np.int64)
    status = np.zeros(n_rep, dtype=np.int64)

    s_rep = np.empty(64, dtype=np.int64)
    s_idx = np.empty(64, dtype=np.int64)
    s_lin = np.empty(64, dtype=np.int64)
    s_mask = np.empty(64, dtype=np.int64)
    s_pos = np.empty(64)
    n_s = 0

    st_x = np.empty(64)
    st_t = np.empty(64)
    st_m = np.empty(64, dtype=np.int64)
    st_id = np.empty(64, dtype=np.int64)
    n_times = snap_times.size
    order_early = np.array([2, 0, 1])
    order_late = np.array([0, 2, 1])

    for r in range(n_rep):
        sp = 0
        lo, hi = offsets[r], offsets[r + 1]
        next_id = 0
        for i in range(hi - 1, lo - 1, -1):
            if sp == st_x.size:
                st_x = _grow_f(st_x)
                st_t = _grow_f(st_t)
                st_m = _grow_i(st_m)
                st_id = _grow_i(st_id)
            st_x[sp] = init_x[i]
            st_t[sp] = 0.0
            st_m[sp] = 7 if init_x[i] > delta else 3
            st_id[sp] = i - lo
            sp += 1
            next_id += 1
        # snapshot at time 0 is written by the caller
        created = hi - lo
        mark = n_s
        while sp > 0:
            sp -= 1
            x = st_x[sp]
            t = st_t[sp]
            mask = st_m[sp]
            lid = st_id[sp]
            k = np.searchsorted(snap_times, t, side="right")
            while mask != 0:
                t_snap = snap_times[k] if k < n_times else math.inf
                t_br = t + gen.exponential()
                t_line = s_cross if t < s_cross else math.inf
                t_end = min(t_br, t_snap, horizon, t_line)
                dt = t_end - t
                if dt > 0.0:
                    y = x + math.sqrt(dt) * gen.standard_normal()
                    order = order_early if t < s_cross else order_late
                    hp = t
                    pp = x
                    for j in range(3):
                        ln = order[j]
                        if (mask >> ln) & 1 == 0:
                            continue
                        a = pp - _line(ln, hp, rho, delta)
                        b = y - _line(ln, t_end, rho, delta)
                        rem = t_end - hp
                        if a <= 0.0:
                            h = hp
                        elif b <= 0.0 or (rem > 0.0 and gen.random() < math.exp(-2.0 * a * b / rem)):
                            h = hp + bridge_hit(gen, a, b, rem)
                        else:
                            break
                        mask &= ~(1 << ln)
                        if h > zeta[r, ln]:
                            zeta[r, ln] = h
                        pp = _line(ln, h, rho, delta)
                        hp = h
                    x = y
                    t = t_end
                if mask == 0:
                    break
                if t >= t_snap:
                    if n_s == s_pos.size:
                        s_pos = _grow_f(s_pos)
                        s_rep = _grow_i(s_rep)
                        s_idx = _grow_i(s_idx)
                        s_lin = _grow_i(s_lin)
                        s_mask = _grow_i(s_mask)
                    s_rep[n_s] = r
                    s_idx[n_s] = k
                    s_lin[n_s] = lid
                    s_mask[n_s] = mask
                    s_pos[n_s] = x
                    n_s += 1
                    k += 1
                if t >= horizon:
                    for ln in range(3):
                        if (mask >> ln) & 1:
                            alive_end[r, ln] += 1
                    break
                if t_br < t_snap and t_br < horizon and t_br < t_line:
                    if sp == st_x.size:
                        st_x = _grow_f(st_x)
                        st_t = _grow_f(st_t)
                        st_m = _grow_i(st_m)
                        st_id = _grow_i(st_id)
                    st_x[sp] = x
                    st_t[sp] = t
                    st_m[sp] = mask
                    st_id[sp] = next_id
                    next_id += 1
                    sp += 1
                    created += 1
                    if created > max_created:
                        status[r] = CENSOR_POPULATION
                        sp = 0
                        break
        if status[r] != CENSOR_NONE:
            n_s = mark
    return (
        zeta,
        alive_end,
        status,
        s_rep[:n_s].copy(),
        s_idx[:n_s].copy(),
        s_lin[:n_s].copy(),
        s_mask[:n_s].copy(),
        s_pos[:n_s].copy(),
    )


@nb.njit(**_JIT)
def bessel_points(gen, start, times):
    """Bessel(3) values at sorted ``times >= 0`` as the norm of 3-d Brownian motion."""
    out = np.empty(times.size)
    p0, p1, p2 = start, 0.0, 0.0
    t = 0.0
    for i in range(times.size):
        h = times[i] - t
        if h > 0.0:
            sd = math.sqrt(h)
            p0 += sd * gen.standard_normal()
            p1 += sd * gen.standard_normal()
            p2 += sd * gen.standard_normal()
            t = times[i]
        out[i] = math.sqrt(p0 * p0 + p1 * p1 + p2 * p2)
    return out


@nb.njit(**_JIT)
def bessel_bridge_points(gen, z, x, length, times):
    """Bessel(3) bridge from ``z`` to ``x`` over ``[0, length]`` at sorted ``times``.

    Norm of a 3-d Brownian bridge from ``(z, 0, 0)`` to a point of norm ``x``
    whose direction is von Mises-Fisher with concentration ``z x / length``.
    """
    kappa = z * x / length
    u = gen.random()
    if kappa < 1e-12:
        w = 2.0 * u - 1.0
    else:
        w = 1.0 + math.log(u + (1.0 - u) * math.exp(-2.0 * kappa)) / kappa
        w = min(1.0, max(-1.0, w))
    phi = 2.0 * math.pi * gen.random()
    rr = math.sqrt(max(0.0, 1.0 - w * w))
    e0, e1, e2 = x * w, x * rr * math.cos(phi), x * rr * math.sin(phi)
    c0, c1, c2 = z, 0.0, 0.0
    ct = 0.0
    out = np.empty(times.size)
    for i in range(times.size):
        h = times[i] - ct
        rem = length - ct
        if h > 0.0:
            f = h / rem
            sd = math.sqrt(max(h * (rem - h) / rem, 0.0))
            c0 = c0 + (e0 - c0) * f + sd * gen.standard_normal()
            c1 = c1 + (e1 - c1) * f + sd * gen.standard_normal()
            c2 = c2 + (e2 - c2) * f + sd * gen.standard_normal()
            ct = times[i]
        out[i] = math.sqrt(c0 * c0 + c1 * c1 + c2 * c2)
    return out


@nb.njit(**_JIT)
def tail_bound(r, T, rho, c_nodes, c_weights, u_grid):
    """Bound on the expected number of spine births after ``T`` with a survivor at time 0.

    With the spine at ``r`` at time ``T`` its later height is at most
    ``r + sqrt(u) chi`` (chi a chi-3 variable). A birth at height ``x`` run
    for time ``tau`` has at least one survivor with probability at most
    ``min(1, exp(log_mass(x, tau)))``. The
    birth rate is 2. Integrates over ``u`` on ``u_grid`` (log-trapezoid plus
    the mass below the first node) and over chi with the given quadrature.
    Returns ``inf`` if the integrand has not decayed by the last node.
    """
    nu = u_grid.size
    prev = 0.0
    total = 2.0 * u_grid[0]
    for i in range(nu):
        u = u_grid[i]
        tau = T + u
        su = math.sqrt(u)
        acc = 0.0
        for j in range(c_nodes.size):
            x = r + su * c_nodes[j]
            lb = log_mass(x, tau, rho)
            acc += c_weights[j] * (1.0 if lb >= 0.0 else math.exp(lb))
        val = 2.0 * acc * u
        if i > 0:
            total += 0.5 * (val + prev) * (math.log(u) - math.log(u_grid[i - 1]))
        prev = val
    if prev > 1e-14:
        return math.inf
    return total


@nb.njit(**_JIT)
def spine_births(gen, zs, rho, rate, t_first, growth, t_cap, c_nodes, c_weights, u_grid, tail_target):
    """Spine births for each proposal up to its adaptive horizon.

    The Bessel(3) spine is advanced between geometric checkpoints
    ``t_first * growth^k``; at each checkpoint the tail bound is evaluated at
    the current spine height and the walk stops once it is below
    ``tail_target``. Returns flat (offsets, tau, height) plus the horizon,
    the tail bound and a failure flag (``t_cap`` reached first) per proposal.
    """
    n = zs.size
    offsets = np.zeros(n + 1, dtype=np.int64)
    taus = np.empty(256)
    hs = np.empty(256)
    m = 0
    horizon = np.zeros(n)
    tail = np.zeros(n)
    failed = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        p0, p1, p2 = zs[i], 0.0, 0.0
        t = 0.0
        nxt = gen.exponential() / rate
        T = t_first
        while True:
            while nxt <= T:
                sd = math.sqrt(nxt - t)
                p0 += sd * gen.standard_normal()
                p1 += sd * gen.standard_normal()
                p2 += sd * gen.standard_normal()
                t = nxt
                if m == taus.size:
                    taus = _grow_f(taus)
                    hs = _grow_f(hs)
                taus[m] = t
                hs[m] = math.sqrt(p0 * p0 + p1 * p1 + p2 * p2)
                m += 1
                nxt = t + gen.exponential() / rate
            sd = math.sqrt(T - t)
            p0 += sd * gen.standard_normal()
            p1 += sd * gen.standard_normal()
            p2 += sd * gen.standard_normal()
            t = T
            R = math.sqrt(p0 * p0 + p1 * p1 + p2 * p2)
            g = tail_bound(R, T, rho, c_nodes, c_weights, u_grid)
            if g <= tail_target:
                tail[i] = g
                break
            if T >= t_cap:
                failed[i] = True
                tail[i] = g
                break
            T = min(T * growth, t_cap)
        horizon[i] = T
        offsets[i + 1] = m
    return offsets, taus[:m].copy(), hs[:m].copy(), horizon, tail, failed


@nb.njit(**_JIT)
def bm_spine_births(gen, x, t, n, rate):
    """Births of a driftless Brownian spine from ``x`` on ``[0, t]``, ``n`` times over.

    Returns flat (offsets, birth_time, birth_position) and the spine endpoints.
    """
    offsets = np.zeros(n + 1, dtype=np.int64)
    times = np.empty(64)
    pos = np.empty(64)
    ends = np.empty(n)
    m = 0
    for i in range(n):
        s = 0.0
        p = x
        while True:
            nxt = s + gen.exponential() / rate
            if nxt >= t:
                break
            p += math.sqrt(nxt - s) * gen.standard_normal()
            s = nxt
            if m == times.size:
                times = _grow_f(times)
                pos = _grow_f(pos)
            times[m] = s
            pos[m] = p
            m += 1
        ends[i] = p + math.sqrt(t - s) * gen.standard_normal()
        offsets[i + 1] = m
    return offsets, times[:m].copy(), pos[:m].copy(), ends


@nb.njit(**_JIT)
def bridge_spine_births(gen, z, x, length, n, rate):
    """Births at rate ``rate`` along ``n`` Bessel(3) bridges from ``z`` to ``x``.

    Returns flat (offsets, birth_time, bridge_height).
    """
    offsets = np.zeros(n + 1, dtype=np.int64)
    taus = np.empty(64)
    hs = np.empty(64)
    m = 0
    for i in range(n):
        k = 0
        s = gen.exponential() / rate
        while s < length:
            if m + k == taus.size:
                taus = _grow_f(taus)
                hs = _grow_f(hs)
            taus[m + k] = s
            k += 1
            s += gen.exponential() / rate
        if k:
            hs[m : m + k] = bessel_bridge_points(gen, z, x, length, taus[m : m + k])
        m += k
        offsets[i + 1] = m
    return offsets, taus[:m].copy(), hs[:m].copy()
