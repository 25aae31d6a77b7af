"""Hot path loops with two interchangeable backends.

Every kernel exists twice: a numba @njit(parallel) scalar-loop version and a
vectorized numpy version.  The env var QSDLAB_BACKEND picks one ("numba",
"numpy", or "auto" = numba when importable).  Both implementations follow
the same RNG counter contract: path p draws its step-k randomness in the
counter block [4k, 4k+4) of its own stream (normal pair, then the bridge
uniform) and its killing-clock exponentials in a region starting at 2**62,
so a path's randomness is a pure function of (seed, stream kind, path index,
counter).  Dead paths simply stop evaluating; nothing shifts for survivors,
results do not depend on thread count, and the two backends consume
identical uniforms (trajectories can still differ in the last ulp through
exp/log/cos library differences, so cross-backend comparisons are
statistical, not bitwise).

Absorption at 0 uses a bridge test on top of the sign check: a step from
a > 0 to b > 0 still crossed with probability exp(-2ab / (sigma_mid^2 dt)).
Without it, survival probabilities carry an O(sqrt(dt)) upward bias that is
visible at Monte Carlo scale (measured ~7 sigma at 2e5 paths for unit-vol
noise at dt = 1e-3).

Coefficient tables are sampled at y = (i*du)**2: lookup is linear in
u = sqrt(y), which is exact for sigma(y) = sqrt(y) (the square-root family
dominates the models here and its behavior near 0 controls absorption) and
clusters nodes near the absorbing end for everything else.
"""

from __future__ import annotations

import math
import os

import numpy as np

from . import _rng
from .errors import NumericError

_choice = os.environ.get("QSDLAB_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise NumericError(f"QSDLAB_BACKEND must be auto, numba or numpy, got {_choice!r}")

_HAVE_NUMBA = False
if _choice in ("auto", "numba"):
    try:
        import numba
        from numba import njit, prange
        _HAVE_NUMBA = True
    except ImportError:
        if _choice == "numba":
            raise

BACKEND = "numba" if _HAVE_NUMBA else "numpy"

# counter region for killing-clock exponentials: rebirth r draws at
# KILL_CTR + r, far above any step counter (4 * n_steps << 2**62)
KILL_CTR = np.uint64(1) << np.uint64(62)

_U64_1 = np.uint64(1)
_TWO_PI = 6.283185307179586

# outcome codes shared by all kernels
ALIVE = 0
HIT_ZERO = 1
KILLED = 2
BUDGET = 3


def set_num_threads(n):
    if BACKEND == "numba":
        numba.set_num_threads(max(1, int(n)))


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------

def _lookup_np(tab, inv_du, y):
    u = np.sqrt(np.maximum(y, 0.0))
    pos = u * inv_du
    i = np.minimum(pos.astype(np.int64), tab.shape[0] - 2)
    frac = np.minimum(pos - i, 1.0)
    return tab[i] + (tab[i + 1] - tab[i]) * frac


def _ctr_arr(n, value):
    return np.full(n, value, dtype=np.uint64)


def killed_paths_numpy(bases, y0, dt, n_steps, du, sig_tab, dri_tab, kap_tab,
                       y_top, absorb0, snap_steps, jump_bases, jump_rate,
                       jump_level, out_state, out_time, out_y, out_snap,
                       out_akill):
    n = y0.shape[0]
    inv_du = 1.0 / du
    sqrt_dt = math.sqrt(dt)
    y = y0.astype(np.float64).copy()
    a_kill = np.zeros(n)
    e_kill = _rng.exponential_at(bases, _ctr_arr(n, KILL_CTR))
    alive = np.ones(n, dtype=bool)
    out_state.fill(ALIVE)
    out_time.fill(n_steps * dt)
    out_y.fill(np.nan)
    out_snap.fill(np.nan)
    out_akill.fill(0.0)
    snap_of_step = {int(s): j for j, s in enumerate(snap_steps)}

    use_jumps = jump_rate > 0.0
    if use_jumps:
        horizon = n_steps * dt
        m = int(jump_rate * horizon + 10.0 * math.sqrt(jump_rate * horizon) + 20.0)
        ctrs = np.arange(m, dtype=np.uint64)
        gaps = _rng.exponential_at(jump_bases[:, None], ctrs[None, :]) / jump_rate
        arr_times = np.cumsum(gaps, axis=1)
        if float(arr_times[:, -1].min()) <= horizon:
            raise NumericError("jump arrival budget exhausted; raise the margin")
        jptr = np.zeros(n, dtype=np.int64)
        rows = np.arange(n)

    for k in range(n_steps):
        if not alive.any():
            break
        z = _rng.normal_at(bases, _ctr_arr(n, 4 * k))
        u_br = _rng.uniform_at(bases, _ctr_arr(n, 4 * k + 2))
        sig = _lookup_np(sig_tab, inv_du, y)
        dri = _lookup_np(dri_tab, inv_du, y)
        kap = _lookup_np(kap_tab, inv_du, y)
        y_new = y + dri * dt + sig * sqrt_dt * z
        hazard = kap * dt

        if absorb0:
            sig_mid = _lookup_np(sig_tab, inv_du, 0.5 * (y + np.maximum(y_new, 0.0)))
            var_mid = np.maximum(sig_mid * sig_mid * dt, 1e-300)
            with np.errstate(over="ignore", under="ignore"):
                p_cross = np.exp(-2.0 * y * np.maximum(y_new, 0.0) / var_mid)
            crossed = alive & ((y_new <= 0.0) | (u_br < p_cross))
        else:
            y_new = np.abs(y_new)
            crossed = np.zeros(n, dtype=bool)
        if crossed.any():
            yc, ync = y[crossed], y_new[crossed]
            theta = np.where(ync <= 0.0, yc / np.maximum(yc - ync, 1e-300),
                             yc / np.maximum(yc + np.abs(ync), 1e-300))
            killed_first = a_kill[crossed] + hazard[crossed] * theta >= e_kill[crossed]
            idx = np.flatnonzero(crossed)
            phi = (e_kill[crossed] - a_kill[crossed]) / np.maximum(hazard[crossed], 1e-300)
            out_state[idx] = np.where(killed_first, KILLED, HIT_ZERO)
            out_time[idx] = k * dt + np.where(killed_first, phi, theta) * dt
            out_akill[idx] = np.where(killed_first, e_kill[crossed],
                                      a_kill[crossed] + hazard[crossed] * theta)
            alive[idx] = False

        live = alive & ~crossed
        a_new = a_kill + hazard
        kill = live & (a_new >= e_kill)
        if kill.any():
            idx = np.flatnonzero(kill)
            phi = (e_kill[idx] - a_kill[idx]) / np.maximum(hazard[idx], 1e-300)
            out_state[idx] = KILLED
            out_time[idx] = k * dt + phi * dt
            out_akill[idx] = e_kill[idx]
            alive[idx] = False
            live = live & ~kill
        a_kill[live] = a_new[live]

        over = live & (y_new > y_top)
        if over.any():
            y_new[over] = np.minimum(np.maximum(2.0 * y_top - y_new[over], 0.0), y_top)

        if use_jumps:
            t_edge = (k + 1) * dt
            while True:
                due = live & (jptr < m)
                due[due] = arr_times[rows[due], jptr[due]] <= t_edge
                if not due.any():
                    break
                fire = due & (y_new >= jump_level)
                y_new[fire] = np.minimum(y_new[fire] + 1.0, y_top)
                jptr[due] += 1

        y[live] = y_new[live]
        j = snap_of_step.get(k + 1)
        if j is not None:
            out_snap[live, j] = y[live]

    out_y[alive] = y[alive]
    out_akill[alive] = a_kill[alive]


def fv_slice_numpy(bases, y, a_kill, e_kill, alive, step0, n_steps, dt,
                   du, sig_tab, dri_tab, kap_tab, y_top, absorb0, out_state):
    """Advance an ensemble one slice; dead particles freeze where they died.

    State arrays (y, a_kill, e_kill, alive) are updated in place; out_state
    records the outcome code of each particle at slice end.
    """
    n = y.shape[0]
    inv_du = 1.0 / du
    sqrt_dt = math.sqrt(dt)
    out_state.fill(ALIVE)
    out_state[~alive] = HIT_ZERO  # caller resamples anything nonzero

    for k in range(step0, step0 + n_steps):
        if not alive.any():
            break
        z = _rng.normal_at(bases, _ctr_arr(n, 4 * k))
        u_br = _rng.uniform_at(bases, _ctr_arr(n, 4 * k + 2))
        sig = _lookup_np(sig_tab, inv_du, y)
        dri = _lookup_np(dri_tab, inv_du, y)
        kap = _lookup_np(kap_tab, inv_du, y)
        y_new = y + dri * dt + sig * sqrt_dt * z
        hazard = kap * dt
        if absorb0:
            sig_mid = _lookup_np(sig_tab, inv_du, 0.5 * (y + np.maximum(y_new, 0.0)))
            var_mid = np.maximum(sig_mid * sig_mid * dt, 1e-300)
            with np.errstate(over="ignore", under="ignore"):
                p_cross = np.exp(-2.0 * y * np.maximum(y_new, 0.0) / var_mid)
            crossed = alive & ((y_new <= 0.0) | (u_br < p_cross))
        else:
            y_new = np.abs(y_new)
            crossed = np.zeros(n, dtype=bool)
        if crossed.any():
            yc, ync = y[crossed], y_new[crossed]
            theta = np.where(ync <= 0.0, yc / np.maximum(yc - ync, 1e-300),
                             yc / np.maximum(yc + np.abs(ync), 1e-300))
            killed_first = a_kill[crossed] + hazard[crossed] * theta >= e_kill[crossed]
            idx = np.flatnonzero(crossed)
            out_state[idx] = np.where(killed_first, KILLED, HIT_ZERO)
            alive[idx] = False
        live = alive & ~crossed
        a_new = a_kill + hazard
        kill = live & (a_new >= e_kill)
        if kill.any():
            idx = np.flatnonzero(kill)
            out_state[idx] = KILLED
            alive[idx] = False
            live = live & ~kill
        a_kill[live] = a_new[live]
        over = live & (y_new > y_top)
        if over.any():
            y_new[over] = np.minimum(np.maximum(2.0 * y_top - y_new[over], 0.0), y_top)
        y[live] = y_new[live]


def chain_paths_numpy(bases, i0, p_up, hold_mean, kill_rate, horizon,
                      snap_times, max_events, out_state, out_time, out_i,
                      out_snap):
    """Event-driven birth-death walk on states 0..N-1 with killing.

    Event ev of path p draws its holding exponential at counter 2*ev and its
    direction uniform at 2*ev + 1.  From state 0 a down move absorbs.  Paths
    exceeding max_events are flagged BUDGET.
    """
    n = i0.shape[0]
    n_snap = snap_times.shape[0]
    state = i0.astype(np.int64).copy()
    t = np.zeros(n)
    a_kill = np.zeros(n)
    e_kill = _rng.exponential_at(bases, _ctr_arr(n, KILL_CTR))
    running = np.ones(n, dtype=bool)
    ptr = np.zeros(n, dtype=np.int64)
    out_state.fill(BUDGET)
    out_time.fill(horizon)
    out_i.fill(-1)
    out_snap.fill(-1)
    rows = np.arange(n)

    def record_until(mask, t_stop, inclusive=False):
        while True:
            can = mask & (ptr < n_snap)
            if not can.any():
                break
            due = can.copy()
            if inclusive:
                due[can] = snap_times[ptr[can]] <= t_stop[can]
            else:
                due[can] = snap_times[ptr[can]] < t_stop[can]
            if not due.any():
                break
            out_snap[rows[due], ptr[due]] = state[due]
            ptr[due] += 1

    for _ev in range(max_events):
        if not running.any():
            break
        ctr = _ctr_arr(n, 2 * _ev)
        hold = hold_mean[np.maximum(state, 0)] * _rng.exponential_at(bases, ctr)
        rate = kill_rate[np.maximum(state, 0)]
        t_new = t + hold

        # hazard only accrues up to the horizon, not over the full hold
        capped = np.minimum(hold, horizon - t)
        kill = running & (rate > 0.0) & (a_kill + rate * capped >= e_kill)
        if kill.any():
            t_kill = t + (e_kill - a_kill) / np.maximum(rate, 1e-300)
            record_until(kill, t_kill)
            idx = rows[kill]
            out_state[idx] = KILLED
            out_time[idx] = t_kill[kill]
            running[kill] = False

        live = running & ~kill
        done = live & (t_new >= horizon)
        if done.any():
            record_until(done, np.full(n, horizon), inclusive=True)
            idx = rows[done]
            out_state[idx] = ALIVE
            out_time[idx] = horizon
            out_i[idx] = state[done]
            running[done] = False
            live = live & ~done

        if live.any():
            record_until(live, t_new)
            a_kill[live] += rate[live] * hold[live]
            t[live] = t_new[live]
            u = _rng.uniform_at(bases, ctr + _U64_1)
            up = live & (u < p_up[np.maximum(state, 0)])
            state[up] += 1
            down = live & ~up
            state[down] -= 1
            died = down & (state < 0)
            if died.any():
                idx = rows[died]
                out_state[idx] = HIT_ZERO
                out_time[idx] = t[died]
                running[died] = False


def besq_paths_numpy(bases, n_below, widths, am, bm, ak, bk, out_sm, out_sk,
                     out_alive, out_ztop):
    """Local-time field under the hitting rep: squared Bessel across levels.

    Z is BESQ(2) over the first n_below level cells and BESQ(0) above
    (geometric cell widths keep the cost logarithmic when the level
    coordinate spans many decades; the caller aligns the start level with a
    cell edge).  Each cell advances Z by its exact zero atom (probability
    e^{-z/2h}) plus a Wilson-Hilferty gamma draw for the positive part,
    which is exact in both the small and large z/h limits; BESQ(2) cells
    add an independent chi-square(2) term on top, so both regimes share
    draws and the field is monotone in the number of dimension-2 cells.
    Cell j contributes with hat weights z_j * a[j] + z_{j+1} * b[j]; b
    carries the first-moment mass so a cell touching 0 (where the measure
    itself may blow up but z(0) = 0) stays finite.  out_sm accumulates
    against the speed weights, out_sk against the killing weights; paths
    still positive at the top report their z so the caller can bound the
    truncated tail.
    """
    n = bases.shape[0]
    n_cells = widths.shape[0]
    z = np.zeros(n)
    sm = np.zeros(n)
    sk = np.zeros(n)
    active = np.ones(n, dtype=bool)
    for j in range(n_cells):
        if not active.any():
            break
        h = widths[j]
        z_new = z
        for r in range(2):
            h_sub = 0.5 * h
            lam = z_new / h_sub
            u = _rng.uniform_at(bases, _ctr_arr(n, 8 * j + 3 * r))
            g = _rng.normal_at(bases, _ctr_arr(n, 8 * j + 3 * r + 1))
            atom = u <= np.exp(-0.5 * lam)
            pp = np.maximum(-np.expm1(-0.5 * lam), 1e-300)
            m1 = lam / pp
            var = np.maximum((lam * lam + 4.0 * lam) / pp - m1 * m1, 1e-300)
            kk = np.maximum(m1 * m1 / var, 1e-12)
            cc = 1.0 / (9.0 * kk)
            w3 = np.maximum(1.0 - cc + g * np.sqrt(cc), 0.0)
            with np.errstate(invalid="ignore"):
                core = np.where(atom, 0.0,
                                (var / np.maximum(m1, 1e-300)) * kk * w3 ** 3)
            z_new = h_sub * core
        if j < n_below:
            u2 = _rng.uniform_at(bases, _ctr_arr(n, 8 * j + 6))
            z_new = z_new - 2.0 * h * np.log(u2)
        z_new = np.where(active, z_new, z)
        sm[active] += z[active] * am[j] + z_new[active] * bm[j]
        sk[active] += z[active] * ak[j] + z_new[active] * bk[j]
        z = z_new
        if j >= n_below:
            active &= z > 0.0
    out_sm[:] = sm
    out_sk[:] = sk
    out_alive[:] = z > 0.0
    out_ztop[:] = z


def qprocess_paths_numpy(bases, y0, dt, n_steps, du, sig_tab, dri_tab,
                         kap_tab, eta_tab, eta_max, y_top, snap_every,
                         out_snap, out_stuck):
    """Surviving-forever dynamics by tilted rejection of killed Euler steps.

    Per step, propose a killed-process transition (Euler move, bridge
    absorption at 0, kill with prob 1 - exp(-kappa dt)); dead proposals are
    rejected, live ones accepted with probability eta(y') / eta_max.  Each
    attempt consumes 8 counters in a 256-counter block per step; after 32
    rejected attempts the particle stays put for that step and out_stuck
    counts it.
    """
    n = y0.shape[0]
    inv_du = 1.0 / du
    sqrt_dt = math.sqrt(dt)
    y = y0.astype(np.float64).copy()
    out_stuck.fill(0)
    n_snap = out_snap.shape[1]
    for k in range(n_steps):
        pending = np.ones(n, dtype=bool)
        base_ctr = np.uint64(256) * np.uint64(k)
        for a in range(32):
            if not pending.any():
                break
            ids = np.flatnonzero(pending)
            c = base_ctr + np.uint64(8 * a)
            z = _rng.normal_at(bases[ids], _ctr_arr(ids.size, c))
            u_br = _rng.uniform_at(bases[ids], _ctr_arr(ids.size, c + np.uint64(2)))
            u_kill = _rng.uniform_at(bases[ids], _ctr_arr(ids.size, c + np.uint64(3)))
            u_acc = _rng.uniform_at(bases[ids], _ctr_arr(ids.size, c + np.uint64(4)))
            yy = y[ids]
            sig = _lookup_np(sig_tab, inv_du, yy)
            dri = _lookup_np(dri_tab, inv_du, yy)
            kap = _lookup_np(kap_tab, inv_du, yy)
            y_prop = yy + dri * dt + sig * sqrt_dt * z
            ok = y_prop > 0.0
            sig_mid = _lookup_np(sig_tab, inv_du, 0.5 * (yy + np.maximum(y_prop, 0.0)))
            var_mid = np.maximum(sig_mid * sig_mid * dt, 1e-300)
            with np.errstate(over="ignore", under="ignore"):
                p_cross = np.exp(-2.0 * yy * np.maximum(y_prop, 0.0) / var_mid)
            ok &= u_br >= p_cross
            y_prop = np.where(y_prop > y_top,
                              np.minimum(np.maximum(2.0 * y_top - y_prop, 0.0), y_top),
                              y_prop)
            ok &= u_kill >= 1.0 - np.exp(-kap * dt)
            eta = _lookup_np(eta_tab, inv_du, np.maximum(y_prop, 0.0))
            ok &= u_acc * eta_max <= eta
            acc = ids[ok]
            y[acc] = y_prop[ok]
            pending[acc] = False
        if pending.any():
            out_stuck[pending] += 1
        if (k + 1) % snap_every == 0:
            j = (k + 1) // snap_every - 1
            if j < n_snap:
                out_snap[:, j] = y


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:
    _NB_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
    _NB_M1 = np.uint64(0xBF58476D1CE4E5B9)
    _NB_M2 = np.uint64(0x94D049BB133111EB)
    _NB_U1 = np.uint64(1)
    _NB_SH30 = np.uint64(30)
    _NB_SH27 = np.uint64(27)
    _NB_SH31 = np.uint64(31)
    _NB_SH11 = np.uint64(11)
    _NB_INV53 = 1.0 / 9007199254740992.0

    @njit(cache=True)
    def _mx(z):
        z = (z ^ (z >> _NB_SH30)) * _NB_M1
        z = (z ^ (z >> _NB_SH27)) * _NB_M2
        return z ^ (z >> _NB_SH31)

    @njit(cache=True)
    def _unif(base, ctr):
        bits = _mx(base + _NB_GOLDEN * (ctr + _NB_U1))
        return float((bits >> _NB_SH11) + _NB_U1) * _NB_INV53

    @njit(cache=True)
    def _normal(base, ctr):
        u1 = _unif(base, ctr)
        u2 = _unif(base, ctr + _NB_U1)
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)

    @njit(cache=True)
    def _expo(base, ctr):
        return -math.log(_unif(base, ctr))

    @njit(cache=True)
    def _lk(tab, inv_du, y):
        u = math.sqrt(y) if y > 0.0 else 0.0
        pos = u * inv_du
        i = int(pos)
        if i > tab.shape[0] - 2:
            i = tab.shape[0] - 2
        frac = pos - i
        if frac > 1.0:
            frac = 1.0
        return tab[i] + (tab[i + 1] - tab[i]) * frac

    @njit(cache=True, parallel=True)
    def killed_paths_numba(bases, y0, dt, n_steps, du, sig_tab, dri_tab,
                           kap_tab, y_top, absorb0, snap_steps, jump_bases,
                           jump_rate, jump_level, out_state, out_time, out_y,
                           out_snap, out_akill):
        n = y0.shape[0]
        inv_du = 1.0 / du
        sqrt_dt = math.sqrt(dt)
        n_snap = snap_steps.shape[0]
        use_jumps = jump_rate > 0.0
        for p in prange(n):
            base = bases[p]
            y = y0[p]
            a_kill = 0.0
            e_kill = _expo(base, KILL_CTR)
            state = ALIVE
            t_end = n_steps * dt
            ptr = 0
            for j in range(n_snap):
                out_snap[p, j] = np.nan
            if use_jumps:
                jbase = jump_bases[p]
                jctr = np.uint64(0)
                next_jump = _expo(jbase, jctr) / jump_rate
            else:
                jbase = np.uint64(0)
                jctr = np.uint64(0)
                next_jump = 1e300
            for k in range(n_steps):
                z = _normal(base, np.uint64(4 * k))
                u_br = _unif(base, np.uint64(4 * k + 2))
                sig = _lk(sig_tab, inv_du, y)
                dri = _lk(dri_tab, inv_du, y)
                kap = _lk(kap_tab, inv_du, y)
                y_new = y + dri * dt + sig * sqrt_dt * z
                hazard = kap * dt
                if absorb0:
                    y_pos = y_new if y_new > 0.0 else 0.0
                    sig_mid = _lk(sig_tab, inv_du, 0.5 * (y + y_pos))
                    var_mid = max(sig_mid * sig_mid * dt, 1e-300)
                    p_cross = math.exp(-2.0 * y * y_pos / var_mid)
                    if y_new <= 0.0 or u_br < p_cross:
                        if y_new <= 0.0:
                            theta = y / max(y - y_new, 1e-300)
                        else:
                            theta = y / max(y + abs(y_new), 1e-300)
                        if hazard > 0.0 and a_kill + hazard * theta >= e_kill:
                            state = KILLED
                            t_end = k * dt + ((e_kill - a_kill) / hazard) * dt
                            a_kill = e_kill
                        else:
                            state = HIT_ZERO
                            t_end = k * dt + theta * dt
                            a_kill = a_kill + hazard * theta
                        break
                elif y_new < 0.0:
                    y_new = -y_new
                a_new = a_kill + hazard
                if a_new >= e_kill:
                    state = KILLED
                    t_end = k * dt + ((e_kill - a_kill) / max(hazard, 1e-300)) * dt
                    a_kill = e_kill
                    break
                a_kill = a_new
                if y_new > y_top:
                    y_new = 2.0 * y_top - y_new
                    if y_new < 0.0:
                        y_new = 0.0
                    if y_new > y_top:
                        y_new = y_top
                if use_jumps:
                    t_edge = (k + 1) * dt
                    while next_jump <= t_edge:
                        if y_new >= jump_level:
                            y_new = y_new + 1.0
                            if y_new > y_top:
                                y_new = y_top
                        jctr = jctr + _NB_U1
                        next_jump = next_jump + _expo(jbase, jctr) / jump_rate
                y = y_new
                if ptr < n_snap and k + 1 == snap_steps[ptr]:
                    out_snap[p, ptr] = y
                    ptr += 1
            out_state[p] = state
            out_time[p] = t_end
            out_y[p] = y if state == ALIVE else np.nan
            out_akill[p] = a_kill

    @njit(cache=True, parallel=True)
    def fv_slice_numba(bases, y, a_kill, e_kill, alive, step0, n_steps, dt,
                       du, sig_tab, dri_tab, kap_tab, y_top, absorb0,
                       out_state):
        n = y.shape[0]
        inv_du = 1.0 / du
        sqrt_dt = math.sqrt(dt)
        for p in prange(n):
            if not alive[p]:
                out_state[p] = HIT_ZERO
                continue
            base = bases[p]
            yy = y[p]
            aa = a_kill[p]
            ee = e_kill[p]
            state = ALIVE
            for k in range(step0, step0 + n_steps):
                z = _normal(base, np.uint64(4 * k))
                u_br = _unif(base, np.uint64(4 * k + 2))
                sig = _lk(sig_tab, inv_du, yy)
                dri = _lk(dri_tab, inv_du, yy)
                kap = _lk(kap_tab, inv_du, yy)
                y_new = yy + dri * dt + sig * sqrt_dt * z
                hazard = kap * dt
                if absorb0:
                    y_pos = y_new if y_new > 0.0 else 0.0
                    sig_mid = _lk(sig_tab, inv_du, 0.5 * (yy + y_pos))
                    var_mid = max(sig_mid * sig_mid * dt, 1e-300)
                    p_cross = math.exp(-2.0 * yy * y_pos / var_mid)
                    if y_new <= 0.0 or u_br < p_cross:
                        theta = yy / max(yy - y_new, 1e-300) if y_new <= 0.0 \
                            else yy / max(yy + abs(y_new), 1e-300)
                        if hazard > 0.0 and aa + hazard * theta >= ee:
                            state = KILLED
                        else:
                            state = HIT_ZERO
                        break
                elif y_new < 0.0:
                    y_new = -y_new
                a_new = aa + hazard
                if a_new >= ee:
                    state = KILLED
                    break
                aa = a_new
                if y_new > y_top:
                    y_new = 2.0 * y_top - y_new
                    if y_new < 0.0:
                        y_new = 0.0
                    if y_new > y_top:
                        y_new = y_top
                yy = y_new
            y[p] = yy
            a_kill[p] = aa
            out_state[p] = state
            if state != ALIVE:
                alive[p] = False

    @njit(cache=True, parallel=True)
    def chain_paths_numba(bases, i0, p_up, hold_mean, kill_rate, horizon,
                          snap_times, max_events, out_state, out_time, out_i,
                          out_snap):
        n = i0.shape[0]
        n_snap = snap_times.shape[0]
        for p in prange(n):
            base = bases[p]
            i = i0[p]
            t = 0.0
            a_kill = 0.0
            e_kill = _expo(base, KILL_CTR)
            ptr = 0
            state = BUDGET
            t_end = horizon
            i_end = -1
            for j in range(n_snap):
                out_snap[p, j] = -1
            for ev in range(max_events):
                hold = hold_mean[i] * _expo(base, np.uint64(2 * ev))
                rate = kill_rate[i]
                # hazard only accrues up to the horizon, not over the full hold
                capped = min(hold, horizon - t)
                if rate > 0.0 and a_kill + rate * capped >= e_kill:
                    t_kill = t + (e_kill - a_kill) / rate
                    while ptr < n_snap and snap_times[ptr] < t_kill:
                        out_snap[p, ptr] = i
                        ptr += 1
                    state = KILLED
                    t_end = t_kill
                    break
                if t + hold >= horizon:
                    while ptr < n_snap and snap_times[ptr] <= horizon:
                        out_snap[p, ptr] = i
                        ptr += 1
                    state = ALIVE
                    t_end = horizon
                    i_end = i
                    break
                a_kill += rate * hold
                t += hold
                while ptr < n_snap and snap_times[ptr] < t:
                    out_snap[p, ptr] = i
                    ptr += 1
                u = _unif(base, np.uint64(2 * ev + 1))
                if u < p_up[i]:
                    i += 1
                else:
                    i -= 1
                    if i < 0:
                        state = HIT_ZERO
                        t_end = t
                        break
            out_state[p] = state
            out_time[p] = t_end
            out_i[p] = i_end

    @njit(cache=True, parallel=True)
    def besq_paths_numba(bases, n_below, widths, am, bm, ak, bk, out_sm,
                         out_sk, out_alive, out_ztop):
        n = bases.shape[0]
        n_cells = widths.shape[0]
        for p in prange(n):
            base = bases[p]
            z = 0.0
            sm = 0.0
            sk = 0.0
            for j in range(n_cells):
                h = widths[j]
                z_new = z
                for r in range(2):
                    h_sub = 0.5 * h
                    lam = z_new / h_sub
                    u = _unif(base, np.uint64(8 * j + 3 * r))
                    if u <= math.exp(-0.5 * lam):
                        z_new = 0.0
                    else:
                        g = _normal(base, np.uint64(8 * j + 3 * r + 1))
                        pp = -math.expm1(-0.5 * lam)
                        m1 = lam / pp
                        var = (lam * lam + 4.0 * lam) / pp - m1 * m1
                        if var < 1e-300:
                            var = 1e-300
                        kk = m1 * m1 / var
                        if kk < 1e-12:
                            kk = 1e-12
                        cc = 1.0 / (9.0 * kk)
                        w3 = 1.0 - cc + g * math.sqrt(cc)
                        if w3 < 0.0:
                            w3 = 0.0
                        z_new = h_sub * (var / m1) * kk * w3 * w3 * w3
                if j < n_below:
                    u2 = _unif(base, np.uint64(8 * j + 6))
                    z_new = z_new - 2.0 * h * math.log(u2)
                sm += z * am[j] + z_new * bm[j]
                sk += z * ak[j] + z_new * bk[j]
                z = z_new
                if j >= n_below and z <= 0.0:
                    break
            out_sm[p] = sm
            out_sk[p] = sk
            out_alive[p] = z > 0.0
            out_ztop[p] = z

    @njit(cache=True, parallel=True)
    def qprocess_paths_numba(bases, y0, dt, n_steps, du, sig_tab, dri_tab,
                             kap_tab, eta_tab, eta_max, y_top, snap_every,
                             out_snap, out_stuck):
        n = y0.shape[0]
        inv_du = 1.0 / du
        sqrt_dt = math.sqrt(dt)
        n_snap = out_snap.shape[1]
        for p in prange(n):
            base = bases[p]
            y = y0[p]
            out_stuck[p] = 0
            for k in range(n_steps):
                base_ctr = np.uint64(256) * np.uint64(k)
                accepted = False
                for a in range(32):
                    c = base_ctr + np.uint64(8 * a)
                    z = _normal(base, c)
                    u_br = _unif(base, c + np.uint64(2))
                    u_kill = _unif(base, c + np.uint64(3))
                    u_acc = _unif(base, c + np.uint64(4))
                    sig = _lk(sig_tab, inv_du, y)
                    dri = _lk(dri_tab, inv_du, y)
                    kap = _lk(kap_tab, inv_du, y)
                    y_prop = y + dri * dt + sig * sqrt_dt * z
                    if y_prop <= 0.0:
                        continue
                    sig_mid = _lk(sig_tab, inv_du, 0.5 * (y + y_prop))
                    var_mid = max(sig_mid * sig_mid * dt, 1e-300)
                    if u_br < math.exp(-2.0 * y * y_prop / var_mid):
                        continue
                    if y_prop > y_top:
                        y_prop = 2.0 * y_top - y_prop
                        if y_prop < 0.0:
                            y_prop = 0.0
                        if y_prop > y_top:
                            y_prop = y_top
                    if u_kill < 1.0 - math.exp(-kap * dt):
                        continue
                    eta = _lk(eta_tab, inv_du, y_prop)
                    if u_acc * eta_max <= eta:
                        y = y_prop
                        accepted = True
                        break
                if not accepted:
                    out_stuck[p] += 1
                if (k + 1) % snap_every == 0:
                    j = (k + 1) // snap_every - 1
                    if j < n_snap:
                        out_snap[p, j] = y


_IMPL = {
    "numpy": {
        "killed_paths": killed_paths_numpy,
        "fv_slice": fv_slice_numpy,
        "chain_paths": chain_paths_numpy,
        "besq_paths": besq_paths_numpy,
        "qprocess_paths": qprocess_paths_numpy,
    },
}
if _HAVE_NUMBA:
    _IMPL["numba"] = {
        "killed_paths": killed_paths_numba,
        "fv_slice": fv_slice_numba,
        "chain_paths": chain_paths_numba,
        "besq_paths": besq_paths_numba,
        "qprocess_paths": qprocess_paths_numba,
    }

killed_paths = _IMPL[BACKEND]["killed_paths"]
fv_slice = _IMPL[BACKEND]["fv_slice"]
chain_paths = _IMPL[BACKEND]["chain_paths"]
besq_paths = _IMPL[BACKEND]["besq_paths"]
qprocess_paths = _IMPL[BACKEND]["qprocess_paths"]


def implementations():
    """Mapping backend name -> kernel dict, for the backend benchmark."""
    return {k: dict(v) for k, v in _IMPL.items()}
