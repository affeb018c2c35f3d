"""Compiled event loop for the single-server rank scheduler.

A policy reaches the kernel as a base kind plus two optional overlays:

* base: TABLE (per-class piecewise-linear curve, size-independent), or the
  closed forms SRPT (size - age), PSJF (size), SJF (size at age 0, locked
  afterwards);
* LPL quantization by a cutoff array;
* checkpoint lattice ``k * delta`` with overhead ``gamma``.

Waiting jobs never age, so their ranks are static and live in a binary heap
keyed by (band, value, id).  The served job's trajectory is piecewise linear,
so the next time anything can change is found in closed form by scanning its
pieces forward.
"""

import math

import numba
import numpy as np

TABLE, SRPT, PSJF, SJF = 0, 1, 2, 3

IDLE, SINGLE, GROUP, OVERHEAD = 0, 1, 2, 3
RECHECK, COMPLETE, CKPT, COMPLETE_CKPT = 0, 1, 2, 3

# stats slots
ST_OVERHEAD, ST_VIOLATIONS, ST_TRUNCATED, ST_EVENTS, ST_STUCK = 0, 1, 2, 3, 4
N_STATS = 5

jit = numba.njit(cache=True, nogil=True, error_model="numpy")
# helpers are inlined: array arguments to real calls cost refcount traffic
helper = numba.njit(cache=True, nogil=True, error_model="numpy", inline="always")


@helper
def _tol(x):
    return 1e-9 * max(1.0, abs(x))


# --- heap keyed by (band, value, id) ---------------------------------------

@helper
def _less(hb, hv, hi, a, b):
    if hb[a] != hb[b]:
        return hb[a] < hb[b]
    if hv[a] != hv[b]:
        return hv[a] < hv[b]
    return hi[a] < hi[b]


@helper
def _swap(hb, hv, hi, a, b):
    hb[a], hb[b] = hb[b], hb[a]
    hv[a], hv[b] = hv[b], hv[a]
    hi[a], hi[b] = hi[b], hi[a]


@helper
def heap_push(hb, hv, hi, n, band, value, jid):
    hb[n] = band
    hv[n] = value
    hi[n] = jid
    k = n
    while k > 0:
        parent = (k - 1) >> 1
        if _less(hb, hv, hi, k, parent):
            _swap(hb, hv, hi, k, parent)
            k = parent
        else:
            break
    return n + 1


@helper
def heap_pop(hb, hv, hi, n):
    """Remove the top; returns new size.  Caller reads slot 0 first."""
    n -= 1
    if n > 0:
        hb[0] = hb[n]
        hv[0] = hv[n]
        hi[0] = hi[n]
        k = 0
        while True:
            left = 2 * k + 1
            if left >= n:
                break
            m = left
            right = left + 1
            if right < n and _less(hb, hv, hi, right, left):
                m = right
            if _less(hb, hv, hi, m, k):
                _swap(hb, hv, hi, m, k)
                k = m
            else:
                break
    return n


@helper
def push_snap(hb, hv, hi, n, band, value, jid):
    """Push, snapping ``value`` onto the top's value when within tolerance,
    so that near-ties become exact ties ordered by id."""
    if n > 0 and hb[0] == band and abs(hv[0] - value) <= _tol(hv[0]):
        value = hv[0]
    return heap_push(hb, hv, hi, n, band, value, jid)


# --- rank evaluation ---------------------------------------------------------

@helper
def _table_index(ts, off, ln, x):
    key = x + _tol(x)
    lo = 0
    hi = ln
    while lo < hi:
        mid = (lo + hi) >> 1
        if ts[off + mid] <= key:
            lo = mid + 1
        else:
            hi = mid
    return lo - 1


@helper
def base_piece(kind, size, c, x, ts, tv, tsl, toff, tlen):
    """(band, value, slope, end) of the base rank just after age x."""
    if kind == TABLE:
        off = toff[c]
        ln = tlen[c]
        i = _table_index(ts, off, ln, x)
        if i < 0:
            i = 0
        end = ts[off + i + 1] if i + 1 < ln else np.inf
        return 1, tv[off + i] + tsl[off + i] * (x - ts[off + i]), tsl[off + i], end
    if kind == SRPT:
        return 1, size - x, -1.0, np.inf
    if kind == PSJF:
        return 1, size, 0.0, np.inf
    return 0, 0.0, 0.0, np.inf


@helper
def base_point(kind, size, c, x, ts, tv, tsl, toff, tlen):
    if kind == SJF:
        if x <= _tol(x):
            return 1, size
        return 0, 0.0
    b, v, s, e = base_piece(kind, size, c, x, ts, tv, tsl, toff, tlen)
    return b, v


@helper
def _count_le(cut, v):
    t = v + _tol(v)
    k = 0
    while k < cut.size and cut[k] <= t:
        k += 1
    return k


@helper
def _count_lt(cut, v):
    t = v - _tol(v)
    k = 0
    while k < cut.size and cut[k] < t:
        k += 1
    return k


@helper
def point_rank(kind, size, c, x, ts, tv, tsl, toff, tlen, cut, delta):
    if delta > 0.0:
        k = math.floor(x / delta + 0.5)
        if abs(x - k * delta) > _tol(x):
            return 0, 0.0
    b, v = base_point(kind, size, c, x, ts, tv, tsl, toff, tlen)
    if b == 1 and cut.size > 0:
        return 1, float(_count_le(cut, v) + 1)
    return b, v


@helper
def piece(kind, size, c, x, ts, tv, tsl, toff, tlen, cut, delta):
    """(band, value, slope, end, checkpoint_at_end) just after age x."""
    if delta > 0.0:
        k = math.floor((x + _tol(x)) / delta)
        return 0, 0.0, 0.0, (k + 1) * delta, True
    b, v, s, end = base_piece(kind, size, c, x, ts, tv, tsl, toff, tlen)
    if b != 1 or cut.size == 0:
        return b, v, s, end, False
    if s == 0.0:
        return 1, float(_count_le(cut, v) + 1), 0.0, end, False
    if s > 0.0:
        lv = _count_le(cut, v) + 1
        if lv - 1 < cut.size:
            cross = x + (cut[lv - 1] - v) / s
            if cross < end:
                end = cross
        return 1, float(lv), 0.0, end, False
    lv = _count_lt(cut, v) + 1
    if lv >= 2:
        cross = x + (v - cut[lv - 2]) / (-s)
        if cross < end:
            end = cross
    return 1, float(lv), 0.0, end, False


@helper
def _skip(pmx, off, ln, i, thr):
    """First piece index >= i whose maximum reaches ``thr`` (``ln`` if none).

    ``pmx[L, off + k]`` is the max over pieces k .. k + 2^L - 1."""
    k = i
    for L in range(pmx.shape[0] - 1, -1, -1):
        w = 1 << L
        if k + w <= ln and pmx[L, off + k] < thr:
            k += w
    return k


@helper
def table_scan(ts, tv, tsl, pmx, toff, tlen, c, sz, x0, have_top, tvv, tid, tage, tcls, j, ps):
    """Stop (age, kind) for a job served alone under a plain table policy."""
    off = toff[c]
    ln = tlen[c]
    i = _table_index(ts, off, ln, x0)
    if i < 0:
        i = 0
    x = x0
    first = True
    top_known = False
    top_s = 0.0
    tt = _tol(tvv)
    while True:
        s = tsl[off + i]
        v = tv[off + i] + s * (x - ts[off + i])
        end = ts[off + i + 1] if i + 1 < ln else np.inf
        if have_top and not first:
            if v > tvv + tt:
                return x, RECHECK
            if abs(v - tvv) <= tt:
                if ps:
                    if s > 0.0:
                        return x, RECHECK
                    if not top_known:
                        k = _table_index(ts, toff[tcls], tlen[tcls], tage)
                        top_s = tsl[toff[tcls] + max(k, 0)]
                        top_known = True
                    if top_s <= 0.0 and tid < j:
                        return x, RECHECK
                elif tid < j:
                    return x, RECHECK
        first = False
        lim = min(end, sz)
        if have_top and s > 0.0 and v < tvv - tt:
            cross = x + (tvv - v) / s
            if cross < lim - _tol(lim):
                return cross, RECHECK
        if sz <= end + _tol(end):
            return sz, COMPLETE
        if have_top:
            i = _skip(pmx, off, ln, i + 1, tvv - tt)
        else:
            i = ln
        if i >= ln:
            return sz, COMPLETE
        x = ts[off + i]
        if x >= sz:
            return sz, COMPLETE


# --- event loop --------------------------------------------------------------

@jit
def run(arr_t, sizes, cls, kind, ts, tv, tsl, toff, tlen, pmx, cut, delta, gamma,
        ps, horizon, comp, busy_start, busy_end, stats):
    """Simulate one arrival stream; fills ``comp`` with completion times.

    Returns the number of busy periods recorded.
    """
    n = arr_t.size
    age = np.zeros(n)
    hb = np.zeros(n, dtype=np.int64)
    hv = np.zeros(n)
    hi = np.zeros(n, dtype=np.int64)
    hn = 0
    tie = np.zeros(n, dtype=np.int64)
    grp = np.zeros(n, dtype=np.int64)
    rate = np.zeros(n)
    ng = 0
    in_sys = 0
    nbusy = 0

    t = 0.0
    ia = 0
    mode = IDLE
    cur = -1
    t_stop = np.inf
    stop_age = 0.0
    stop_kind = RECHECK
    ov_complete = False
    need_decide = False
    stuck = 0
    events = 0

    while True:
        events += 1
        next_arr = arr_t[ia] if ia < n else np.inf

        if mode == IDLE and not need_decide:
            if ia >= n:
                break
            t = next_arr
            busy_start[nbusy] = t
            j = ia
            ia += 1
            in_sys += 1
            b, v = point_rank(kind, sizes[j], cls[j], 0.0, ts, tv, tsl, toff, tlen, cut, delta)
            hn = push_snap(hb, hv, hi, hn, b, v, j)
            need_decide = True
            continue

        if not need_decide:
            if t > horizon:
                stats[ST_TRUNCATED] = 1.0
                if in_sys > 0:
                    busy_end[nbusy] = t
                    nbusy += 1
                break
            if next_arr < t_stop:
                dt = next_arr - t
                if mode == SINGLE:
                    age[cur] += dt
                elif mode == GROUP:
                    for k in range(ng):
                        age[grp[k]] += rate[k] * dt
                t = next_arr
                j = ia
                ia += 1
                in_sys += 1
                b, v = point_rank(kind, sizes[j], cls[j], 0.0, ts, tv, tsl, toff, tlen, cut, delta)
                hn = push_snap(hb, hv, hi, hn, b, v, j)
                # the stop time only depends on the top of the heap
                if mode != OVERHEAD and hi[0] == j:
                    need_decide = True
                continue

            # the served job(s) reached their stop
            dt = t_stop - t
            if dt <= 0.0:
                stuck += 1
                if stuck > 100000:
                    stats[ST_STUCK] = 1.0
                    break
            else:
                stuck = 0
            t = t_stop
            if mode == OVERHEAD:
                if ov_complete:
                    comp[cur] = t
                    in_sys -= 1
                else:
                    b, v = point_rank(kind, sizes[cur], cls[cur], age[cur], ts, tv, tsl, toff, tlen, cut, delta)
                    hn = push_snap(hb, hv, hi, hn, b, v, cur)
                mode = IDLE
                cur = -1
                need_decide = True
            elif mode == SINGLE:
                age[cur] = stop_age
                if stop_kind == COMPLETE:
                    comp[cur] = t
                    in_sys -= 1
                    mode = IDLE
                    cur = -1
                elif stop_kind == CKPT or stop_kind == COMPLETE_CKPT:
                    mode = OVERHEAD
                    ov_complete = stop_kind == COMPLETE_CKPT
                    t_stop = t + gamma
                    stats[ST_OVERHEAD] += gamma
                    if gamma > 0.0:
                        continue
                    # zero overhead: resolve immediately
                    t_stop = t
                    continue
                else:
                    b, v = point_rank(kind, sizes[cur], cls[cur], age[cur], ts, tv, tsl, toff, tlen, cut, delta)
                    hn = push_snap(hb, hv, hi, hn, b, v, cur)
                    mode = IDLE
                    cur = -1
                need_decide = True
            else:  # GROUP
                for k in range(ng):
                    j = grp[k]
                    age[j] += rate[k] * dt
                    b, v, s, end, ck = piece(kind, sizes[j], cls[j], age[j] - _tol(age[j]),
                                             ts, tv, tsl, toff, tlen, cut, delta)
                    lim = min(end, sizes[j])
                    if age[j] >= lim - 2.0 * _tol(lim):
                        age[j] = lim
                    if age[j] >= sizes[j] - _tol(sizes[j]):
                        age[j] = sizes[j]
                        comp[j] = t
                        in_sys -= 1
                    else:
                        b, v = point_rank(kind, sizes[j], cls[j], age[j], ts, tv, tsl, toff, tlen, cut, delta)
                        hn = push_snap(hb, hv, hi, hn, b, v, j)
                ng = 0
                mode = IDLE
                need_decide = True

        # --- decide who is served next ---
        need_decide = False
        keep = -1
        if mode == SINGLE:
            b, v = point_rank(kind, sizes[cur], cls[cur], age[cur], ts, tv, tsl, toff, tlen, cut, delta)
            if hn > 0 and hb[0] == b and abs(hv[0] - v) <= _tol(hv[0]):
                v = hv[0]
            if hn == 0 or b < hb[0] or (b == hb[0] and v < hv[0]):
                # still strictly best: no heap traffic
                keep = cur
            else:
                hn = heap_push(hb, hv, hi, hn, b, v, cur)
        elif mode == GROUP:
            for k in range(ng):
                j = grp[k]
                b, v = point_rank(kind, sizes[j], cls[j], age[j], ts, tv, tsl, toff, tlen, cut, delta)
                hn = push_snap(hb, hv, hi, hn, b, v, j)
        elif mode == OVERHEAD:
            # arrivals during overhead are queued; decision waits
            continue
        mode = IDLE
        cur = -1
        ng = 0
        if keep >= 0:
            mode = SINGLE
            cur = keep
        elif hn == 0:
            if in_sys == 0:
                busy_end[nbusy] = t
                nbusy += 1
            t_stop = np.inf
            continue

        if keep < 0:
            # ties are taken within tolerance: push_snap only snaps against the
            # current top, so two waiting ranks may differ by rounding
            b0 = hb[0]
            v0 = hv[0]
            tv0 = _tol(v0)
            chosen = hi[0]
            hn = heap_pop(hb, hv, hi, hn)
            if hn > 0 and hb[0] == b0 and hv[0] - v0 <= tv0:
                if b0 == 0:
                    stats[ST_VIOLATIONS] += 1.0
                if ps:
                    b, v, s, end, ck = piece(kind, sizes[chosen], cls[chosen], age[chosen],
                                             ts, tv, tsl, toff, tlen, cut, delta)
                    if s > 0.0:
                        nt = 1
                        tie[0] = chosen
                        while hn > 0 and hb[0] == b0 and hv[0] - v0 <= tv0:
                            tie[nt] = hi[0]
                            nt += 1
                            hn = heap_pop(hb, hv, hi, hn)
                        best_flat = -1
                        inv = 0.0
                        for k in range(nt):
                            j = tie[k]
                            b, v, s, end, ck = piece(kind, sizes[j], cls[j], age[j],
                                                     ts, tv, tsl, toff, tlen, cut, delta)
                            if s <= 0.0:
                                if best_flat < 0 or j < best_flat:
                                    best_flat = j
                            else:
                                grp[k] = j
                                rate[k] = 1.0 / s
                                inv += 1.0 / s
                        if best_flat < 0:
                            for k in range(nt):
                                rate[k] /= inv
                            ng = nt
                            mode = GROUP
                        else:
                            chosen = best_flat
                            for k in range(nt):
                                if tie[k] != chosen:
                                    hn = heap_push(hb, hv, hi, hn, b0, v0, tie[k])
            if mode != GROUP:
                mode = SINGLE
                cur = chosen
                if hn > 0 and hb[0] == 0:
                    stats[ST_VIOLATIONS] += 1.0

        # --- compute the stop time ---
        if mode == SINGLE and kind == TABLE and delta == 0.0 and cut.size == 0:
            have_top = hn > 0
            tid = hi[0] if have_top else 0
            stop_age, stop_kind = table_scan(ts, tv, tsl, pmx, toff, tlen, cls[cur], sizes[cur], age[cur],
                                             have_top, hv[0] if have_top else 0.0, tid, age[tid],
                                             cls[tid], cur, ps)
            t_stop = t + (stop_age - age[cur])
        elif mode == SINGLE:
            j = cur
            sz = sizes[j]
            x0 = age[j]
            x = x0
            first = True
            have_top = hn > 0
            tb = hb[0] if have_top else 0
            tvv = hv[0] if have_top else 0.0
            tid = hi[0] if have_top else 0
            top_slope_known = False
            top_s = 0.0
            while True:
                b, v, s, end, ck = piece(kind, sz, cls[j], x, ts, tv, tsl, toff, tlen, cut, delta)
                if have_top and not first:
                    if b > tb or (b == tb and v > tvv + _tol(tvv)):
                        stop_age = x
                        stop_kind = RECHECK
                        break
                    if b == tb and abs(v - tvv) <= _tol(tvv):
                        lose = False
                        if ps:
                            if s > 0.0:
                                lose = True
                            else:
                                if not top_slope_known:
                                    tb2, tv2, ts2, te2, tc2 = piece(kind, sizes[tid], cls[tid], age[tid],
                                                                    ts, tv, tsl, toff, tlen, cut, delta)
                                    top_s = ts2
                                    top_slope_known = True
                                lose = top_s <= 0.0 and tid < j
                        else:
                            lose = tid < j
                        if lose:
                            stop_age = x
                            stop_kind = RECHECK
                            break
                first = False
                lim = min(end, sz)
                if have_top and b == tb and s > 0.0 and v < tvv - _tol(tvv):
                    cross = x + (tvv - v) / s
                    if cross < lim - _tol(lim):
                        stop_age = cross
                        stop_kind = RECHECK
                        break
                if sz <= end + _tol(end):
                    stop_age = sz
                    if ck and abs(sz - end) <= _tol(end):
                        stop_kind = COMPLETE_CKPT
                    else:
                        stop_kind = COMPLETE
                    break
                if ck:
                    stop_age = end
                    stop_kind = CKPT
                    break
                x = end
            t_stop = t + (stop_age - x0)
        else:
            dt_min = np.inf
            inv = 0.0
            gv = 0.0
            for k in range(ng):
                j = grp[k]
                b, v, s, end, ck = piece(kind, sizes[j], cls[j], age[j], ts, tv, tsl, toff, tlen, cut, delta)
                lim = min(end, sizes[j])
                d = (lim - age[j]) / rate[k]
                if d < dt_min:
                    dt_min = d
                inv += 1.0 / s
                gv = v
            if hn > 0 and hb[0] == 1 and hv[0] > gv + _tol(gv):
                d = (hv[0] - gv) * inv
                if d < dt_min:
                    dt_min = d
            t_stop = t + dt_min

    stats[ST_EVENTS] = events
    for j in range(n):
        if age[j] > sizes[j] + _tol(sizes[j]):
            stats[ST_VIOLATIONS] += 1.0
    return nbusy
