"""Compiled inner loops for forest training, prediction and importance.

The tree grower works on per-feature rank codes with the class label
folded into the low bit (``cc = 2 * code + label``), so split search is
a histogram fill plus a scan over occupied (code, class) bins;
candidate thresholds are midpoints between consecutive distinct values
present in the node, exactly as a sort-based search would produce.
Split quality is compared with exact int64 arithmetic (sums of squared
class counts), so tie-breaking never depends on floating-point
rounding.

Internal bounded draws use Lemire's nearly-divisionless rejection
method; it is unbiased and deterministic but consumes the stream
differently from the public rng.Stream.randbelow, which keeps the
documented modulo-rejection form. Nothing reconstructs kernel draw
sequences from outside: bootstraps are exposed as per-row count arrays.

Per-tree node layout is padded 2-d: ``nav[t, i] = (feature, left,
right, aux)`` where aux is the leaf class at leaves (feature == -1) and
the split code threshold (``2 * code + 1``, so ``cc <= aux`` routes
left regardless of the label bit) at internal nodes. `thr` carries the
float threshold in original feature units for out-of-sample rows.
Child ids are tree-local.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

U64 = np.uint64
GOLDEN = U64(0x9E3779B97F4A7C15)
_MUL1 = U64(0xBF58476D1CE4E5B9)
_MUL2 = U64(0x94D049BB133111EB)
_S30 = U64(30)
_S27 = U64(27)
_S31 = U64(31)
_S32 = U64(32)
_LOW32 = U64(0xFFFFFFFF)

LEAF = np.int32(-1)


@njit(cache=True, inline="always")
def _sm64(state):
    """One splitmix64 step; returns (new_state, output), both uint64."""
    state = state + GOLDEN
    z = state
    z = (z ^ (z >> _S30)) * _MUL1
    z = (z ^ (z >> _S27)) * _MUL2
    z = z ^ (z >> _S31)
    return state, z


@njit(cache=True, inline="always")
def _mix64(base, index, salt):
    mixed = base ^ (U64(index) * GOLDEN + U64(salt))
    _, value = _sm64(mixed)
    return value


@njit(cache=True, inline="always")
def _randbelow(state, n):
    """Unbiased draw from [0, n) for n < 2**32; returns (state, value)."""
    un = U64(n)
    state, v = _sm64(state)
    m_lo = v * un
    if m_lo < un:
        threshold = (U64(0) - un) % un
        while m_lo < threshold:
            state, v = _sm64(state)
            m_lo = v * un
    a = v >> _S32
    b = v & _LOW32
    hi = (a * un + ((b * un) >> _S32)) >> _S32
    return state, np.int64(hi)


@njit(cache=True)
def mix64_kernel(base, index, salt):
    """Python-visible wrapper used for cross-checking against rng.mix_seed."""
    return _mix64(U64(base), index, salt)


@njit(cache=True)
def bounded_draws(seed, bound, count):
    """First ``count`` bounded draws of a kernel stream (test helper)."""
    out = np.empty(count, dtype=np.int64)
    state = U64(seed)
    for i in range(count):
        state, v = _randbelow(state, bound)
        out[i] = v
    return out


@njit(cache=True)
def _grow_tree(
    seed,
    cc,
    y,
    bin_offsets,
    bin_values,
    mtry,
    min_node_size,
    max_depth,
    nav,
    thr,
    count0,
    count1,
    mdi,
    inbag,
    rows,
    stack,
    feat_perm,
    hist,
    sort_keys,
):
    n = cc.shape[0]
    p = cc.shape[1]
    stripe = hist.shape[0] // mtry  # per-feature histogram stripe (2 * max_bins)
    state = U64(seed)

    for j in range(p):
        mdi[j] = 0.0
    for i in range(n):
        inbag[i] = 0

    # bootstrap sample, same size as the training set; the tree then
    # works on distinct rows weighted by their bootstrap multiplicity
    for i in range(n):
        state, idx = _randbelow(state, n)
        inbag[idx] += 1
    root_c0 = np.int64(0)
    m_rows = 0
    for r in range(n):
        w = np.int64(inbag[r])
        if w > 0:
            rows[m_rows] = np.int32(r)
            m_rows += 1
            if y[r] == 0:
                root_c0 += w
    inv_n = 1.0 / n

    for j in range(p):
        feat_perm[j] = j

    n_nodes = 0
    # stack rows: start, end, depth, parent, is_left, c0, c1
    # (start/end index distinct rows; c0/c1 are bootstrap-weighted counts)
    stack[0, 0] = 0
    stack[0, 1] = m_rows
    stack[0, 2] = 0
    stack[0, 3] = -1
    stack[0, 4] = 0
    stack[0, 5] = root_c0
    stack[0, 6] = n - root_c0
    top = 1

    while top > 0:
        top -= 1
        start = stack[top, 0]
        end = stack[top, 1]
        depth = stack[top, 2]
        parent = stack[top, 3]
        is_left = stack[top, 4]
        c0 = stack[top, 5]
        c1 = stack[top, 6]
        n_node = c0 + c1  # bootstrap-weighted size
        n_distinct = end - start

        node_id = n_nodes
        n_nodes += 1
        count0[node_id] = c0
        count1[node_id] = c1
        if parent >= 0:
            if is_left == 1:
                nav[parent, 1] = np.int32(node_id)
            else:
                nav[parent, 2] = np.int32(node_id)

        best_found = False
        best_num = np.int64(0)
        best_den = np.int64(1)
        best_feat = -1
        best_cc = np.int64(-1)  # split as a cc bound: 2 * code + 1
        best_thr = 0.0
        best_lc0 = np.int64(0)
        best_lc1 = np.int64(0)

        if not (c0 == 0 or c1 == 0 or n_node <= min_node_size or depth >= max_depth):
            # fresh random mtry-subset of features (partial Fisher-Yates)
            for i in range(mtry):
                state, j = _randbelow(state, p - i)
                tmp = feat_perm[i]
                feat_perm[i] = feat_perm[i + j]
                feat_perm[i + j] = tmp

            # features cheap enough for the histogram path come first and
            # are filled in one fused pass over the node's rows
            n_hist = 0
            for fi in range(mtry):
                f = feat_perm[fi]
                width = np.int64(2 * (bin_offsets[f + 1] - bin_offsets[f]))
                if width <= stripe and (width <= 128 or width <= 8 * n_distinct):
                    tmp = feat_perm[n_hist]
                    feat_perm[n_hist] = f
                    feat_perm[fi] = tmp
                    n_hist += 1
            for fi in range(n_hist):
                f = feat_perm[fi]
                base = fi * stripe
                width = np.int64(2 * (bin_offsets[f + 1] - bin_offsets[f]))
                for b in range(width):
                    hist[base + b] = 0
            if n_hist == 1:
                f0 = feat_perm[0]
                for i in range(start, end):
                    r = rows[i]
                    hist[np.int64(cc[r, f0])] += np.int32(inbag[r])
            elif n_hist == 2:
                f0 = feat_perm[0]
                f1 = feat_perm[1]
                for i in range(start, end):
                    r = rows[i]
                    w = np.int32(inbag[r])
                    hist[np.int64(cc[r, f0])] += w
                    hist[stripe + np.int64(cc[r, f1])] += w
            elif n_hist == 3:
                f0 = feat_perm[0]
                f1 = feat_perm[1]
                f2 = feat_perm[2]
                for i in range(start, end):
                    r = rows[i]
                    w = np.int32(inbag[r])
                    hist[np.int64(cc[r, f0])] += w
                    hist[stripe + np.int64(cc[r, f1])] += w
                    hist[2 * stripe + np.int64(cc[r, f2])] += w
            elif n_hist > 3:
                for i in range(start, end):
                    r = rows[i]
                    w = np.int32(inbag[r])
                    for fi in range(n_hist):
                        hist[fi * stripe + np.int64(cc[r, feat_perm[fi]])] += w

            for fi in range(mtry):
                f = feat_perm[fi]
                off = bin_offsets[f]
                n_bins = np.int64(bin_offsets[f + 1] - off)

                f_found = False
                f_num = np.int64(0)
                f_den = np.int64(1)
                f_cc = np.int64(-1)
                f_thr = 0.0
                f_lc0 = np.int64(0)
                f_lc1 = np.int64(0)

                if fi < n_hist:
                    base = fi * stripe
                    acc0 = np.int64(0)
                    acc1 = np.int64(0)
                    prev_bin = np.int64(-1)
                    for b in range(n_bins):
                        h0 = np.int64(hist[base + 2 * b])
                        h1 = np.int64(hist[base + 2 * b + 1])
                        if h0 == 0 and h1 == 0:
                            continue
                        if prev_bin >= 0:
                            # candidate: left = bins <= prev_bin
                            n_l = acc0 + acc1
                            n_r = n_node - n_l
                            s_l = acc0 * acc0 + acc1 * acc1
                            rc0 = c0 - acc0
                            rc1 = c1 - acc1
                            s_r = rc0 * rc0 + rc1 * rc1
                            num = s_l * n_r + s_r * n_l
                            den = n_l * n_r
                            if (not f_found) or num * f_den > f_num * den:
                                f_found = True
                                f_num = num
                                f_den = den
                                f_cc = 2 * prev_bin + 1
                                v1 = bin_values[off + prev_bin]
                                v2 = bin_values[off + b]
                                t_mid = 0.5 * (v1 + v2)
                                if t_mid >= v2:
                                    t_mid = v1
                                f_thr = t_mid
                                f_lc0 = acc0
                                f_lc1 = acc1
                        acc0 += h0
                        acc1 += h1
                        prev_bin = np.int64(b)
                else:
                    # sort path: key packs ((code, class), weight); sorting
                    # groups equal (code, class) runs, weights summed in-scan
                    m = 0
                    for i in range(start, end):
                        r = rows[i]
                        sort_keys[m] = (np.int64(cc[r, f]) << 16) | np.int64(inbag[r])
                        m += 1
                    seg = np.sort(sort_keys[:m])
                    acc0 = np.int64(0)
                    acc1 = np.int64(0)
                    prev_code = np.int64(-1)
                    run0 = np.int64(0)
                    run1 = np.int64(0)
                    for i in range(m + 1):
                        if i < m:
                            code = seg[i] >> 17
                            cls = (seg[i] >> 16) & 1
                        else:
                            code = np.int64(-2)
                            cls = np.int64(0)
                        if code != prev_code:
                            if prev_code >= 0:
                                acc0 += run0
                                acc1 += run1
                                if i < m:
                                    n_l = acc0 + acc1
                                    n_r = n_node - n_l
                                    s_l = acc0 * acc0 + acc1 * acc1
                                    rc0 = c0 - acc0
                                    rc1 = c1 - acc1
                                    s_r = rc0 * rc0 + rc1 * rc1
                                    num = s_l * n_r + s_r * n_l
                                    den = n_l * n_r
                                    if (not f_found) or num * f_den > f_num * den:
                                        f_found = True
                                        f_num = num
                                        f_den = den
                                        f_cc = 2 * prev_code + 1
                                        v1 = bin_values[off + prev_code]
                                        v2 = bin_values[off + code]
                                        t_mid = 0.5 * (v1 + v2)
                                        if t_mid >= v2:
                                            t_mid = v1
                                        f_thr = t_mid
                                        f_lc0 = acc0
                                        f_lc1 = acc1
                            run0 = np.int64(0)
                            run1 = np.int64(0)
                            prev_code = code
                        if i < m:
                            if cls == 0:
                                run0 += seg[i] & 0xFFFF
                            else:
                                run1 += seg[i] & 0xFFFF

                if f_found:
                    # higher score wins; gain ties go to the lower feature
                    # index (the lower threshold already won in-scan)
                    better = False
                    if not best_found:
                        better = True
                    else:
                        lhs = f_num * best_den
                        rhs = best_num * f_den
                        if lhs > rhs:
                            better = True
                        elif lhs == rhs and f < best_feat:
                            better = True
                    if better:
                        best_found = True
                        best_num = f_num
                        best_den = f_den
                        best_feat = f
                        best_cc = f_cc
                        best_thr = f_thr
                        best_lc0 = f_lc0
                        best_lc1 = f_lc1

        if not best_found:
            nav[node_id, 0] = LEAF
            nav[node_id, 1] = np.int32(-1)
            nav[node_id, 2] = np.int32(-1)
            # majority class of the training rows here; tie -> class 0
            nav[node_id, 3] = np.int32(0) if c0 >= c1 else np.int32(1)
            thr[node_id] = 0.0
            continue

        nav[node_id, 0] = np.int32(best_feat)
        nav[node_id, 3] = np.int32(best_cc)
        thr[node_id] = best_thr

        # weighted impurity decrease, normalized by the bootstrap size
        n_l = best_lc0 + best_lc1
        n_r = n_node - n_l
        s_l = best_lc0 * best_lc0 + best_lc1 * best_lc1
        rc0 = c0 - best_lc0
        rc1 = c1 - best_lc1
        s_r = rc0 * rc0 + rc1 * rc1
        s_p = c0 * c0 + c1 * c1
        mdi[best_feat] += (s_l / n_l + s_r / n_r - s_p / n_node) * inv_n

        # in-place partition by cc <= best_cc
        i = start
        j = end - 1
        while i <= j:
            if np.int64(cc[rows[i], best_feat]) <= best_cc:
                i += 1
            else:
                tmp32 = rows[i]
                rows[i] = rows[j]
                rows[j] = tmp32
                j -= 1
        mid = i

        # right first so the left child is processed (and numbered) first
        stack[top, 0] = mid
        stack[top, 1] = end
        stack[top, 2] = depth + 1
        stack[top, 3] = node_id
        stack[top, 4] = 0
        stack[top, 5] = c0 - best_lc0
        stack[top, 6] = c1 - best_lc1
        top += 1
        stack[top, 0] = start
        stack[top, 1] = mid
        stack[top, 2] = depth + 1
        stack[top, 3] = node_id
        stack[top, 4] = 1
        stack[top, 5] = best_lc0
        stack[top, 6] = best_lc1
        top += 1

    return n_nodes


@njit(cache=True, inline="always")
def _tree_predict_padded(nav_t, thr_t, x):
    """Route an out-of-sample row by float thresholds."""
    nid = np.int64(0)
    while nav_t[nid, 0] != LEAF:
        if x[nav_t[nid, 0]] <= thr_t[nid]:
            nid = np.int64(nav_t[nid, 1])
        else:
            nid = np.int64(nav_t[nid, 2])
    return nav_t[nid, 3]


@njit(cache=True, inline="always")
def _tree_predict_cc(nav_t, cc_row):
    """Route a training row by its integer codes."""
    nid = np.int64(0)
    while nav_t[nid, 0] != LEAF:
        if np.int64(cc_row[nav_t[nid, 0]]) <= np.int64(nav_t[nid, 3]):
            nid = np.int64(nav_t[nid, 1])
        else:
            nid = np.int64(nav_t[nid, 2])
    return nid


@njit(cache=True, parallel=True)
def train_forest_kernel(
    cc,
    y,
    bin_offsets,
    bin_values,
    holdout_X,
    n_trees,
    mtry,
    min_node_size,
    max_depth,
    forest_seed,
    nav,
    thr,
    count0,
    count1,
    n_nodes_out,
    mdi_out,
    inbag,
    holdout_pred,
    ws_rows,
    ws_stack,
    ws_perm,
    ws_hist,
    ws_keys,
):
    """Grow all trees; also record per-tree predictions for holdout rows
    (pass a (0, p) holdout to skip)."""
    for t in prange(n_trees):
        seed = _mix64(forest_seed, t, 0)
        n_nodes_out[t] = _grow_tree(
            seed,
            cc,
            y,
            bin_offsets,
            bin_values,
            mtry,
            min_node_size,
            max_depth,
            nav[t],
            thr[t],
            count0[t],
            count1[t],
            mdi_out[t],
            inbag[t],
            ws_rows[t],
            ws_stack[t],
            ws_perm[t],
            ws_hist[t],
            ws_keys[t],
        )
        for hr in range(holdout_X.shape[0]):
            holdout_pred[t, hr] = _tree_predict_padded(nav[t], thr[t], holdout_X[hr])


@njit(cache=True, inline="always")
def _tree_predict_cc_override(nav_t, cc_row, start, j, cj):
    """Route a training row by codes with feature j's cc value replaced."""
    nid = np.int64(start)
    while nav_t[nid, 0] != LEAF:
        f = nav_t[nid, 0]
        c = cj if f == j else np.int64(cc_row[f])
        if c <= np.int64(nav_t[nid, 3]):
            nid = np.int64(nav_t[nid, 1])
        else:
            nid = np.int64(nav_t[nid, 2])
    return nav_t[nid, 3]


@njit(cache=True, inline="always")
def _tree_importance(nav_t, cc, y, oob, perm, k, dec_row, chg_f, chg_cls):
    """Accuracy-decrease tallies for one tree under one OOB permutation.

    Walks each OOB row's path once. Whenever the path first tests a
    feature whose donor code (from the permutation partner row)
    differs, the subtree below that node is re-walked with the donor
    value to get the permuted prediction; rows that never test a
    feature, or draw an equal code, keep the unpermuted prediction.
    Exact, not an approximation. On return ``dec_row[f]`` holds the sum
    over rows of (base correct - permuted correct) for feature f; the
    function returns the unpermuted correct count.
    """
    base_correct = 0
    for ii in range(k):
        r = oob[ii]
        dr = oob[perm[ii]]
        cc_r = cc[r]
        cc_d = cc[dr]
        seen = U64(0)
        nid = np.int64(0)
        n_changed = 0
        while nav_t[nid, 0] != LEAF:
            f = nav_t[nid, 0]
            if f < 64:
                fbit = U64(1) << U64(f)
                first = seen & fbit == U64(0)
                seen |= fbit
            else:
                # wide data: dedupe against the changed list instead of
                # the bitmask (repeat equal-code tests are harmless)
                first = True
                for q in range(n_changed):
                    if chg_f[q] == f:
                        first = False
                        break
            if first:
                cd = np.int64(cc_d[f])
                # equal code -> identical routing; the label bit is
                # ignored by <= against odd split bounds
                if (cd >> 1) != (np.int64(cc_r[f]) >> 1):
                    chg_f[n_changed] = np.int32(f)
                    chg_cls[n_changed] = np.int8(
                        _tree_predict_cc_override(nav_t, cc_r, nid, f, cd)
                    )
                    n_changed += 1
            if np.int64(cc_r[f]) <= np.int64(nav_t[nid, 3]):
                nid = np.int64(nav_t[nid, 1])
            else:
                nid = np.int64(nav_t[nid, 2])
        ok = nav_t[nid, 3] == y[r]
        if ok:
            base_correct += 1
        for q in range(n_changed):
            ok_perm = chg_cls[q] == y[r]
            if ok and not ok_perm:
                dec_row[chg_f[q]] += 1.0
            elif ok_perm and not ok:
                dec_row[chg_f[q]] -= 1.0
    return base_correct


@njit(cache=True, inline="always")
def _fill_oob_and_perm(inbag_t, imp_seed, t, oob, perm):
    """Collect a tree's OOB rows and one permutation of them."""
    n = inbag_t.shape[0]
    k = 0
    for r in range(n):
        if inbag_t[r] == 0:
            oob[k] = r
            k += 1
    state = U64(_mix64(imp_seed, t, 0))
    for ii in range(k):
        perm[ii] = ii
    for ii in range(k - 1, 0, -1):
        state, d = _randbelow(state, ii + 1)
        tmp = perm[ii]
        perm[ii] = perm[d]
        perm[d] = tmp
    return k


@njit(cache=True, parallel=True)
def oob_importance_kernel(
    nav,
    thr,
    cc,
    y,
    inbag,
    imp_seed,
    decreases,
    oob_counts,
    ws_oob,
    ws_perm,
    ws_chg_f,
    ws_chg_cls,
):
    """Permutation importance over each tree's out-of-bag rows.

    One permutation of the tree's OOB rows (stream seeded per tree)
    supplies the donor values for every feature. Paths testing more
    than 64 distinct features stop tracking first occurrences, which is
    safe because trees never reach that depth before running out of
    distinct rows at spec-scale feature counts.
    """
    n_trees = nav.shape[0]
    p = cc.shape[1]
    for t in prange(n_trees):
        dec_row = decreases[t]
        for j in range(p):
            dec_row[j] = 0.0
        k = _fill_oob_and_perm(inbag[t], imp_seed, t, ws_oob[t], ws_perm[t])
        oob_counts[t] = k
        if k == 0:
            continue
        chg_f = ws_chg_f[t]
        chg_cls = ws_chg_cls[t]
        _tree_importance(
            nav[t], cc, y, ws_oob[t], ws_perm[t], k, dec_row, chg_f, chg_cls
        )
        inv_k = 1.0 / k
        for j in range(p):
            dec_row[j] *= inv_k


@njit(cache=True, parallel=True)
def predict_kernel(nav, thr, X, out):
    """Majority vote over all trees; exact tie -> class 0."""
    n_trees = nav.shape[0]
    for r in prange(X.shape[0]):
        votes1 = 0
        x = X[r]
        for t in range(n_trees):
            votes1 += _tree_predict_padded(nav[t], thr[t], x)
        out[r] = 1 if 2 * votes1 > n_trees else 0


@njit(cache=True)
def oob_votes_kernel(nav, thr, cc, inbag, votes):
    """Per-row class votes over the trees where the row is out-of-bag."""
    n_trees = nav.shape[0]
    n = cc.shape[0]
    for t in range(n_trees):
        nav_t = nav[t]
        for r in range(n):
            if inbag[t, r] != 0:
                continue
            nid = _tree_predict_cc(nav_t, cc[r])
            votes[r, nav_t[nid, 3]] += 1


@njit(cache=True, parallel=True)
def trial_kernel(
    cc,
    y,
    bin_offsets,
    bin_values,
    holdout_X,
    holdout_y,
    n_trees,
    mtry,
    min_node_size,
    max_depth,
    forest_seed,
    imp_seed,
    want_oob_importance,
    nav,
    thr,
    count0,
    count1,
    n_nodes_out,
    mdi_out,
    inbag,
    holdout_pred,
    decreases,
    oob_counts,
    ws_rows,
    ws_stack,
    ws_perm,
    ws_hist,
    ws_keys,
    ws_oob,
    ws_pe,
    ws_chg_f,
    ws_chg_cls,
    out,
):
    """One seeded trial: train, score the holdout, and (only when every
    holdout row is correct) compute permutation importance.

    ``out[0]`` is the correctness flag; ``holdout_pred`` row 0 receives
    the voted class per holdout row. All result and scratch arrays are
    caller-owned, so a trial loop allocates nothing per call.
    """
    p = cc.shape[1]
    for t in prange(n_trees):
        seed = _mix64(forest_seed, t, 0)
        n_nodes_out[t] = _grow_tree(
            seed,
            cc,
            y,
            bin_offsets,
            bin_values,
            mtry,
            min_node_size,
            max_depth,
            nav[t],
            thr[t],
            count0[t],
            count1[t],
            mdi_out[t],
            inbag[t],
            ws_rows[t],
            ws_stack[t],
            ws_perm[t],
            ws_hist[t],
            ws_keys[t],
        )
        for hr in range(holdout_X.shape[0]):
            holdout_pred[t, hr] = _tree_predict_padded(nav[t], thr[t], holdout_X[hr])

    # majority vote per holdout row; the trial is correct only if every
    # holdout row is right
    correct = True
    for hr in range(holdout_X.shape[0]):
        votes1 = 0
        for t in range(n_trees):
            votes1 += holdout_pred[t, hr]
        cls = 1 if 2 * votes1 > n_trees else 0
        holdout_pred[0, hr] = np.int8(cls)
        if cls != holdout_y[hr]:
            correct = False
    out[0] = 1 if correct else 0

    if correct and want_oob_importance:
        for t in prange(n_trees):
            dec_row = decreases[t]
            for j in range(p):
                dec_row[j] = 0.0
            k = _fill_oob_and_perm(inbag[t], imp_seed, t, ws_oob[t], ws_pe[t])
            oob_counts[t] = k
            if k == 0:
                continue
            _tree_importance(
                nav[t], cc, y, ws_oob[t], ws_pe[t], k, dec_row, ws_chg_f[t], ws_chg_cls[t]
            )
            inv_k = 1.0 / k
            for j in range(p):
                dec_row[j] *= inv_k
