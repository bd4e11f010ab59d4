#!/usr/bin/env python3
"""Generate the shipped quasi-cyclic LDPC parity matrices.

Deterministic construction, no RNG: circulant permutation blocks of size
Z = 100 on small base matrices, shift s(i, j) = (i * j) mod Z.  With these
base sizes every 2x2 filled minor satisfies (i1-i2)*(j1-j2) != 0 (mod Z),
so the Tanner graph has no 4-cycles.

Base patterns are chosen so the block-row sum vectors are linearly
independent over GF(2); an all-filled base would force rank deficiency
(each block-row sums to the all-ones vector).  Full row rank is verified
before anything is written.

Outputs alist files under assets/codes/ (MacKay padded format).  The files
are committed; rerunning this script must reproduce them byte for byte.
"""

import os
import sys

Z = 100

def incidence_rank(base_cols, n_block_rows):
    rows = [0] * n_block_rows
    for j, pattern in enumerate(base_cols):
        for i in pattern:
            rows[i] |= 1 << j
    return gf2_rank_words(rows)


def gf2_rank_words(words):
    pivots = {}
    rank = 0
    for acc in words:
        while acc:
            lead = acc.bit_length() - 1
            if lead in pivots:
                acc ^= pivots[lead]
            else:
                pivots[lead] = acc
                rank += 1
                break
    return rank


def pick_r12_columns():
    """12 weight-3 columns over 6 block-rows, each block-row used 6 times,
    with full-rank block-row incidence (necessary for full-rank H: shifts
    cannot repair the x = 1 spectral component).  Deterministic greedy."""
    from itertools import combinations
    subsets = list(combinations(range(6), 3))
    chosen = []
    counts = [0] * 6

    def feasible(pattern):
        return all(counts[i] < 6 for i in pattern)

    def backtrack():
        if len(chosen) == 12:
            return incidence_rank(chosen, 6) == 6
        for pattern in subsets:
            if feasible(pattern):
                chosen.append(pattern)
                for i in pattern:
                    counts[i] += 1
                if backtrack():
                    return True
                for i in pattern:
                    counts[i] -= 1
                chosen.pop()
        return False

    if not backtrack():
        raise RuntimeError("no balanced full-rank column pattern")
    return list(chosen)


COLS_R12 = pick_r12_columns()

# rate 3/4: 3x12 base, all-filled except two weight-2 columns that break the
# forced rank deficiency
COLS_R34 = [(0, 1), (0, 2)] + [(0, 1, 2)] * 10


def base_shifts(base_cols, n_block_rows):
    return {(bi, bj): (bi * bj) % Z
            for bj, pattern in enumerate(base_cols) for bi in pattern}


def build_h(shifts, n_cols, n_block_rows):
    n = Z * n_cols
    m = Z * n_block_rows
    # row r of H as a set of column indices
    rows = [set() for _ in range(m)]
    for (bi, bj), shift in shifts.items():
        for r in range(Z):
            # circulant P_s: entry (r, (r + s) mod Z)
            rows[bi * Z + r].add(bj * Z + (r + shift) % Z)
    return rows, m, n


def gf2_rank(rows, n):
    pivots = {}
    rank = 0
    for row in rows:
        acc = 0
        for c in row:
            acc |= 1 << c
        while acc:
            lead = acc.bit_length() - 1
            if lead in pivots:
                acc ^= pivots[lead]
            else:
                pivots[lead] = acc
                rank += 1
                break
    return rank


def check_no_four_cycles(shifts, n_cols, n_block_rows):
    for i1 in range(n_block_rows):
        for i2 in range(i1 + 1, n_block_rows):
            diffs = set()
            for j in range(n_cols):
                if (i1, j) in shifts and (i2, j) in shifts:
                    d = (shifts[(i1, j)] - shifts[(i2, j)]) % Z
                    if d in diffs:
                        return False
                    diffs.add(d)
    return True


def write_alist(path, rows, m, n):
    cols = [[] for _ in range(n)]
    for r, cs in enumerate(rows):
        for c in sorted(cs):
            cols[c].append(r)
    col_w = [len(c) for c in cols]
    row_w = [len(r) for r in rows]
    mx_c, mx_r = max(col_w), max(row_w)
    lines = [f"{n} {m}", f"{mx_c} {mx_r}",
             " ".join(map(str, col_w)), " ".join(map(str, row_w))]
    for c in cols:
        ids = [str(r + 1) for r in c] + ["0"] * (mx_c - len(c))
        lines.append(" ".join(ids))
    for r in rows:
        ids = [str(c + 1) for c in sorted(r)] + ["0"] * (mx_r - len(r))
        lines.append(" ".join(ids))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def repair_rank(shifts, n_cols, n_block_rows):
    """First single-shift perturbation (deterministic order) that reaches
    full rank while keeping the graph 4-cycle free."""
    rows, m, _ = build_h(shifts, n_cols, n_block_rows)
    if gf2_rank(rows, Z * n_cols) == m:
        return shifts
    for (bi, bj) in sorted(shifts):
        for delta in (1, 2, 3):
            trial = dict(shifts)
            trial[(bi, bj)] = (shifts[(bi, bj)] + delta) % Z
            if not check_no_four_cycles(trial, n_cols, n_block_rows):
                continue
            rows, m, _ = build_h(trial, n_cols, n_block_rows)
            if gf2_rank(rows, Z * n_cols) == m:
                print(f"  rank repair: shift ({bi},{bj}) += {delta}")
                return trial
    return None


def main():
    out_dir = os.path.join(os.path.dirname(__file__), "..", "assets", "codes")
    os.makedirs(out_dir, exist_ok=True)
    for name, base_cols, n_block_rows in (
        ("qc_rate12_n1200.alist", COLS_R12, 6),
        ("qc_rate34_n1200.alist", COLS_R34, 3),
    ):
        n_cols = len(base_cols)
        shifts = base_shifts(base_cols, n_block_rows)
        assert check_no_four_cycles(shifts, n_cols, n_block_rows), name
        shifts = repair_rank(shifts, n_cols, n_block_rows)
        if shifts is None:
            print(f"{name}: no full-rank perturbation found", file=sys.stderr)
            return 1
        rows, m, n = build_h(shifts, n_cols, n_block_rows)
        path = os.path.join(out_dir, name)
        write_alist(path, rows, m, n)
        print(f"{name}: n={n} m={m} k={n - m} rate={(n - m) / n}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
