#!/usr/bin/env python3
"""Convert the GTN release of DBLP into the edge-list layout read by lhgnn.

Input directory (from the GTN repository's `data/DBLP`):
    edges.pkl          list of four sparse adjacency matrices (P-A, A-P, P-C, C-P
                       in some orientation)
    node_features.pkl  dense 18405 x 334 keyword matrix

Output directory:
    edges.tsv          head<TAB>tail, both directions as in the release
    features.txt       "rows cols" header, one row per node id
    labels.tsv         node_id<TAB>type for the type probe; never shown to the model

Usage: convert_gtn_dblp.py GTN_DBLP_DIR OUT_DIR
"""

import os
import pickle
import sys

import numpy as np


def nonzero_pairs(m):
    coo = m.tocoo()
    return list(zip(coo.row.tolist(), coo.col.tolist()))


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    src, out = sys.argv[1], sys.argv[2]
    with open(os.path.join(src, "edges.pkl"), "rb") as f:
        mats = pickle.load(f)
    with open(os.path.join(src, "node_features.pkl"), "rb") as f:
        feats = np.asarray(pickle.load(f), dtype=np.float64)
    if len(mats) != 4:
        sys.exit(f"expected four relation matrices, found {len(mats)}")

    # The matrices form two transpose pairs (paper-author, paper-venue). Papers
    # are the sides the two families share.
    pairs = [set(nonzero_pairs(m)) for m in mats]
    family = [0]
    for p in pairs[1:]:
        family.append(0 if {(v, u) for u, v in p} == pairs[0] or p == pairs[0] else 1)
    reps = [pairs[family.index(0)], pairs[family.index(1)]] if 1 in family else None
    if reps is None:
        sys.exit("could not find two relation families")
    sides = [({u for u, _ in p}, {v for _, v in p}) for p in reps]
    a, b = max(((x, y) for x in (0, 1) for y in (0, 1)), key=lambda c: len(sides[0][c[0]] & sides[1][c[1]]))
    papers = sides[0][a] | sides[1][b]
    others = sorted([sides[0][1 - a], sides[1][1 - b]], key=len, reverse=True)
    authors, venues = others[0], others[1]
    n = feats.shape[0]

    os.makedirs(out, exist_ok=True)
    seen = set()
    with open(os.path.join(out, "edges.tsv"), "w") as f:
        for m in mats:
            for u, v in nonzero_pairs(m):
                if (u, v) not in seen:
                    seen.add((u, v))
                    f.write(f"{u}\t{v}\n")
    with open(os.path.join(out, "features.txt"), "w") as f:
        f.write(f"{n} {feats.shape[1]}\n")
        for row in feats:
            f.write(" ".join(repr(float(x)) for x in row) + "\n")
    with open(os.path.join(out, "labels.tsv"), "w") as f:
        for v in range(n):
            t = "paper" if v in papers else "author" if v in authors else "venue" if v in venues else None
            if t is not None:
                f.write(f"{v}\t{t}\n")
    print(f"{n} nodes, {len(seen)} directed edges, {len(papers)} papers, {len(authors)} authors, {len(venues)} venues")


if __name__ == "__main__":
    main()
