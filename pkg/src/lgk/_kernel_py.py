"""Pure-Python uniformization kernel, the fallback for ``_kernel.pyx``.

Each proposal consumes two uniforms: the first selects a channel slot
(exchange (v, x, direction) or collision (q, x)), the second is the
acceptance draw. The float expressions mirror the compiled kernel exactly.
"""

import numpy as np


def run_proposals(occ, nbr, drift, coll, uniforms, n_prop, p_ex, dmax, counters):
    n_species, n_sites = occ.shape
    n_dir = nbr.shape[1]
    n_coll = coll.shape[0]
    n_ex = n_species * n_sites * n_dir
    n_c = n_coll * n_sites
    inv_top = 1.0 / (1.0 + dmax)
    p_c = 1.0 - p_ex
    # flat Python lists: indexing numpy scalars one at a time is far slower
    o = occ.reshape(-1).tolist()
    nb = nbr.tolist()
    thresholds = [[(1.0 + dk) * inv_top for dk in row] for row in drift.tolist()]
    cl = coll.tolist()
    us = uniforms[: 2 * n_prop].tolist()
    a_ex = h_ex = a_c = h_c = 0
    for i in range(n_prop):
        u = us[2 * i]
        acc = us[2 * i + 1]
        if u < p_ex:
            a_ex += 1
            slot = int((u / p_ex) * n_ex)
            if slot >= n_ex:
                slot = n_ex - 1
            slot, k = divmod(slot, n_dir)
            v, x = divmod(slot, n_sites)
            y = nb[x][k]
            base = v * n_sites
            if o[base + x] == 1 and o[base + y] == 0 and acc < thresholds[v][k]:
                o[base + x] = 0
                o[base + y] = 1
                h_ex += 1
        else:
            a_c += 1
            slot = int(((u - p_ex) / p_c) * n_c)
            if slot >= n_c:
                slot = n_c - 1
            qi, x = divmod(slot, n_sites)
            v, w, v2, w2 = cl[qi]
            if (o[v * n_sites + x] == 1 and o[w * n_sites + x] == 1
                    and o[v2 * n_sites + x] == 0 and o[w2 * n_sites + x] == 0):
                o[v * n_sites + x] = 0
                o[w * n_sites + x] = 0
                o[v2 * n_sites + x] = 1
                o[w2 * n_sites + x] = 1
                h_c += 1
    occ[...] = np.asarray(o, dtype=np.uint8).reshape(occ.shape)
    counters[0] += a_ex
    counters[1] += h_ex
    counters[2] += a_c
    counters[3] += h_c
