"""Linear-scan reference answers, computed without the tree or merge sort."""
import numpy as np

from ktsearch.kendall import kt_distance_oracle_many


def scan(perms, ids, active, q, lo, hi):
    """ids of active rows whose raw distance to q lies in [lo, hi]."""
    perms = np.asarray(perms)
    if perms.shape[0] == 0:
        return set()
    d = kt_distance_oracle_many(q, perms)
    keep = (d >= lo) & (d <= hi) & np.asarray(active, bool)
    return {ids[i] for i in np.flatnonzero(keep)}


def scan_tree(tree, q, lo, hi):
    """Same, over whatever records the tree currently stores."""
    n = tree.size
    return scan(tree.perms[:n], tree.ids, tree.active[:n], q, lo, hi)


def random_perms(rng, N, n):
    return rng.permuted(np.tile(np.arange(n, dtype=np.int16), (N, 1)), axis=1)
