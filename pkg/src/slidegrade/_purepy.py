"""Pure-Python versions of the compiled grid-graph kernels.

Used when the extension module is not built, or when
``SLIDEGRADE_PURE_PYTHON=1`` is set. Results are identical to the compiled
kernels; only speed differs.
"""

import numpy as np


def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


def kruskal_forest(height, width, order, weights, max_weight):
    n = height * width
    n_horiz = height * (width - 1)
    parent = list(range(n))
    size = [1] * n
    forest = None
    mst = np.zeros(len(order), dtype=np.uint8)
    accepted = 0
    w = weights.tolist()

    for e in order.tolist():
        if accepted == n - 1:
            break
        if forest is None and w[e] > max_weight:
            forest = parent[:]
        if e < n_horiz:
            u = (e // (width - 1)) * width + e % (width - 1)
            v = u + 1
        else:
            u = e - n_horiz
            v = u + width
        ru = _find(parent, u)
        rv = _find(parent, v)
        if ru == rv:
            continue
        if size[ru] < size[rv]:
            ru, rv = rv, ru
        parent[rv] = ru
        size[ru] += size[rv]
        mst[e] = 1
        accepted += 1
    if forest is None:
        forest = parent[:]

    root_label = [-1] * n
    labels = [0] * n
    next_label = 0
    for i in range(n):
        r = _find(forest, i)
        if root_label[r] < 0:
            root_label[r] = next_label
            next_label += 1
        labels[i] = root_label[r]
    return mst, np.asarray(labels, dtype=np.int64)


def stable_argsort_bounded(keys, max_key):
    keys = np.asarray(keys)
    if keys.size and (keys.min() < 0 or keys.max() > max_key):
        raise ValueError("key out of range")
    return np.argsort(keys, kind="stable").astype(np.int64)
