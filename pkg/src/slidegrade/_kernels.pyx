# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled grid-graph kernels. Semantics must match ``_purepy`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy

cnp.import_array()


cdef inline cnp.int32_t _find(cnp.int32_t* parent, cnp.int32_t x) nogil:
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


def kruskal_forest(Py_ssize_t height, Py_ssize_t width,
                   const cnp.int64_t[::1] order,
                   const cnp.float64_t[::1] weights,
                   double max_weight):
    """Run Kruskal over grid edges in ``order`` and return (mst_mask, labels).

    ``mst_mask[e]`` is 1 when edge ``e`` belongs to the spanning tree.
    ``labels`` numbers the subtrees left after dropping tree edges heavier
    than ``max_weight``, in raster order of each subtree's first pixel.
    ``order`` must list edges by non-decreasing weight.
    """
    cdef Py_ssize_t n = height * width
    if n >= 2**31 - 1:
        raise ValueError("image too large for 32-bit pixel indices")
    cdef Py_ssize_t n_edges = order.shape[0]
    cdef Py_ssize_t n_horiz = height * (width - 1)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] parent_arr = np.arange(n, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] size_arr = np.ones(n, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] forest_arr = np.empty(n, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] root_label_arr = np.full(n, -1, dtype=np.int32)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] mst_arr = np.zeros(n_edges, dtype=np.uint8)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] labels_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int32_t* parent = <cnp.int32_t*> cnp.PyArray_DATA(parent_arr)
    cdef cnp.int32_t* size = <cnp.int32_t*> cnp.PyArray_DATA(size_arr)
    cdef cnp.int32_t* forest = <cnp.int32_t*> cnp.PyArray_DATA(forest_arr)
    cdef cnp.int32_t* root_label = <cnp.int32_t*> cnp.PyArray_DATA(root_label_arr)
    cdef cnp.uint8_t* mst = <cnp.uint8_t*> cnp.PyArray_DATA(mst_arr)
    cdef cnp.int64_t* labels = <cnp.int64_t*> cnp.PyArray_DATA(labels_arr)
    cdef Py_ssize_t i, e, accepted = 0
    cdef cnp.int32_t u, v, ru, rv, tmp
    cdef cnp.int64_t next_label = 0
    cdef bint snapped = False

    with nogil:
        for i in range(n_edges):
            if accepted == n - 1:
                break
            e = order[i]
            if not snapped and weights[e] > max_weight:
                # every lighter edge has been seen: the union-find now holds
                # exactly the forest left after cutting heavy tree edges
                memcpy(forest, parent, n * sizeof(cnp.int32_t))
                snapped = True
            if e < n_horiz:
                u = <cnp.int32_t> ((e // (width - 1)) * width + e % (width - 1))
                v = u + 1
            else:
                u = <cnp.int32_t> (e - n_horiz)
                v = <cnp.int32_t> (u + width)
            ru = _find(parent, u)
            rv = _find(parent, v)
            if ru == rv:
                continue
            if size[ru] < size[rv]:
                tmp = ru
                ru = rv
                rv = tmp
            parent[rv] = ru
            size[ru] += size[rv]
            mst[e] = 1
            accepted += 1
        if not snapped:
            memcpy(forest, parent, n * sizeof(cnp.int32_t))

        for i in range(n):
            ru = _find(forest, <cnp.int32_t> i)
            if root_label[ru] < 0:
                root_label[ru] = <cnp.int32_t> next_label
                next_label += 1
            labels[i] = root_label[ru]

    return mst_arr, labels_arr


def stable_argsort_bounded(const cnp.int32_t[::1] keys, Py_ssize_t max_key):
    """Stable argsort of non-negative integer keys ``<= max_key`` (counting sort)."""
    cdef Py_ssize_t n = keys.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] start_arr = np.zeros(max_key + 2, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t* start = <cnp.int64_t*> cnp.PyArray_DATA(start_arr)
    cdef cnp.int64_t* out = <cnp.int64_t*> cnp.PyArray_DATA(out_arr)
    cdef Py_ssize_t i, k
    for i in range(n):
        k = keys[i]
        if k < 0 or k > max_key:
            raise ValueError("key out of range")
    with nogil:
        for i in range(n):
            start[keys[i] + 1] += 1
        for k in range(max_key + 1):
            start[k + 1] += start[k]
        for i in range(n):
            k = keys[i]
            out[start[k]] = i
            start[k] += 1
    return out_arr
