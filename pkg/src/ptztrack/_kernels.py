"""Compiled inner loops for the convolution layers: patch extraction and
its transpose (scatter-add), with implicit zero padding. Pure data
movement; all arithmetic stays in the BLAS matrix products of the caller.
Parallelism is over the batch axis only, so writes never race and results
are bit-reproducible."""

from __future__ import annotations

import os

# the workqueue layer parks idle workers instead of spinning, which keeps
# these kernels from fighting the BLAS thread pool for cores
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numba
from numba import njit, prange

numba.config.THREADING_LAYER = "workqueue"


@njit(cache=True, parallel=True)
def im2col(x, k, stride, pt, pl, oh, ow, cols):
    """x: (B, H, W, C) input; cols: (B*oh*ow, k*k*C) output. pt/pl are the
    top/left padding of the SAME scheme; out-of-range taps read as zero."""
    b, h, w, c = x.shape
    for bi in prange(b):
        for i in range(oh):
            ii0 = i * stride - pt
            for j in range(ow):
                jj0 = j * stride - pl
                row = (bi * oh + i) * ow + j
                idx = 0
                for ki in range(k):
                    ii = ii0 + ki
                    for kj in range(k):
                        jj = jj0 + kj
                        if 0 <= ii < h and 0 <= jj < w:
                            for ci in range(c):
                                cols[row, idx + ci] = x[bi, ii, jj, ci]
                        else:
                            for ci in range(c):
                                cols[row, idx + ci] = 0.0
                        idx += c


@njit(cache=True, parallel=True)
def col2im_add(dcols, k, stride, pt, pl, oh, ow, dx):
    """Transpose of im2col: accumulate patch gradients onto the input
    grid. dcols: (B*oh*ow, k*k*C); dx: (B, H, W, C) zeroed."""
    b, h, w, c = dx.shape
    for bi in prange(b):
        for i in range(oh):
            ii0 = i * stride - pt
            for j in range(ow):
                jj0 = j * stride - pl
                row = (bi * oh + i) * ow + j
                idx = 0
                for ki in range(k):
                    ii = ii0 + ki
                    for kj in range(k):
                        jj = jj0 + kj
                        if 0 <= ii < h and 0 <= jj < w:
                            for ci in range(c):
                                dx[bi, ii, jj, ci] += dcols[row, idx + ci]
                        idx += c


@njit(cache=True)
def relu_backward_inplace(dy, y):
    """dy *= (y > 0) over flat contiguous views."""
    for i in range(dy.shape[0]):
        if y[i] <= 0.0:
            dy[i] = 0.0
