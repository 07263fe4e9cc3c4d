"""Hot convolution kernels: numba-jitted fast path with a pure-numpy fallback.

Backend selection happens once at import time via the QDEN_BACKEND
environment variable:

  * ``numba``  - require the jitted kernels (raise if numba is missing)
  * ``numpy``  - force the pure-numpy fallback
  * ``auto``   - (default) use numba when importable, else numpy

Both backends accumulate each output element in the same fixed order
(bias, then channel-major/tap-minor for the forward pass), so they are
numerically interchangeable for the forward pass and bit-reproducible
run to run. The jitted kernels parallelize only over independent output
slices, which keeps them deterministic under any thread schedule.
"""

from __future__ import annotations

import os

import numpy as np

_BACKEND_ENV = os.environ.get("QDEN_BACKEND", "auto").strip().lower()
if _BACKEND_ENV not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"QDEN_BACKEND must be 'auto', 'numba' or 'numpy', got {_BACKEND_ENV!r}"
    )

if _BACKEND_ENV == "numpy":
    _HAS_NUMBA = False
else:
    # the portable threading layer avoids a noisy TBB version probe; our
    # parallel loops write disjoint slices, so any layer is deterministic
    os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
    try:
        from numba import njit, prange

        _HAS_NUMBA = True
    except ImportError:
        if _BACKEND_ENV == "numba":
            raise
        _HAS_NUMBA = False


def backend_name() -> str:
    """Name of the active kernel backend ('numba' or 'numpy')."""
    return "numba" if _HAS_NUMBA else "numpy"


def taps_from_mask(mask: np.ndarray) -> np.ndarray:
    """Active kernel-grid positions of a binary mask, in row-major scan order.

    Returns an int64 array of shape [n_taps, 2] holding (row, col) indices
    into the kernel grid. The scan order fixes the accumulation order of
    every kernel below.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise ValueError("mask has no active taps")
    return np.ascontiguousarray(np.stack([rows, cols], axis=1).astype(np.int64))


# ---------------------------------------------------------------------------
# pure-numpy fallback
# ---------------------------------------------------------------------------

def _shifted(plane: np.ndarray, oy: int, ox: int) -> np.ndarray:
    """plane sampled at (y+oy, x+ox), zero outside the bounds."""
    h, w = plane.shape
    out = np.zeros_like(plane)
    ylo, yhi = max(0, -oy), min(h, h - oy)
    xlo, xhi = max(0, -ox), min(w, w - ox)
    if ylo < yhi and xlo < xhi:
        out[ylo:yhi, xlo:xhi] = plane[ylo + oy:yhi + oy, xlo + ox:xhi + ox]
    return out


def _conv_forward_numpy(inp, ker, bias, taps, dilation):
    c_out, c_in = ker.shape[0], ker.shape[1]
    cy, cx = ker.shape[2] // 2, ker.shape[3] // 2
    out = np.empty((c_out,) + inp.shape[1:], dtype=np.float64)
    out[:] = bias[:, None, None]
    # per-element accumulation order: (c, tap), matching the jitted kernel
    for c in range(c_in):
        for t in range(taps.shape[0]):
            ty, tx = taps[t, 0], taps[t, 1]
            sh = _shifted(inp[c], dilation * (ty - cy), dilation * (tx - cx))
            out += ker[:, c, ty, tx][:, None, None] * sh
    return out


def _conv_grad_input_numpy(gout, ker, taps, dilation):
    c_out, c_in = ker.shape[0], ker.shape[1]
    cy, cx = ker.shape[2] // 2, ker.shape[3] // 2
    gin = np.zeros((c_in,) + gout.shape[1:], dtype=np.float64)
    for o in range(c_out):
        for t in range(taps.shape[0]):
            ty, tx = taps[t, 0], taps[t, 1]
            sh = _shifted(gout[o], -dilation * (ty - cy), -dilation * (tx - cx))
            gin += ker[o, :, ty, tx][:, None, None] * sh
    return gin


def _conv_grad_kernel_numpy(gout, inp, taps, dilation, kh, kw):
    c_out, c_in = gout.shape[0], inp.shape[0]
    cy, cx = kh // 2, kw // 2
    gk = np.zeros((c_out, c_in, kh, kw), dtype=np.float64)
    for c in range(c_in):
        for t in range(taps.shape[0]):
            ty, tx = taps[t, 0], taps[t, 1]
            sh = _shifted(inp[c], dilation * (ty - cy), dilation * (tx - cx))
            gk[:, c, ty, tx] = np.tensordot(gout, sh, axes=([1, 2], [0, 1]))
    return gk


# ---------------------------------------------------------------------------
# numba fast path
# ---------------------------------------------------------------------------

if _HAS_NUMBA:

    @njit(cache=True, parallel=True)
    def _conv_forward_numba(inp, ker, bias, taps, dilation, out):  # pragma: no cover
        c_out, c_in = ker.shape[0], ker.shape[1]
        h, w = inp.shape[1], inp.shape[2]
        cy, cx = ker.shape[2] // 2, ker.shape[3] // 2
        nt = taps.shape[0]
        for o in prange(c_out):
            for y in range(h):
                for x in range(w):
                    out[o, y, x] = bias[o]
            for c in range(c_in):
                for t in range(nt):
                    wgt = ker[o, c, taps[t, 0], taps[t, 1]]
                    oy = dilation * (taps[t, 0] - cy)
                    ox = dilation * (taps[t, 1] - cx)
                    ylo = -oy if oy < 0 else 0
                    yhi = h - oy if oy > 0 else h
                    xlo = -ox if ox < 0 else 0
                    xhi = w - ox if ox > 0 else w
                    for y in range(ylo, yhi):
                        for x in range(xlo, xhi):
                            out[o, y, x] += wgt * inp[c, y + oy, x + ox]

    @njit(cache=True, parallel=True)
    def _conv_grad_input_numba(gout, ker, taps, dilation, gin):  # pragma: no cover
        c_out, c_in = ker.shape[0], ker.shape[1]
        h, w = gout.shape[1], gout.shape[2]
        cy, cx = ker.shape[2] // 2, ker.shape[3] // 2
        nt = taps.shape[0]
        for c in prange(c_in):
            for y in range(h):
                for x in range(w):
                    gin[c, y, x] = 0.0
            for o in range(c_out):
                for t in range(nt):
                    wgt = ker[o, c, taps[t, 0], taps[t, 1]]
                    oy = -dilation * (taps[t, 0] - cy)
                    ox = -dilation * (taps[t, 1] - cx)
                    ylo = -oy if oy < 0 else 0
                    yhi = h - oy if oy > 0 else h
                    xlo = -ox if ox < 0 else 0
                    xhi = w - ox if ox > 0 else w
                    for y in range(ylo, yhi):
                        for x in range(xlo, xhi):
                            gin[c, y, x] += wgt * gout[o, y + oy, x + ox]

    @njit(cache=True, parallel=True)
    def _conv_grad_kernel_numba(gout, inp, taps, dilation, gk):  # pragma: no cover
        c_out, c_in = gk.shape[0], gk.shape[1]
        h, w = inp.shape[1], inp.shape[2]
        cy, cx = gk.shape[2] // 2, gk.shape[3] // 2
        nt = taps.shape[0]
        for o in prange(c_out):
            for c in range(c_in):
                for t in range(nt):
                    oy = dilation * (taps[t, 0] - cy)
                    ox = dilation * (taps[t, 1] - cx)
                    ylo = -oy if oy < 0 else 0
                    yhi = h - oy if oy > 0 else h
                    xlo = -ox if ox < 0 else 0
                    xhi = w - ox if ox > 0 else w
                    acc = 0.0
                    for y in range(ylo, yhi):
                        for x in range(xlo, xhi):
                            acc += gout[o, y, x] * inp[c, y + oy, x + ox]
                    gk[o, c, taps[t, 0], taps[t, 1]] = acc


# ---------------------------------------------------------------------------
# public dispatch
# ---------------------------------------------------------------------------

def _as_f64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def conv_forward(inp, ker, bias, taps, dilation):
    """Masked dilated cross-correlation, 'same' output size, zero padding.

    inp: [C_in, H, W], ker: [C_out, C_in, kh, kw], bias: [C_out],
    taps: int64 [n, 2] kernel-grid positions, dilation >= 1.
    Returns [C_out, H, W].
    """
    inp, ker, bias = _as_f64(inp), _as_f64(ker), _as_f64(bias)
    if _HAS_NUMBA:
        out = np.empty((ker.shape[0],) + inp.shape[1:], dtype=np.float64)
        _conv_forward_numba(inp, ker, bias, taps, dilation, out)
        return out
    return _conv_forward_numpy(inp, ker, bias, taps, dilation)


def conv_grad_input(gout, ker, taps, dilation):
    """Gradient of conv_forward w.r.t. its input. Returns [C_in, H, W]."""
    gout, ker = _as_f64(gout), _as_f64(ker)
    if _HAS_NUMBA:
        gin = np.empty((ker.shape[1],) + gout.shape[1:], dtype=np.float64)
        _conv_grad_input_numba(gout, ker, taps, dilation, gin)
        return gin
    return _conv_grad_input_numpy(gout, ker, taps, dilation)


def conv_grad_kernel(gout, inp, taps, dilation, kh, kw):
    """Gradient of conv_forward w.r.t. the kernel.

    Entries outside the tap set stay exactly zero. Returns
    [C_out, C_in, kh, kw].
    """
    gout, inp = _as_f64(gout), _as_f64(inp)
    if _HAS_NUMBA:
        gk = np.zeros((gout.shape[0], inp.shape[0], kh, kw), dtype=np.float64)
        _conv_grad_kernel_numba(gout, inp, taps, dilation, gk)
        return gk
    return _conv_grad_kernel_numpy(gout, inp, taps, dilation, kh, kw)
