"""Binarized forward pass: masked popcount accumulation plus the INT8
outlier path and float combination.

Per output row j, group l, plane a and subgroup s the kernel accumulates
mu[l,a] * (alpha[j,l,s] * (2*v - r) + beta[j,l,s] * r) where v counts set
bits of sign&plane within the subgroup and r counts set plane bits; (2v - r)
realizes the +/-1 sign mapping. Plane a = -1 is the constant-ones plane with
coefficient shift = -mu*z; its counts are activation-independent and are
computed from the sign/mask words directly. Counts are held in 64-bit
integers, the float combination in float64.

forward is a pure function over immutable layer data; nothing here mutates
the layer.
"""

import time

import numpy as np

from .actquant import ActBitplanes, quantize_activations, reconstruct, reconstruct_outliers
from .bits import BitBlock, pack_bits, popcount, words_for
from .errors import DataError
from .weightquant import QuantizedLinear, dequant_weights


def popc_and(x: BitBlock, y: BitBlock) -> int:
    """Number of positions where both blocks have a 1 bit."""
    return (x & y).popcount()


def group_counts(q: BitBlock, b: BitBlock, m: BitBlock):
    """Subgroup bit counts for one (row, group, plane) triple.

    Convention: mask bit 1 means the channel belongs to subgroup 1.
    Returns (v0, v1, r0, r1) with e = q & b:
        v1 = popc(e & m), v0 = popc(e & ~m),
        r1 = popc(b & m), r0 = popc(b & ~m).
    """
    e = q & b
    v1 = popc_and(e, m)
    v0 = popc_and(e, ~m)
    r1 = popc_and(b, m)
    r0 = popc_and(b, ~m)
    return v0, v1, r0, r1


def _check_compatible(layer: QuantizedLinear, act: ActBitplanes) -> None:
    if act.group_size != layer.group_size:
        raise DataError(
            f"group size mismatch: act {act.group_size} vs layer {layer.group_size}"
        )
    if act.outliers != layer.outliers:
        raise DataError(
            f"outlier count mismatch: act {act.outliers} vs layer {layer.outliers}"
        )
    if act.n_groups != layer.n_groups:
        raise DataError(
            f"group count mismatch: act {act.n_groups} vs layer {layer.n_groups}"
        )
    if not np.array_equal(act.perm, layer.perm):
        raise DataError("activation permutation does not match the layer")
    if not (np.isfinite(act.plane_scales).all() and np.isfinite(act.shift).all()):
        raise DataError("non-finite plane scales")


def forward(layer: QuantizedLinear, act: ActBitplanes) -> np.ndarray:
    """Masked-popcount forward pass, output shape (tokens, rows)."""
    _check_compatible(layer, act)
    rows = layer.rows
    tokens = act.tokens
    b_chan = layer.group_size
    affine = np.asarray(layer.affine, dtype=np.float64)
    acc = np.zeros((rows, tokens), dtype=np.float64)

    for g in range(layer.n_groups):
        qw = layer.signs[:, g]
        mw = layer.mask[:, g]
        bw = act.planes[:, g]

        e = qw[:, None, None, :] & bw[None, :, :, :]
        v_all = popcount(e).sum(axis=-1, dtype=np.int64)
        v1 = popcount(e & mw[:, None, None, :]).sum(axis=-1, dtype=np.int64)
        v0 = v_all - v1
        r1 = popcount(bw[None, :, :, :] & mw[:, None, None, :]).sum(axis=-1, dtype=np.int64)
        r_all = popcount(bw).sum(axis=-1, dtype=np.int64)
        r0 = r_all[None, :, :] - r1

        a0 = affine[:, g, 0, 0][:, None, None]
        b0 = affine[:, g, 0, 1][:, None, None]
        a1 = affine[:, g, 1, 0][:, None, None]
        b1 = affine[:, g, 1, 1][:, None, None]
        term = a0 * (2 * v0 - r0) + b0 * r0 + a1 * (2 * v1 - r1) + b1 * r1
        acc += np.einsum("rta,ta->rt", term, act.plane_scales[:, g, :])

        # constant-ones plane: counts depend only on the layer bits
        v1c = popcount(qw & mw).sum(axis=-1, dtype=np.int64)
        v0c = popcount(qw).sum(axis=-1, dtype=np.int64) - v1c
        r1c = popcount(mw).sum(axis=-1, dtype=np.int64)
        r0c = b_chan - r1c
        termc = (
            affine[:, g, 0, 0] * (2 * v0c - r0c)
            + affine[:, g, 0, 1] * r0c
            + affine[:, g, 1, 0] * (2 * v1c - r1c)
            + affine[:, g, 1, 1] * r1c
        )
        acc += termc[:, None] * act.shift[None, :, g]

    if layer.outliers:
        w_codes = layer.out_codes.astype(np.int64)
        a_codes = act.out_codes.astype(np.int64)
        dot = w_codes @ a_codes.T
        sw = w_codes.sum(axis=1)
        sa = a_codes.sum(axis=1)
        w_scale = np.asarray(layer.out_scale, dtype=np.float64)
        w_zero = np.asarray(layer.out_zero, dtype=np.float64)
        a_scale = act.out_scale
        a_zero = act.out_zero
        corrected = (
            dot
            - a_zero[None, :] * sw[:, None]
            - w_zero[:, None] * sa[None, :]
            + layer.outliers * w_zero[:, None] * a_zero[None, :]
        )
        acc += w_scale[:, None] * a_scale[None, :] * corrected

    return acc.T.copy()


def forward_reference(layer: QuantizedLinear, act: ActBitplanes) -> np.ndarray:
    """Dequantize-then-multiply oracle for forward."""
    _check_compatible(layer, act)
    w_deq = dequant_weights(layer, original_order=False)
    a_deq = np.concatenate([reconstruct(act), reconstruct_outliers(act)], axis=1)
    return a_deq @ w_deq.T


def random_layer(rng, rows, cols, group_size, outliers) -> QuantizedLinear:
    """Random packed layer for kernel tests and benchmarks."""
    n_bin = cols - outliers
    if n_bin < 0 or n_bin % group_size:
        raise DataError("invalid layer shape for the requested grouping")
    n_groups = n_bin // group_size
    wpg = words_for(group_size)
    signs = pack_bits(rng.integers(0, 2, size=(rows, n_groups, group_size), dtype=np.uint8))
    mask = pack_bits(rng.integers(0, 2, size=(rows, n_groups, group_size), dtype=np.uint8))
    return QuantizedLinear(
        rows=rows,
        cols=cols,
        group_size=group_size,
        outliers=outliers,
        signs=signs.reshape(rows, n_groups, wpg),
        mask=mask.reshape(rows, n_groups, wpg),
        affine=rng.normal(scale=0.05, size=(rows, n_groups, 2, 2)).astype(np.float32),
        perm=rng.permutation(cols),
        out_codes=rng.integers(0, 256, size=(rows, outliers), dtype=np.uint8).reshape(rows, outliers),
        out_scale=(0.01 + rng.random(rows)).astype(np.float32),
        out_zero=rng.integers(0, 256, size=rows).astype(np.float32),
        plane_corr=np.ones((n_groups, 4), dtype=np.float32),
    )


def random_activations(rng, tokens, layer, corrections=False) -> ActBitplanes:
    x = rng.normal(size=(tokens, layer.cols))
    return quantize_activations(
        x,
        layer.group_size,
        layer.outliers,
        perm=layer.perm,
        plane_corr=layer.plane_corr if corrections else None,
    )


def _bench_config(c_in: int):
    if c_in % 128 == 0:
        group = 128
    elif c_in % 64 == 0:
        group = 64
    else:
        raise DataError(f"bench width {c_in} must be a multiple of 64")
    outliers = 128 if c_in >= 512 and (c_in - 128) % group == 0 else 0
    return group, outliers


def bench_forward(shapes, iters: int = 50, seed: int = 0):
    """Median wall-clock of forward vs a dense float32 GEMM per shape.

    Returns a list of row dicts. Two warm-up runs precede the timed ones.
    """
    if iters < 1:
        raise DataError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    rows_out = []
    for tokens, c_in, c_out in shapes:
        if min(tokens, c_in, c_out) < 1:
            raise DataError(f"shape ({tokens}, {c_in}, {c_out}) must be positive")
        group, outliers = _bench_config(c_in)
        layer = random_layer(rng, c_out, c_in, group, outliers)
        act = random_activations(rng, tokens, layer)
        w_dense = dequant_weights(layer).astype(np.float32)
        x_dense = rng.normal(size=(tokens, c_in)).astype(np.float32)

        def run_kernel():
            forward(layer, act)

        def run_gemm():
            x_dense @ w_dense.T

        kernel_ms = _median_ms(run_kernel, iters)
        gemm_ms = _median_ms(run_gemm, iters)
        rows_out.append(
            {
                "tokens": tokens,
                "c_in": c_in,
                "c_out": c_out,
                "kernel_ms": kernel_ms,
                "gemm_ms": gemm_ms,
                "ratio": kernel_ms / gemm_ms if gemm_ms > 0 else float("inf"),
            }
        )
    return rows_out


def _median_ms(fn, iters: int) -> float:
    fn()
    fn()
    times = []
    for _ in range(iters):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(times))
