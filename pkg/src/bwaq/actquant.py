"""Activation quantization: per-token per-group RTN to INT4, decomposition
into four 1-bit planes with plane scales 2^a * mu, and residual-driven
balancing of the plane scales.

Dequantization is mu * (code - z). z is defined as -round(min/mu), so the
group minimum maps to code 0 and is reproduced by the shift term -mu*z.
Reconstruction rebuilds the integer level from the planes first and applies
the base scale in a single multiply, which keeps the decomposition identity
exact before any balancing. All operations are pure per token: quantizing
tokens in any order yields identical output.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .bits import pack_bits, unpack_bits, words_for
from .errors import DataError

log = logging.getLogger(__name__)


def rtn_quantize(x, bits: int, clip: float = 1.0):
    """Asymmetric round-to-nearest over the last axis.

    mu = clip * (max - min) / (2^bits - 1), z = -round(min/mu),
    codes = clamp(round(x/mu) + z, 0, 2^bits - 1). A zero range degenerates
    to mu = 1 with the same formulas, so constant inputs round-trip to
    round(value). Returns (codes, mu, z); mu and z drop the last axis.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise DataError("non-finite activation values")
    if bits not in (2, 4, 8):
        raise DataError(f"unsupported bit width {bits}")
    if not 0 < clip <= 1:
        raise DataError(f"clip must be in (0, 1], got {clip}")
    lo = x.min(axis=-1)
    hi = x.max(axis=-1)
    qmax = float(2**bits - 1)
    mu = clip * (hi - lo) / qmax
    mu = np.where(mu > 0, mu, 1.0)
    z = -np.rint(lo / mu)
    codes = np.clip(np.rint(x / mu[..., None]) + z[..., None], 0, qmax)
    return codes.astype(np.int64), mu, z


def rtn_dequantize(codes, mu, z) -> np.ndarray:
    """mu * (code - z), the inverse map of rtn_quantize."""
    codes = np.asarray(codes, dtype=np.float64)
    return np.asarray(mu)[..., None] * (codes - np.asarray(z)[..., None])


def decompose_bitplanes(codes, mu, z):
    """Split INT4 codes into four bit planes.

    Returns (planes, plane_scales, shift): planes holds bit a of each code in
    a new axis before the element axis, plane_scales[a] = 2^a * mu (exact,
    power-of-two scaling), shift = -mu * z.
    """
    codes = np.asarray(codes)
    if codes.size and (codes.min() < 0 or codes.max() > 15):
        raise DataError("codes out of INT4 range")
    codes = codes.astype(np.uint8)
    mu = np.asarray(mu, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    planes = np.stack([(codes >> a) & 1 for a in range(4)], axis=-2)
    plane_scales = np.stack([np.ldexp(mu, a) for a in range(4)], axis=-1)
    shift = -mu * z
    return planes, plane_scales, shift


@dataclass
class ActBitplanes:
    """Quantized activations for one layer input.

    planes: uint64 words (tokens, n_groups, 4, words_per_group) in permuted
    channel order; mu/zero/shift per (token, group); plane_scales per
    (token, group, plane). The outlier tail holds per-token 8-bit codes.
    """

    tokens: int
    group_size: int
    outliers: int
    perm: np.ndarray
    planes: np.ndarray
    mu: np.ndarray
    zero: np.ndarray
    plane_scales: np.ndarray
    shift: np.ndarray
    out_codes: np.ndarray
    out_scale: np.ndarray
    out_zero: np.ndarray

    @property
    def n_groups(self) -> int:
        return self.planes.shape[1]

    def codes(self) -> np.ndarray:
        """Reassembled integer codes, shape (tokens, n_groups, group_size)."""
        bits = unpack_bits(self.planes, self.group_size)
        weights = np.array([1, 2, 4, 8], dtype=np.uint8)
        return (bits * weights[:, None]).sum(axis=-2, dtype=np.uint8)


def quantize_activations(
    x, group_size: int, outliers: int, perm=None, plane_corr=None, clip: float = 1.0
) -> ActBitplanes:
    """Permute channels, RTN-quantize each (token, group) to INT4 planes, and
    quantize the trailing outlier channels to per-token INT8."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"activations must be 2-D, got shape {x.shape}")
    tokens, c_in = x.shape
    if perm is None:
        perm = np.arange(c_in, dtype=np.int64)
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (c_in,):
        raise DataError(f"perm length {perm.shape} does not match {c_in} channels")
    n_bin = c_in - outliers
    if n_bin < 0 or n_bin % group_size != 0:
        raise DataError(
            f"cannot split {c_in} channels into groups of {group_size} "
            f"with {outliers} outliers"
        )
    xp = x[:, perm]
    n_groups = n_bin // group_size
    grouped = xp[:, :n_bin].reshape(tokens, n_groups, group_size)
    codes, mu, z = rtn_quantize(grouped, 4, clip)
    planes, plane_scales, shift = decompose_bitplanes(codes, mu, z)
    if plane_corr is not None:
        plane_scales = plane_scales * np.asarray(plane_corr, dtype=np.float64)[None, :, :]
    packed = pack_bits(planes).reshape(tokens, n_groups, 4, words_for(group_size))
    if outliers:
        out_codes, out_scale, out_zero = rtn_quantize(xp[:, n_bin:], 8, clip)
        out_codes = out_codes.astype(np.uint8)
    else:
        out_codes = np.zeros((tokens, 0), dtype=np.uint8)
        out_scale = np.ones(tokens, dtype=np.float64)
        out_zero = np.zeros(tokens, dtype=np.float64)
    return ActBitplanes(
        tokens=tokens,
        group_size=group_size,
        outliers=outliers,
        perm=perm,
        planes=packed,
        mu=mu,
        zero=z,
        plane_scales=plane_scales,
        shift=shift,
        out_codes=out_codes,
        out_scale=out_scale,
        out_zero=out_zero,
    )


def reconstruct(bp: ActBitplanes) -> np.ndarray:
    """Dequantized binarized channels, shape (tokens, n_groups * group_size).

    Evaluated as mu * (sum_a (mu_a/mu) * b_a - z). With unbalanced scales the
    inner sum is the exact integer code, so the result is bit-identical to
    rtn_dequantize of the codes.
    """
    bits = unpack_bits(bp.planes, bp.group_size).astype(np.float64)
    ratios = bp.plane_scales / bp.mu[..., None]
    level = np.einsum("tgab,tga->tgb", bits, ratios)
    recon = bp.mu[..., None] * (level - bp.zero[..., None])
    return recon.reshape(bp.tokens, -1)


def reconstruct_outliers(bp: ActBitplanes) -> np.ndarray:
    codes = bp.out_codes.astype(np.float64)
    return bp.out_scale[:, None] * (codes - bp.out_zero[:, None])


def balance_scales(x_fp, bp: ActBitplanes) -> ActBitplanes:
    """Distribute the residual quantization error over the plane scales.

    For each (token, group) and plane a, the scale moves by the mean of
    mu_a * E / (mu * code) over the elements whose bit a is set. This zeroes
    the first-order (mean) residual of the nonzero-code elements. Groups
    whose codes are all zero are left untouched.
    """
    x_fp = np.asarray(x_fp, dtype=np.float64)
    recon = reconstruct(bp)
    if x_fp.shape != recon.shape:
        raise DataError(f"shape mismatch: {x_fp.shape} vs reconstruction {recon.shape}")
    tokens, n_groups, b = bp.planes.shape[0], bp.n_groups, bp.group_size
    codes = bp.codes().astype(np.float64)
    err = (x_fp - recon).reshape(tokens, n_groups, b)
    core = bp.mu[..., None] * codes
    nonzero = codes > 0
    ratio = np.where(nonzero, err / np.where(nonzero, core, 1.0), 0.0)
    bits = unpack_bits(bp.planes, b).astype(np.float64)
    member_sum = np.einsum("tgab,tgb->tga", bits, ratio)
    member_cnt = bits.sum(axis=-1)
    delta = np.where(
        member_cnt > 0, bp.plane_scales * member_sum / np.maximum(member_cnt, 1.0), 0.0
    )
    skipped = int(np.sum(~nonzero.any(axis=-1)))
    if skipped:
        log.debug("balance_scales: %d all-zero groups skipped", skipped)
    return ActBitplanes(
        tokens=bp.tokens,
        group_size=bp.group_size,
        outliers=bp.outliers,
        perm=bp.perm,
        planes=bp.planes,
        mu=bp.mu,
        zero=bp.zero,
        plane_scales=bp.plane_scales + delta,
        shift=bp.shift,
        out_codes=bp.out_codes,
        out_scale=bp.out_scale,
        out_zero=bp.out_zero,
    )


def plane_corrections(x, layer) -> np.ndarray:
    """Per-(group, plane) multiplicative corrections learned from calibration
    data: the token-averaged ratio of balanced to unbalanced plane scales."""
    bp = quantize_activations(
        x, layer.group_size, layer.outliers, perm=layer.perm, plane_corr=None
    )
    x_perm = np.asarray(x, dtype=np.float64)[:, layer.perm]
    balanced = balance_scales(x_perm[:, : bp.n_groups * bp.group_size], bp)
    ratio = balanced.plane_scales / bp.plane_scales
    return ratio.mean(axis=0).astype(np.float32)
