"""Latent-space tooling: interpolation, offset arithmetic, Gaussian fits.

Offset vectors are differences of mean latent vectors between two
attribute-defined sets. Scoring decodes stochastic samples from the
shifted code and counts a match if any sample shows the target attribute;
precision is unigram precision of matching samples against the original
sentence (content tokens only).
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import models
from .diffmath import ContractError


class InsufficientDataError(ValueError):
    pass


@dataclass
class OffsetVector:
    t: np.ndarray
    from_value: str = ""
    to_value: str = ""
    slot: str = ""


@dataclass
class CodeGaussian:
    mean: np.ndarray
    covariance: np.ndarray  # ridge-regularized, symmetric PSD
    diagonal_fallback: bool = False


def interpolate(z0, z1, steps):
    """Affine path with lambda in {0, 1/(steps-1), ..., 1}; exact endpoints."""
    if steps < 2:
        raise ContractError("interpolation needs steps >= 2")
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    out = []
    for i in range(steps):
        lam = i / (steps - 1)
        if i == 0:
            out.append(z0.copy())
        elif i == steps - 1:
            out.append(z1.copy())
        else:
            out.append(lam * z1 + (1 - lam) * z0)
    return out


def build_offset(codes_a, codes_b, floor=10, **attrs):
    """t = mean(B) - mean(A); both sides must have at least ``floor`` rows."""
    a = np.asarray(codes_a, dtype=np.float64)
    b = np.asarray(codes_b, dtype=np.float64)
    if len(a) < floor or len(b) < floor:
        raise InsufficientDataError(
            f"offset needs >= {floor} codes per side, got {len(a)} and {len(b)}")
    return OffsetVector(t=b.mean(axis=0) - a.mean(axis=0), **attrs)


def apply_offset_and_score(bundle, z, offset, has_attribute, original_tokens,
                           rng, n_samples=100):
    """Decode samples from g(z + t); report (match, precision, samples).

    ``has_attribute(tokens) -> bool`` tests the target attribute;
    precision is averaged over matching samples only (0.0 if none match).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    t = offset.t if isinstance(offset, OffsetVector) else np.asarray(offset)
    shifted = np.asarray(z, dtype=np.float64) + t
    code = models.generate_code(bundle, shifted.astype(np.float32), mode="eval").value
    codes = np.repeat(code, n_samples, axis=0)
    samples = models.decode_sequence_sample(bundle, codes, rng)
    matches = [s for s in samples if has_attribute(s)]
    precision = 0.0
    if matches:
        precision = float(np.mean([unigram_precision(s, original_tokens)
                                   for s in matches]))
    return bool(matches), precision, samples


def unigram_precision(candidate, reference):
    """Clipped unigram precision of candidate tokens against the reference."""
    if not candidate:
        return 0.0
    ref_counts = {}
    for tok in reference:
        ref_counts[tok] = ref_counts.get(tok, 0) + 1
    hit = 0
    cand_counts = {}
    for tok in candidate:
        cand_counts[tok] = cand_counts.get(tok, 0) + 1
    for tok, n in cand_counts.items():
        hit += min(n, ref_counts.get(tok, 0))
    return hit / len(candidate)


def fit_code_gaussian(codes, ridge=1e-6):
    """ML mean/covariance with a ridge; diagonal fallback when data-starved."""
    codes = np.asarray(codes, dtype=np.float64)
    n, d = codes.shape
    mean = codes.mean(axis=0)
    if n < d + 1:
        var = codes.var(axis=0)
        cov = np.diag(var) + ridge * np.eye(d)
        return CodeGaussian(mean, cov, diagonal_fallback=True)
    centered = codes - mean
    cov = centered.T @ centered / n + ridge * np.eye(d)
    cov = 0.5 * (cov + cov.T)
    return CodeGaussian(mean, cov)


def sample_code(gaussian, rng, n=1):
    """Draw from the fitted Gaussian via Cholesky of the ridged covariance."""
    d = gaussian.mean.shape[0]
    chol = np.linalg.cholesky(gaussian.covariance)
    z = rng.normal((n, d), dtype=np.float64)
    out = gaussian.mean + z @ chol.T
    return out[0] if n == 1 else out


# ---------------------------------------------------------------------------
# code dump file: u32 code_dim, u32 count, then count*dim little-endian f32


def save_code_dump(path, codes):
    codes = np.asarray(codes, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", codes.shape[1], codes.shape[0]))
        fh.write(codes.astype("<f4").tobytes())


def load_code_dump(path):
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) != 8:
            raise ValueError(f"truncated code dump header in {path}")
        dim, count = struct.unpack("<II", head)
        raw = fh.read(dim * count * 4)
        if len(raw) != dim * count * 4:
            raise ValueError(f"truncated code dump payload in {path}")
    return np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(count, dim)
