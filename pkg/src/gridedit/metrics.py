"""Quantitative editing metrics.

Directional similarity: cosine between the image-embedding delta of an edit
and the text-embedding delta of its caption change; measures how well an
output follows the instruction. Feature distance: Fréchet distance between
Gaussian fits of embedding sets; measures distribution-level image quality
in provider-feature space.
"""

from __future__ import annotations

import warnings

import numpy as np
import torch

from .errors import ValidationError
from .providers import Embedder

NORM_EPS = 1e-8
RIDGE_EPS = 1e-6


def directional_similarity(in_img: torch.Tensor, out_img: torch.Tensor,
                           caption: str, edited_caption: str,
                           emb: Embedder) -> float:
    """cos( e_img(out) - e_img(in), e_txt(edited) - e_txt(caption) ).

    Returns 0 when either delta is (numerically) zero: a no-op edit or an
    unchanged caption carries no direction to compare.
    """
    img_delta = emb.embed_image(out_img) - emb.embed_image(in_img)
    txt_delta = emb.embed_text(edited_caption) - emb.embed_text(caption)
    if img_delta.shape != txt_delta.shape:
        raise ValidationError(
            f"image/text embedding dimensions differ: "
            f"{tuple(img_delta.shape)} vs {tuple(txt_delta.shape)}")
    n_img = torch.linalg.vector_norm(img_delta).item()
    n_txt = torch.linalg.vector_norm(txt_delta).item()
    if n_img < NORM_EPS or n_txt < NORM_EPS:
        return 0.0
    cos = ((img_delta * txt_delta).sum() / (n_img * n_txt)).item()
    return max(-1.0, min(1.0, cos))


def _sqrt_psd(matrix: np.ndarray) -> np.ndarray:
    values, vectors = np.linalg.eigh(matrix)
    values = np.clip(values, 0.0, None)
    return (vectors * np.sqrt(values)) @ vectors.T


def frechet_from_moments(mu_a: np.ndarray, cov_a: np.ndarray,
                         mu_b: np.ndarray, cov_b: np.ndarray) -> float:
    """||mu_a - mu_b||^2 + tr(cov_a + cov_b - 2 (cov_a cov_b)^{1/2}).

    The cross term uses tr sqrt(S_a^{1/2} S_b S_a^{1/2}) with negative
    eigenvalues of the symmetrized product clipped at zero.
    """
    diff = float(np.sum((mu_a - mu_b) ** 2))
    root_a = _sqrt_psd(cov_a)
    inner = root_a @ cov_b @ root_a
    inner = (inner + inner.T) / 2.0
    cross = float(np.sum(np.sqrt(np.clip(np.linalg.eigvalsh(inner), 0.0, None))))
    value = diff + float(np.trace(cov_a) + np.trace(cov_b)) - 2.0 * cross
    return max(value, 0.0)


def feature_distance(set_a, set_b, emb: Embedder) -> float:
    """Fréchet distance between the embedder features of two image sets.

    Covariances that are singular (including sets smaller than dim + 1) are
    ridge-regularized with a warning rather than rejected.
    """
    feats_a = _features(set_a, emb)
    feats_b = _features(set_b, emb)
    mu_a, cov_a = feats_a.mean(axis=0), np.cov(feats_a, rowvar=False)
    mu_b, cov_b = feats_b.mean(axis=0), np.cov(feats_b, rowvar=False)
    dim = feats_a.shape[1]
    needs_ridge = (
        len(feats_a) < dim + 1 or len(feats_b) < dim + 1
        or min(np.linalg.eigvalsh(cov_a).min(),
               np.linalg.eigvalsh(cov_b).min()) < RIDGE_EPS * 1e-3)
    if needs_ridge:
        warnings.warn(
            "near-singular feature covariance; applying ridge regularization",
            RuntimeWarning, stacklevel=2)
        cov_a = cov_a + RIDGE_EPS * np.eye(dim)
        cov_b = cov_b + RIDGE_EPS * np.eye(dim)
    return frechet_from_moments(mu_a, cov_a, mu_b, cov_b)


def _features(images, emb: Embedder) -> np.ndarray:
    if len(images) < 2:
        raise ValidationError("feature_distance needs at least 2 images per set")
    feats = [emb.embed_image(img).detach().numpy() for img in images]
    return np.stack(feats).astype(np.float64)
