"""Piecewise affine pre-warp of a partitioned template.

Transforms use one convention throughout: a part affine is stored as a 4x3
matrix ``X`` and maps a point ``v`` to ``[v, 1] @ X`` (row vector times
matrix), i.e. ``X.T @ [v; 1]`` in column form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLandmarksError, MorphfitError, ValidationError
from .landmarks import LandmarkSet
from .mesh import Mesh, bounding_box_diagonal
from .partition import NO_PART, PartitionMap, PartitionSpec, build_partition

__all__ = [
    "PartAffine",
    "SmoothingConfig",
    "PrewarpResult",
    "fit_part_affine",
    "fit_similarity",
    "apply_affine",
    "apply_scaling",
    "blend_weights",
    "smooth_boundaries",
    "prewarp_pipeline",
    "RANK_TOLERANCE",
]

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-8
DEFAULT_DELTA_FRACTION = 0.05


@dataclass(frozen=True, eq=False)
class PartAffine:
    """Affine map of one part.

    Attributes
    ----------
    matrix : ndarray, shape (4, 3)
        Maps ``v`` to ``[v, 1] @ matrix``.
    residual : float
        RMS landmark error after the fit, model units.
    fallback : bool
        True when the landmarks were rank deficient and a similarity
        transform was fitted instead.
    """

    matrix: np.ndarray
    residual: float = 0.0
    fallback: bool = False
    n_pairs: int = 0

    @classmethod
    def identity(cls):
        return cls(np.vstack([np.eye(3), np.zeros(3)]))

    def apply(self, points) -> np.ndarray:
        return apply_affine(self.matrix, points)


def apply_affine(matrix, points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    return points @ matrix[:3] + matrix[3]


def _rms(a, b):
    d = a - b
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1)))) if len(d) else 0.0


def fit_similarity(src, dst) -> np.ndarray:
    """Least-squares rotation + uniform scale + translation (orthogonal Procrustes).

    Returns the 4x3 matrix in the ``[v, 1] @ X`` convention.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    s0, d0 = src - mu_s, dst - mu_d
    var_s = np.sum(s0 * s0) / len(src)
    if var_s == 0:
        raise DegenerateLandmarksError("degenerate landmark set")
    cov = d0.T @ s0 / len(src)
    u, sig, vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0
    rot = u @ np.diag(sign) @ vt
    scale = np.sum(sig * sign) / var_s
    lin = scale * rot
    t = mu_d - lin @ mu_s
    return np.vstack([lin.T, t])


def fit_part_affine(template_points, target_points, rank_tol=RANK_TOLERANCE) -> PartAffine:
    """Fit ``X`` minimizing ``sum ||[a, 1] @ X - b||^2`` through the SVD pseudoinverse.

    Falls back to :func:`fit_similarity` when the homogeneous landmark
    matrix is rank deficient (smallest singular value below ``rank_tol``
    times the largest), e.g. for coplanar landmarks.
    """
    a = np.asarray(template_points, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(target_points, dtype=np.float64).reshape(-1, 3)
    if len(a) != len(b):
        raise ValidationError("template and target landmark counts differ")
    if len(a) < 4:
        raise DegenerateLandmarksError(f"affine fit needs at least 4 landmark pairs, got {len(a)}")
    if np.all(a == a[0]):
        raise DegenerateLandmarksError("degenerate landmark set")
    hom = np.hstack([a, np.ones((len(a), 1))])
    u, s, vt = np.linalg.svd(hom, full_matrices=False)
    if s[-1] < rank_tol * s[0]:
        x = fit_similarity(a, b)
        fallback = True
    else:
        x = vt.T @ ((u.T @ b) / s[:, None])
        fallback = False
    return PartAffine(matrix=x, residual=_rms(apply_affine(x, a), b), fallback=fallback, n_pairs=len(a))


def _check_affines(pmap, affines):
    if isinstance(affines, dict):
        table = affines
    else:
        table = {p: aff for p, aff in enumerate(affines, start=1)}
    for part in range(1, pmap.n_parts + 1):
        if part not in table:
            raise ValidationError(f"missing affine for part {part}")
    return table


def apply_scaling(vertices, pmap: PartitionMap, affines) -> np.ndarray:
    """Map every vertex through the affine of its own part.

    ``affines`` is a sequence indexed by part (part 1 first) or a dict keyed
    by part id.
    """
    vertices = vertices.vertices if isinstance(vertices, Mesh) else np.asarray(vertices)
    table = _check_affines(pmap, affines)
    out = np.empty_like(vertices, dtype=np.float64)
    for part, aff in table.items():
        m = pmap.labels == part
        out[m] = apply_affine(aff.matrix, vertices[m])
    return out


@dataclass(frozen=True)
class SmoothingConfig:
    """Blend band half-width ``delta``; ``None`` resolves to 5% of the bbox diagonal."""

    delta: float = None
    paper_literal: bool = False

    def resolve(self, vertices) -> float:
        delta = self.delta
        if delta is None:
            delta = DEFAULT_DELTA_FRACTION * bounding_box_diagonal(vertices)
        if not delta > 0:
            raise ValidationError(f"smoothing band must be positive, got {delta}")
        return float(delta)


def blend_weights(d, delta, paper_literal=False):
    """Weights ``(own, other)`` for boundary distances ``d`` inside the band.

    ``own = 1/2 + d / (2 delta)`` so that the blend meets the plain own-part
    image at ``d = delta``. ``paper_literal`` swaps the two weights.
    The pair sums to exactly 1.
    """
    d = np.asarray(d, dtype=np.float64)
    own = 0.5 + d / (2.0 * delta)
    other = 1.0 - own
    if paper_literal:
        own, other = other, own
    return own, other


def smooth_boundaries(vertices, pmap: PartitionMap, affines, cfg: SmoothingConfig = None) -> np.ndarray:
    """Final pre-warped positions with convex blending near part boundaries.

    Vertices with ``d >= delta`` (or no boundary) take their own part's
    image; inside the band the own and opposite part images are blended by
    :func:`blend_weights`.
    """
    cfg = cfg or SmoothingConfig()
    vertices = vertices.vertices if isinstance(vertices, Mesh) else np.asarray(vertices)
    if pmap.distance is None:
        raise ValidationError("partition map has no boundary distances")
    delta = cfg.resolve(vertices)
    table = _check_affines(pmap, affines)
    out = apply_scaling(vertices, pmap, table)
    band = (pmap.distance < delta) & (pmap.opposite != NO_PART)
    if not band.any():
        return out
    idx = np.flatnonzero(band)
    own_w, other_w = blend_weights(pmap.distance[idx], delta, cfg.paper_literal)
    other_img = np.empty((len(idx), 3))
    for part, aff in table.items():
        m = pmap.opposite[idx] == part
        other_img[m] = apply_affine(aff.matrix, vertices[idx[m]])
    out[idx] = own_w[:, None] * out[idx] + other_w[:, None] * other_img
    return out


@dataclass
class PrewarpResult:
    mesh: Mesh
    scaled_vertices: np.ndarray
    partition: PartitionMap
    affines: list
    delta: float
    diagnostics: dict = field(default_factory=dict)


def prewarp_pipeline(mesh: Mesh, landmarks: LandmarkSet, spec: PartitionSpec,
                     cfg: SmoothingConfig = None) -> PrewarpResult:
    """Partition, fit one affine per part, scale, and smooth the boundaries.

    A part's affine is fitted from exactly the landmarks whose template
    vertex carries that part's label. Errors are re-raised with the failing
    stage name attached.
    """
    cfg = cfg or SmoothingConfig()
    try:
        pmap = build_partition(mesh, landmarks, spec)
    except MorphfitError as exc:
        raise type(exc)(str(exc), stage="partition") from exc

    affines, residuals = [], {}
    lm_parts = pmap.labels[landmarks.indices]
    for part in range(1, pmap.n_parts + 1):
        sel = lm_parts == part
        try:
            aff = fit_part_affine(mesh.vertices[landmarks.indices[sel]], landmarks.positions[sel])
        except MorphfitError as exc:
            raise type(exc)(f"part {part}: {exc}", stage="fit") from exc
        if aff.fallback:
            logger.warning("part %d: rank-deficient landmarks, using similarity fit", part)
        affines.append(aff)
        residuals[part] = aff.residual

    try:
        delta = cfg.resolve(mesh.vertices)
        scaled = apply_scaling(mesh.vertices, pmap, affines)
        final = smooth_boundaries(mesh.vertices, pmap, affines, SmoothingConfig(delta, cfg.paper_literal))
    except MorphfitError as exc:
        raise type(exc)(str(exc), stage="smooth") from exc

    out = mesh.with_vertices(final)
    diagnostics = {
        "n_parts": pmap.n_parts,
        "part_sizes": [int(np.sum(pmap.labels == p)) for p in range(1, pmap.n_parts + 1)],
        "part_residuals": [residuals[p] for p in range(1, pmap.n_parts + 1)],
        "part_fallback": [a.fallback for a in affines],
        "part_landmarks": [a.n_pairs for a in affines],
        "delta": delta,
        "blend_band_vertices": int(np.sum((pmap.distance < delta) & (pmap.opposite != NO_PART))),
        "landmark_rms_before": landmarks.rms_error(mesh.vertices),
        "landmark_rms_after": landmarks.rms_error(final),
    }
    return PrewarpResult(mesh=out, scaled_vertices=scaled, partition=pmap, affines=affines,
                         delta=delta, diagnostics=diagnostics)
