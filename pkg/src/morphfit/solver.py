"""Per-vertex affine registration energy and its alternating minimization.

Unknowns are stacked as ``X`` of shape ``(4n, 3)``; rows ``4i:4i+4`` hold
vertex ``i``'s transform in the ``[v, 1] @ X_i`` convention (the transpose of
the usual 3x4 ``T_i``). Because every energy term is a squared norm of a
row-vector-times-``X`` expression, the three output coordinates decouple and
the 12n-unknown least-squares problem becomes one ``4n x 4n`` SPD system with
three right-hand sides.

Energy::

    E = alpha * sum_i w_i ||[v_i, 1] X_i - c_i||^2               (distance)
      + beta  * sum_(i,j) ||G (X_i - X_j)||_F^2                   (stiffness)
      + gamma * sum_l ||[v_k(l), 1] X_k(l) - LM_l||^2             (landmarks)
      + eta   * sum_i w_i ||[N_i, 0] X_i - n_i||^2                (normals)

with ``G = diag(1, 1, 1, translation_weight)``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import DivergenceError, SingularSystemError, ValidationError
from .landmarks import LandmarkSet
from .mesh import Mesh, compute_vertex_normals
from .spatial import ClosestPointIndex, build_index

__all__ = [
    "EnergyWeights",
    "PruningConfig",
    "CorrespondenceSet",
    "EnergyBreakdown",
    "IterationRecord",
    "RegistrationResult",
    "identity_stack",
    "stack_to_3x4",
    "stack_from_3x4",
    "apply_stack",
    "find_correspondences",
    "energy",
    "solve_step",
    "register",
]

logger = logging.getLogger(__name__)

PIVOT_TOLERANCE = 1e-13


def identity_stack(n) -> np.ndarray:
    """``(n, 4, 3)`` stack of identity transforms."""
    x = np.zeros((n, 4, 3))
    x[:, :3, :] = np.eye(3)
    return x


def stack_to_3x4(x) -> np.ndarray:
    """Convert to the ``T_i`` (3x4, acting on column ``[v; 1]``) convention."""
    return np.transpose(np.asarray(x), (0, 2, 1))


def stack_from_3x4(t) -> np.ndarray:
    return np.transpose(np.asarray(t), (0, 2, 1))


def apply_stack(x, vertices) -> np.ndarray:
    """Deformed positions ``[v_i, 1] @ X_i``."""
    v = np.asarray(vertices, dtype=np.float64)
    return np.einsum("ij,ijk->ik", v, x[:, :3, :]) + x[:, 3, :]


@dataclass(frozen=True)
class EnergyWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 10.0
    eta: float = 0.1
    translation_weight: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "eta", "translation_weight"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValidationError(f"energy weight {name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class PruningConfig:
    """Correspondence rejection thresholds; all disabled by default."""

    max_distance: float = None
    max_angle_deg: float = None
    reject_boundary: bool = False


@dataclass
class CorrespondenceSet:
    """Per template vertex: closest target position and normal plus weights.

    ``weights`` is 0 for pruned vertices. ``normal_weights`` additionally
    drops vertices whose target normal is degenerate.
    """

    positions: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    normal_weights: np.ndarray = None
    distances: np.ndarray = None
    primitives: np.ndarray = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.normals = np.asarray(self.normals, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.normal_weights is None:
            self.normal_weights = self.weights.copy()

    def __len__(self):
        return len(self.positions)

    @classmethod
    def exact(cls, positions, normals=None):
        """Unpruned correspondences at the given positions (for tests and fixtures)."""
        positions = np.asarray(positions, dtype=np.float64)
        if normals is None:
            normals = np.zeros_like(positions)
        return cls(positions, normals, np.ones(len(positions)))


@dataclass(frozen=True)
class EnergyBreakdown:
    distance: float
    stiffness: float
    landmark: float
    normal: float
    total: float

    def as_dict(self):
        return asdict(self)


def find_correspondences(positions, normals, index: ClosestPointIndex,
                         pruning: PruningConfig = None) -> CorrespondenceSet:
    """Closest target point for every deformed template vertex, with optional pruning.

    A vertex is pruned (weight 0) when its distance exceeds
    ``max_distance``, when the angle between its normal and the target
    normal exceeds ``max_angle_deg``, or when ``reject_boundary`` is set and
    the closest point lies on an open border of a mesh target.
    """
    pruning = pruning or PruningConfig()
    res = index.query(positions)
    w = np.ones(len(res))
    if pruning.max_distance is not None:
        w[res.distances > pruning.max_distance] = 0.0
    if pruning.max_angle_deg is not None and normals is not None:
        cos = np.einsum("ij,ij->i", np.asarray(normals), res.normals)
        w[cos < math.cos(math.radians(pruning.max_angle_deg))] = 0.0
    if pruning.reject_boundary:
        w[res.on_boundary] = 0.0
    nw = w.copy()
    nw[res.degenerate_normal] = 0.0
    return CorrespondenceSet(
        positions=res.positions,
        normals=res.normals,
        weights=w,
        normal_weights=nw,
        distances=res.distances,
        primitives=res.primitives,
    )


def energy(x, mesh: Mesh, corr: CorrespondenceSet, landmarks: LandmarkSet,
           weights: EnergyWeights, template_normals=None) -> EnergyBreakdown:
    """Evaluate all four energy terms directly (no matrix assembly).

    ``x`` is the ``(n, 4, 3)`` transform stack. ``template_normals``
    defaults to the mesh's rest vertex normals.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1, 4, 3)
    v = mesh.vertices
    moved = apply_stack(x, v)
    r = moved - corr.positions
    e_d = float(np.sum(corr.weights * np.sum(r * r, axis=1)))

    e = mesh.edges
    diff = x[e[:, 0]] - x[e[:, 1]]
    diff[:, 3, :] *= weights.translation_weight
    e_s = float(np.sum(diff * diff))

    if len(landmarks):
        r = moved[landmarks.indices] - landmarks.positions
        e_l = float(np.sum(r * r))
    else:
        e_l = 0.0

    nrm = mesh.vertex_normals if template_normals is None else np.asarray(template_normals)
    rn = np.einsum("ij,ijk->ik", nrm, x[:, :3, :]) - corr.normals
    e_n = float(np.sum(corr.normal_weights * np.sum(rn * rn, axis=1)))

    total = weights.alpha * e_d + weights.beta * e_s + weights.gamma * e_l + weights.eta * e_n
    return EnergyBreakdown(e_d, e_s, e_l, e_n, total)


def _block_rows(rows_idx, vertex_idx, coeffs, scale):
    """COO triplets placing ``scale * coeffs[r]`` in the 4 columns of ``vertex_idx[r]``."""
    r = np.repeat(rows_idx, 4)
    c = (4 * np.asarray(vertex_idx)[:, None] + np.arange(4)).ravel()
    d = (scale[:, None] * coeffs).ravel()
    return r, c, d


def assemble_system(mesh: Mesh, corr: CorrespondenceSet, landmarks: LandmarkSet,
                    weights: EnergyWeights, template_normals=None, include_normal_rows=None):
    """Sparse least-squares matrix ``A`` (rows x 4n) and right-hand side ``B`` (rows x 3).

    Row blocks: distance (one per vertex), stiffness (4 per edge, i.e. 12
    scalar rows), landmarks, normals. Each block is scaled by the square
    root of its weight so that ``||A X - B||_F^2`` equals the energy.
    """
    n = mesh.n_vertices
    v = mesh.vertices
    if include_normal_rows is None:
        include_normal_rows = weights.eta > 0
    rows, cols, vals, rhs = [], [], [], []
    offset = 0
    hom = np.hstack([v, np.ones((n, 1))])

    s = math.sqrt(weights.alpha) * np.sqrt(corr.weights)
    r, c, d = _block_rows(offset + np.arange(n), np.arange(n), hom, s)
    rows.append(r); cols.append(c); vals.append(d)
    rhs.append(s[:, None] * corr.positions)
    offset += n

    e = mesh.edges
    g = np.array([1.0, 1.0, 1.0, weights.translation_weight]) * math.sqrt(weights.beta)
    m = len(e)
    er = offset + 4 * np.arange(m)[:, None] + np.arange(4)
    ec_i = 4 * e[:, :1] + np.arange(4)
    ec_j = 4 * e[:, 1:] + np.arange(4)
    gv = np.broadcast_to(g, (m, 4))
    rows += [er.ravel(), er.ravel()]
    cols += [ec_i.ravel(), ec_j.ravel()]
    vals += [gv.ravel(), -gv.ravel()]
    rhs.append(np.zeros((4 * m, 3)))
    offset += 4 * m

    k = len(landmarks)
    if k:
        s = np.full(k, math.sqrt(weights.gamma))
        r, c, d = _block_rows(offset + np.arange(k), landmarks.indices, hom[landmarks.indices], s)
        rows.append(r); cols.append(c); vals.append(d)
        rhs.append(s[:, None] * landmarks.positions)
        offset += k

    if include_normal_rows:
        nrm = mesh.vertex_normals if template_normals is None else np.asarray(template_normals)
        s = math.sqrt(weights.eta) * np.sqrt(corr.normal_weights)
        coeff = np.hstack([nrm, np.zeros((n, 1))])
        r, c, d = _block_rows(offset + np.arange(n), np.arange(n), coeff, s)
        rows.append(r); cols.append(c); vals.append(d)
        rhs.append(s[:, None] * corr.normals)
        offset += n

    a = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(offset, 4 * n),
    )
    return a, np.vstack(rhs)


def solve_step(mesh: Mesh, corr: CorrespondenceSet, landmarks: LandmarkSet,
               weights: EnergyWeights, template_normals=None, include_normal_rows=None) -> np.ndarray:
    """Exact minimizer of the energy for fixed correspondences.

    Forms the normal equations ``A^T A X = A^T B`` and solves them with a
    sparse LU factorization. Returns the ``(n, 4, 3)`` transform stack.

    Raises
    ------
    SingularSystemError
        If the normal matrix is singular (for example ``beta = 0`` with a
        vertex that has no data row).
    """
    a, b = assemble_system(mesh, corr, landmarks, weights, template_normals, include_normal_rows)
    at = a.T.tocsr()
    lhs = (at @ a).tocsc()
    rhs = at @ b
    try:
        lu = splinalg.splu(lhs, permc_spec="MMD_AT_PLUS_A")
        x = lu.solve(rhs)
    except RuntimeError as exc:
        raise SingularSystemError(f"registration system singular ({exc})") from None
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("registration system singular (non-finite solution)")
    # a rounding-level pivot means a null direction survived, not a unique minimizer
    piv = np.abs(lu.U.diagonal())
    if piv.min() <= PIVOT_TOLERANCE * piv.max():
        raise SingularSystemError("registration system singular (zero pivot)")
    resid = np.linalg.norm(lhs @ x - rhs)
    scale = np.linalg.norm(rhs) + abs(lhs).max() * np.linalg.norm(x)
    if resid > 1e-8 * max(scale, 1e-300):
        raise SingularSystemError("registration system singular (ill-conditioned normal matrix)")
    return x.reshape(mesh.n_vertices, 4, 3)


@dataclass
class IterationRecord:
    stage: int
    iteration: int
    beta: float
    gamma: float
    distance: float
    stiffness: float
    landmark: float
    normal: float
    total: float
    energy_before: float
    max_vertex_delta: float
    transform_change: float
    active: int

    def as_dict(self):
        return asdict(self)


@dataclass
class RegistrationResult:
    transforms: np.ndarray
    mesh: Mesh
    log: list = field(default_factory=list)
    correspondences: CorrespondenceSet = None
    iterations: int = 0
    seconds: float = 0.0

    @property
    def final_energy(self):
        return self.log[-1].total if self.log else float("nan")


def register(template: Mesh, target, landmarks: LandmarkSet = None, config=None,
             initial=None) -> RegistrationResult:
    """Warp ``template`` onto ``target`` by alternating correspondences and exact solves.

    For each stiffness ``beta`` of ``config.beta_schedule`` the inner loop
    finds closest points, solves for the transforms, and stops once
    ``||X_new - X_old||_F / sqrt(n) < config.epsilon`` or after
    ``config.max_inner_iterations`` solves.

    Parameters
    ----------
    template : Mesh
        Template (raw or pre-warped); its connectivity is kept verbatim.
    target : Mesh, PointCloud or ClosestPointIndex
    landmarks : LandmarkSet, optional
    config : RegistrationConfig, optional
    initial : ndarray, optional
        Starting ``(n, 4, 3)`` stack; identity by default.
    """
    from .config import RegistrationConfig

    config = config or RegistrationConfig()
    landmarks = landmarks if landmarks is not None else LandmarkSet.empty()
    landmarks.check_against(template.n_vertices)
    schedule = list(config.beta_schedule)
    if not schedule:
        raise ValidationError("stiffness schedule is empty")
    if any(b2 >= b1 for b1, b2 in zip(schedule, schedule[1:])):
        raise ValidationError("stiffness schedule must be strictly decreasing")
    if config.alpha <= 0 and config.gamma <= 0:
        raise ValidationError("at least one of alpha and gamma must be positive")
    index = target if isinstance(target, ClosestPointIndex) else build_index(target)

    n = template.n_vertices
    v = template.vertices
    x = identity_stack(n) if initial is None else np.array(initial, dtype=np.float64).reshape(n, 4, 3)
    eta = config.eta if config.normal_term else 0.0
    rest_normals = template.vertex_normals
    pruning = config.pruning
    need_deformed_normals = config.recompute_normals or pruning.max_angle_deg is not None

    log = []
    corr = None
    t0 = time.perf_counter()
    count = 0
    for stage, beta in enumerate(schedule):
        gamma = config.gamma * (beta / schedule[0]) if config.anneal_landmarks else config.gamma
        weights = EnergyWeights(config.alpha, beta, gamma, eta, config.translation_weight)
        for it in range(config.max_inner_iterations):
            moved = apply_stack(x, v)
            def_normals = compute_vertex_normals(template, moved)[0] if need_deformed_normals else None
            corr = find_correspondences(moved, def_normals, index, pruning)
            row_normals = def_normals if config.recompute_normals else rest_normals
            before = energy(x, template, corr, landmarks, weights, row_normals).total
            x_new = solve_step(template, corr, landmarks, weights, row_normals,
                               include_normal_rows=config.normal_term and eta > 0)
            e = energy(x_new, template, corr, landmarks, weights, row_normals)
            count += 1
            if not (math.isfinite(e.total) and np.all(np.isfinite(x_new))):
                raise DivergenceError(
                    f"non-finite energy at stage {stage}, iteration {it}", iteration=count
                )
            change = float(np.linalg.norm(x_new - x) / math.sqrt(n))
            delta = float(np.max(np.linalg.norm(apply_stack(x_new, v) - moved, axis=1)))
            log.append(IterationRecord(
                stage=stage, iteration=it, beta=beta, gamma=gamma,
                distance=e.distance, stiffness=e.stiffness, landmark=e.landmark,
                normal=e.normal, total=e.total, energy_before=before,
                max_vertex_delta=delta, transform_change=change,
                active=int(np.sum(corr.weights > 0)),
            ))
            logger.debug("stage %d it %d beta %.4g E %.6g dX %.3g", stage, it, beta, e.total, change)
            x = x_new
            if change < config.epsilon:
                break

    warped = template.with_vertices(apply_stack(x, v))
    final = find_correspondences(warped.vertices, None, index, pruning)
    return RegistrationResult(
        transforms=x, mesh=warped, log=log, correspondences=final,
        iterations=count, seconds=time.perf_counter() - t0,
    )
