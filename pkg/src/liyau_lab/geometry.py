"""Discrete manifolds and metric-aware differential operators.

Three kinds of closed manifolds are supported:

* flat tori T^N (N = 1, 2, 3) on uniform periodic grids,
* 2-D conformal tori with metric g = exp(2 phi) * delta,
* the unit icosphere, a triangulated approximation of S^2.

Fields are plain 1-D numpy arrays with one value per node.  On structured
grids node ``(i, j, k)`` is stored at the C-order flat index, axis 0 being x.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "GridSpec",
    "ManifoldSpec",
    "DiscreteManifold",
    "ScalarField",
    "GeometryError",
    "build_manifold",
    "flat_torus",
    "conformal_torus",
    "icosphere",
    "laplacian_apply",
    "gradient",
    "gradient_sq",
    "gradient_dot",
    "hessian",
    "hessian_sq",
    "ricci_lower_bound",
    "ricci_quadratic",
    "gaussian_curvature",
    "bochner_residual",
    "laplace_comparison_check",
    "operator_contracts",
    "integrate",
    "mean",
    "inner",
    "export_field_csv",
]

DEFAULT_NODES = {1: 128, 2: 128, 3: 48}
DEFAULT_SUBDIVISION = 4


class GeometryError(ValueError):
    """Invalid manifold specification or unsupported operation."""


@dataclass(frozen=True)
class GridSpec:
    dimension: int
    nodes_per_axis: int
    period_lengths: tuple[float, ...]

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise GeometryError(f"dimension must be 1, 2 or 3, got {self.dimension}")
        if self.nodes_per_axis < 8:
            raise GeometryError(f"nodes_per_axis must be >= 8, got {self.nodes_per_axis}")
        lengths = tuple(float(x) for x in self.period_lengths)
        if len(lengths) == 1 and self.dimension > 1:
            lengths = lengths * self.dimension
        if len(lengths) != self.dimension:
            raise GeometryError("one period length per axis is required")
        if any(not (x > 0 and math.isfinite(x)) for x in lengths):
            raise GeometryError("period lengths must be positive and finite")
        object.__setattr__(self, "period_lengths", lengths)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / self.nodes_per_axis for L in self.period_lengths)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nodes_per_axis,) * self.dimension

    def axes(self) -> list[np.ndarray]:
        return [np.arange(self.nodes_per_axis) * h for h in self.spacing]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")


@dataclass(frozen=True, eq=False)
class ManifoldSpec:
    """What to build.  Use the ``flat_torus``/``conformal_torus``/``icosphere``
    constructors rather than filling the fields by hand."""

    kind: str
    grid: GridSpec | None = None
    phi: np.ndarray | None = None
    subdivision: int | None = None
    phi_expr: str | None = None

    def __post_init__(self):
        if self.kind == "flat_torus":
            if self.grid is None:
                raise GeometryError("flat_torus needs a GridSpec")
        elif self.kind == "conformal_torus":
            if self.grid is None or self.grid.dimension != 2:
                raise GeometryError("conformal_torus needs a 2-D GridSpec")
            if self.phi is None:
                raise GeometryError("conformal_torus needs conformal factor samples")
            phi = np.asarray(self.phi, dtype=float).ravel()
            if phi.size != self.grid.nodes_per_axis ** 2:
                raise GeometryError("conformal factor must have one sample per node")
            if not np.all(np.isfinite(phi)):
                raise GeometryError("conformal factor is not finite at every node")
            object.__setattr__(self, "phi", phi)
        elif self.kind == "icosphere":
            if self.subdivision is None or int(self.subdivision) < 2:
                raise GeometryError("icosphere subdivision level must be >= 2")
        else:
            raise GeometryError(f"unknown manifold kind {self.kind!r}")

    @property
    def structured(self) -> bool:
        return self.kind in ("flat_torus", "conformal_torus")


def flat_torus(dimension: int = 1, n: int | None = None,
               length: float | Sequence[float] = 2 * math.pi) -> ManifoldSpec:
    n = DEFAULT_NODES[dimension] if n is None else n
    lengths = (length,) if np.isscalar(length) else tuple(length)
    return ManifoldSpec("flat_torus", GridSpec(dimension, n, lengths))


def conformal_torus(phi: np.ndarray | Callable | str, n: int = DEFAULT_NODES[2],
                    length: float | Sequence[float] = 2 * math.pi) -> ManifoldSpec:
    """2-D torus with metric exp(2 phi) delta.

    ``phi`` is either node samples, a callable ``phi(x, y)`` on numpy arrays,
    or a numpy expression string in ``x``, ``y`` (e.g. ``"0.1*sin(x)"``).
    """
    lengths = (length,) if np.isscalar(length) else tuple(length)
    grid = GridSpec(2, n, lengths)
    expr = None
    if isinstance(phi, str):
        expr = phi
        phi = _eval_expression(phi, *grid.mesh())
    elif callable(phi):
        phi = phi(*grid.mesh())
    return ManifoldSpec("conformal_torus", grid, np.asarray(phi, dtype=float), phi_expr=expr)


def icosphere(subdivision: int = DEFAULT_SUBDIVISION) -> ManifoldSpec:
    return ManifoldSpec("icosphere", subdivision=int(subdivision))


def _eval_expression(expr: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    names = {k: getattr(np, k) for k in ("sin", "cos", "exp", "tanh", "cosh", "sinh", "pi")}
    out = eval(expr, {"__builtins__": {}}, {**names, "x": x, "y": y})  # noqa: S307
    return np.broadcast_to(np.asarray(out, dtype=float), x.shape).copy()


@dataclass(eq=False)
class DiscreteManifold:
    spec: ManifoldSpec
    node_count: int
    volume_weights: np.ndarray
    laplacian: sp.csr_matrix
    total_volume: float
    ricci_lower: float
    K: float
    coords: np.ndarray
    # W @ L, symmetric negative semidefinite
    stiffness: sp.csr_matrix = field(repr=False)
    faces: np.ndarray | None = field(default=None, repr=False)
    gauss_curvature: np.ndarray | None = field(default=None, repr=False)

    @property
    def kind(self) -> str:
        return self.spec.kind

    @property
    def structured(self) -> bool:
        return self.spec.structured

    @property
    def dimension(self) -> int:
        return self.spec.grid.dimension if self.structured else 2

    @property
    def grid(self) -> GridSpec:
        if not self.structured:
            raise GeometryError("icosphere has no grid")
        return self.spec.grid

    @property
    def mesh_size(self) -> float:
        if self.structured:
            return max(self.grid.spacing)
        v = self.coords
        e = self.faces
        return float(np.mean(np.linalg.norm(v[e[:, 0]] - v[e[:, 1]], axis=1)))

    @property
    def inverse_metric_factor(self) -> np.ndarray | float:
        """Scalar g^{ii} (conformal factor exp(-2 phi)); 1 on flat grids."""
        if self.kind == "conformal_torus":
            return np.exp(-2.0 * self.spec.phi)
        return 1.0


@dataclass
class ScalarField:
    """Node values tied to a manifold.  Operations also accept bare arrays."""

    manifold: DiscreteManifold
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.manifold.node_count,):
            raise GeometryError("field length does not match node count")
        if not np.all(np.isfinite(self.values)):
            raise GeometryError("field values must be finite")


def _values(M: DiscreteManifold, f) -> np.ndarray:
    if isinstance(f, ScalarField):
        if f.manifold is not M:
            raise GeometryError("field belongs to a different manifold")
        return f.values
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return np.full(M.node_count, float(arr))
    arr = arr.ravel()
    if arr.size != M.node_count:
        raise GeometryError(
            f"field has {arr.size} values but manifold has {M.node_count} nodes")
    return arr


# ---------------------------------------------------------------------------
# construction


def _periodic_second_difference(n: int, h: float) -> sp.csr_matrix:
    main = -2.0 * np.ones(n)
    off = np.ones(n - 1)
    D = sp.diags([off, main, off], [-1, 0, 1], shape=(n, n), format="lil")
    D[0, n - 1] = 1.0
    D[n - 1, 0] = 1.0
    return (D.tocsr() / (h * h)).tocsr()


def _flat_laplacian(grid: GridSpec) -> sp.csr_matrix:
    n = grid.nodes_per_axis
    eye = sp.identity(n, format="csr")
    L = None
    for axis, h in enumerate(grid.spacing):
        factors = [eye] * grid.dimension
        factors[axis] = _periodic_second_difference(n, h)
        term = factors[0]
        for fct in factors[1:]:
            term = sp.kron(term, fct, format="csr")
        L = term if L is None else L + term
    return L.tocsr()


def _build_structured(spec: ManifoldSpec) -> DiscreteManifold:
    grid = spec.grid
    L_flat = _flat_laplacian(grid)
    cell = float(np.prod(grid.spacing))
    coords = np.stack([c.ravel() for c in grid.mesh()], axis=1)
    n_nodes = coords.shape[0]
    if spec.kind == "flat_torus":
        weights = np.full(n_nodes, cell)
        L = L_flat
        K_gauss = None
        lam = 0.0
    else:
        phi = spec.phi
        conf = np.exp(2.0 * phi)
        weights = conf * cell
        L = (sp.diags(1.0 / conf) @ L_flat).tocsr()
        K_gauss = -(L_flat @ phi) / conf
        lam = float(K_gauss.min())
    S = (sp.diags(weights) @ L).tocsr()
    S = ((S + S.T) * 0.5).tocsr()
    return DiscreteManifold(
        spec=spec, node_count=n_nodes, volume_weights=weights, laplacian=L,
        total_volume=float(weights.sum()), ricci_lower=lam, K=max(0.0, -lam),
        coords=coords, stiffness=S, gauss_curvature=K_gauss)


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    return verts, faces


def _subdivide(verts: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    mid = verts[uniq[:, 0]] + verts[uniq[:, 1]]
    mid /= np.linalg.norm(mid, axis=1)[:, None]
    nv = verts.shape[0]
    m = nv + inverse.reshape(3, -1).T  # midpoints of (01, 12, 20) per face
    a, b, c = faces.T
    ab, bc, ca = m.T
    new_faces = np.concatenate([
        np.stack([a, ab, ca], 1), np.stack([b, bc, ab], 1),
        np.stack([c, ca, bc], 1), np.stack([ab, bc, ca], 1)])
    return np.vstack([verts, mid]), new_faces


def _triangle_data(verts: np.ndarray, faces: np.ndarray):
    p0, p1, p2 = (verts[faces[:, k]] for k in range(3))
    normal = np.cross(p1 - p0, p2 - p0)
    dbl_area = np.linalg.norm(normal, axis=1)
    return p0, p1, p2, normal, dbl_area


def _build_icosphere(spec: ManifoldSpec) -> DiscreteManifold:
    verts, faces = _icosahedron()
    for _ in range(spec.subdivision):
        verts, faces = _subdivide(verts, faces)
    n = verts.shape[0]
    pts = [verts[faces[:, k]] for k in range(3)]
    _, _, _, _, dbl_area = _triangle_data(verts, faces)
    area = 0.5 * dbl_area

    rows, cols, vals = [], [], []
    for k in range(3):
        i, j = faces[:, (k + 1) % 3], faces[:, (k + 2) % 3]
        u = pts[(k + 1) % 3] - pts[k]
        v = pts[(k + 2) % 3] - pts[k]
        cot = np.einsum("ij,ij->i", u, v) / np.linalg.norm(np.cross(u, v), axis=1)
        rows += [i, j]
        cols += [j, i]
        vals += [0.5 * cot, 0.5 * cot]
    C = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    S = (C - sp.diags(np.asarray(C.sum(axis=1)).ravel())).tocsr()
    weights = np.bincount(faces.ravel(), weights=np.repeat(area / 3.0, 3), minlength=n)
    L = (sp.diags(1.0 / weights) @ S).tocsr()
    return DiscreteManifold(
        spec=spec, node_count=n, volume_weights=weights, laplacian=L,
        total_volume=float(weights.sum()), ricci_lower=1.0, K=0.0,
        coords=verts, stiffness=S, faces=faces)


def build_manifold(spec: ManifoldSpec) -> DiscreteManifold:
    if spec.structured:
        return _build_structured(spec)
    return _build_icosphere(spec)


# ---------------------------------------------------------------------------
# integration


def integrate(M: DiscreteManifold, f) -> float:
    return float(np.dot(M.volume_weights, _values(M, f)))


def mean(M: DiscreteManifold, f) -> float:
    return integrate(M, f) / M.total_volume


def inner(M: DiscreteManifold, f, g) -> float:
    return float(np.dot(M.volume_weights * _values(M, f), _values(M, g)))


# ---------------------------------------------------------------------------
# operators


def laplacian_apply(M: DiscreteManifold, f) -> np.ndarray:
    return M.laplacian @ _values(M, f)


def _partials(M: DiscreteManifold, f: np.ndarray) -> list[np.ndarray]:
    grid = M.grid
    F = f.reshape(grid.shape)
    return [((np.roll(F, -1, axis=a) - np.roll(F, 1, axis=a)) / (2.0 * h)).ravel()
            for a, h in enumerate(grid.spacing)]


def _face_gradients(M: DiscreteManifold, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    faces = M.faces
    p0, p1, p2, normal, dbl_area = _triangle_data(M.coords, faces)
    nhat = normal / dbl_area[:, None]
    pts = (p0, p1, p2)
    grad = np.zeros_like(p0)
    for k in range(3):
        opp = pts[(k + 2) % 3] - pts[(k + 1) % 3]
        grad += f[faces[:, k]][:, None] * np.cross(nhat, opp) / dbl_area[:, None]
    return grad, 0.5 * dbl_area


def gradient(M: DiscreteManifold, f) -> list[np.ndarray]:
    """Coordinate partial derivatives (structured grids only)."""
    if not M.structured:
        raise GeometryError("coordinate partials need a structured grid")
    return _partials(M, _values(M, f))


def gradient_dot(M: DiscreteManifold, f, g) -> np.ndarray:
    """g(grad f, grad g) per node."""
    f, g = _values(M, f), _values(M, g)
    if M.structured:
        total = sum(a * b for a, b in zip(_partials(M, f), _partials(M, g)))
        return M.inverse_metric_factor * total
    gf, area = _face_gradients(M, f)
    gg, _ = _face_gradients(M, g)
    return _face_to_vertex(M, np.einsum("ij,ij->i", gf, gg), area)


def _face_to_vertex(M: DiscreteManifold, per_face: np.ndarray, area: np.ndarray) -> np.ndarray:
    faces = M.faces
    num = np.bincount(faces.ravel(), weights=np.repeat(per_face * area, 3), minlength=M.node_count)
    den = np.bincount(faces.ravel(), weights=np.repeat(area, 3), minlength=M.node_count)
    return num / den


def gradient_sq(M: DiscreteManifold, f) -> np.ndarray:
    """|grad f|^2_g per node.

    Centered differences on grids (times exp(-2 phi) for conformal metrics);
    area-weighted average of per-face squared P1 gradients on the icosphere.
    """
    f = _values(M, f)
    if M.structured:
        return M.inverse_metric_factor * sum(d * d for d in _partials(M, f))
    g, area = _face_gradients(M, f)
    return _face_to_vertex(M, np.einsum("ij,ij->i", g, g), area)


def hessian(M: DiscreteManifold, f) -> np.ndarray:
    """Covariant Hessian components H[i, j] per node, shape (d, d, nodes)."""
    if not M.structured:
        raise GeometryError("covariant Hessian is only available on structured grids")
    f = _values(M, f)
    grid = M.grid
    d = grid.dimension
    F = f.reshape(grid.shape)
    h = grid.spacing
    H = np.empty((d, d, M.node_count))
    for a in range(d):
        H[a, a] = ((np.roll(F, -1, a) - 2 * F + np.roll(F, 1, a)) / h[a] ** 2).ravel()
        for b in range(a + 1, d):
            pp = np.roll(np.roll(F, -1, a), -1, b)
            pm = np.roll(np.roll(F, -1, a), 1, b)
            mp = np.roll(np.roll(F, 1, a), -1, b)
            mm = np.roll(np.roll(F, 1, a), 1, b)
            H[a, b] = H[b, a] = ((pp - pm - mp + mm) / (4 * h[a] * h[b])).ravel()
    if M.kind == "conformal_torus":
        df = _partials(M, f)
        dphi = _partials(M, M.spec.phi)
        # Gamma^k_ij = delta_ik phi_j + delta_jk phi_i - delta_ij phi_k
        for i in range(d):
            for j in range(d):
                corr = df[i] * dphi[j] + df[j] * dphi[i]
                if i == j:
                    corr = corr - sum(df[k] * dphi[k] for k in range(d))
                H[i, j] -= corr
    return H


def hessian_sq(M: DiscreteManifold, f) -> np.ndarray:
    H = hessian(M, f)
    return (M.inverse_metric_factor ** 2) * np.einsum("ijn,ijn->n", H, H)


def gaussian_curvature(M: DiscreteManifold) -> np.ndarray:
    if M.kind == "flat_torus":
        return np.zeros(M.node_count)
    if M.kind == "conformal_torus":
        return M.gauss_curvature.copy()
    return np.ones(M.node_count)


def ricci_lower_bound(M: DiscreteManifold) -> tuple[float, float]:
    return M.ricci_lower, M.K


def ricci_quadratic(M: DiscreteManifold, f) -> np.ndarray:
    """Ric(grad f, grad f) per node.

    In 2-D Ric = K_gauss g; flat tori have Ric = 0 in every dimension.
    """
    if M.kind == "flat_torus":
        return np.zeros(M.node_count)
    return gaussian_curvature(M) * gradient_sq(M, f)


def bochner_residual(M: DiscreteManifold, U) -> float:
    """max |lap|grad U|^2 - 2|Hess U|^2 - 2 <grad U, grad lap U> - 2 Ric(grad U, grad U)|."""
    if not M.structured:
        raise GeometryError("Bochner residual needs the covariant Hessian (structured grids only)")
    U = _values(M, U)
    lhs = laplacian_apply(M, gradient_sq(M, U))
    rhs = (2.0 * hessian_sq(M, U)
           + 2.0 * gradient_dot(M, U, laplacian_apply(M, U))
           + 2.0 * ricci_quadratic(M, U))
    return float(np.max(np.abs(lhs - rhs)))


def laplace_comparison_check(subdivision: int = DEFAULT_SUBDIVISION, K: float = 0.0,
                             r_min: float = 0.1, r_max: float = math.pi - 0.1) -> float:
    """Largest value of r cot r - (1 + sqrt(K) r) over the unit icosphere's vertices.

    Distances are taken from vertex 0; on the unit sphere (N = 2) the distance
    function satisfies lap r = cot r, so the comparison bound reads
    r lap r <= 1 + sqrt(K) r.  A value <= 0 means no violation.
    """
    if K < 0:
        raise GeometryError("K must be nonnegative")
    M = build_manifold(icosphere(subdivision))
    pole = M.coords[0]
    r = np.arccos(np.clip(M.coords @ pole, -1.0, 1.0))
    r = r[(r > r_min) & (r < r_max)]
    return float(np.max(r / np.tan(r) - (1.0 + math.sqrt(K) * r)))


def operator_contracts(M: DiscreteManifold, trials: int = 20, seed: int = 0) -> dict:
    """Constant kernel, self-adjointness, semidefiniteness and Green's identity.

    Each measured value is normalised by the natural scale of the quantity
    (operator norm, total volume, field sup norms) and compared against
    1e-12 (kernel) or 1e-10 (the others).
    """
    rng = np.random.default_rng(seed)
    L, W = M.laplacian, M.volume_weights
    scale = float(abs(L).sum(axis=1).max())
    kernel = float(np.max(np.abs(L @ np.ones(M.node_count)))) / scale
    asym = green = 0.0
    neg = -math.inf
    for _ in range(trials):
        f = rng.standard_normal(M.node_count)
        g = rng.standard_normal(M.node_count)
        ref = scale * float(np.dot(W, np.abs(f))) * float(np.max(np.abs(g)))
        asym = max(asym, abs(inner(M, L @ f, g) - inner(M, f, L @ g)) / ref)
        neg = max(neg, inner(M, L @ f, f) / (scale * inner(M, f, f)))
        green = max(green, abs(integrate(M, L @ f)) / (scale * float(np.dot(W, np.abs(f)))))
    out = {"constant_kernel": kernel, "self_adjoint": asym,
           "negative_semidefinite": neg, "green": green}
    out["passed"] = (kernel <= 1e-12 and asym <= 1e-10 and neg <= 1e-10 and green <= 1e-10)
    return out


def export_field_csv(M: DiscreteManifold, f, path: str | Path, name: str = "value") -> Path:
    """Write ``node, x[, y[, z]], value`` rows."""
    values = _values(M, f)
    path = Path(path)
    axes = ["x", "y", "z"][: M.coords.shape[1]]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["node", *axes, name])
        for i, (c, v) in enumerate(zip(M.coords, values)):
            w.writerow([i, *(repr(float(x)) for x in c), repr(float(v))])
    return path
