"""
Linear Beltrami Solver for the quasiconformal imaging toolkit.

This module reconstructs a piecewise-linear map from a Beltrami field by
solving the discretized elliptic system div(A grad u) = 0, div(A grad v) = 0:
- Per-face diffusion matrix A built from mu (alpha coefficients)
- Finite-element assembly of the stiffness matrices C1 = C2
- Dirichlet boundary handling (identity boundary or landmark sets)
- Diagonal-preconditioned conjugate gradient or sparse LU solve
- Monotone re-solve when an identity-boundary solution flips faces
- L1 residual of the unconstrained rows
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse import linalg as spla

from src.beltrami import BeltramiField, face_basis_gradients
from src.config import ASSEMBLY_MARGIN, CG_MAX_ITER_FACTOR, CG_RTOL, LBS_SOLVER
from src.exceptions import (
    InadmissibleCoefficientError,
    InvalidArgumentError,
    NumericalFailureError,
    UnderdeterminedSystemError,
)
from src.logger import setup_logger
from src.mesh import DeformationMap, TriMesh, boundary_mask, face_orientation_count

# Set up logger for this module
logger = setup_logger(__name__)

# Accepted relative residual of the sparse LU path
DIRECT_RTOL = 1e-10


# ============================================================================
# Domain Types
# ============================================================================

class BoundaryKind(str, Enum):
    IDENTITY = "identity-boundary"
    LANDMARK = "landmark-set"


@dataclass(frozen=True, eq=False)
class BoundaryCondition:
    """
    Dirichlet constraints on a set of distinct vertices.

    Attributes:
        kind: IDENTITY pins every boundary vertex to its reference position;
            LANDMARK pins an arbitrary vertex set
        indices: (K,) constrained vertex indices
        targets: (K, 2) target positions
    """
    kind: BoundaryKind
    indices: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        indices = np.array(self.indices, dtype=np.int64, copy=True).ravel()
        targets = np.array(self.targets, dtype=np.float64, copy=True).reshape(-1, 2)
        if indices.shape[0] != targets.shape[0]:
            error_msg = f"{indices.shape[0]} constraint indices but {targets.shape[0]} targets"
            logger.error(error_msg)
            raise InvalidArgumentError(error_msg)
        if np.unique(indices).size != indices.size:
            error_msg = "Constrained vertex indices must be distinct"
            logger.error(error_msg)
            raise InvalidArgumentError(error_msg)
        if not np.all(np.isfinite(targets)):
            error_msg = "Constraint targets contain non-finite coordinates"
            logger.error(error_msg)
            raise InvalidArgumentError(error_msg)
        indices.flags.writeable = False
        targets.flags.writeable = False
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "targets", targets)

    def __len__(self) -> int:
        return int(self.indices.size)


@dataclass(frozen=True, eq=False)
class LbsSystem:
    """
    Assembled linear Beltrami system.

    C1 and C2 are the same matrix; both names are kept so callers can
    address the u- and v-equations separately.
    """
    mesh: TriMesh
    field: BeltramiField
    c1: sp.csr_matrix
    c2: sp.csr_matrix
    boundary: BoundaryCondition

    @property
    def constrained(self) -> np.ndarray:
        mask = np.zeros(self.mesh.vertex_count, dtype=bool)
        mask[self.boundary.indices] = True
        return mask

    def monotone(self) -> "LbsSystem":
        """The same system with its positive couplings dropped (see monotone_stiffness)."""
        matrix = monotone_stiffness(self.c1)
        return LbsSystem(self.mesh, self.field, matrix, matrix.copy(), self.boundary)


# ============================================================================
# Boundary Conditions
# ============================================================================

def identity_boundary(mesh: TriMesh) -> BoundaryCondition:
    """Pin every boundary vertex to its reference position."""
    indices = np.flatnonzero(boundary_mask(mesh))
    return BoundaryCondition(BoundaryKind.IDENTITY, indices, mesh.vertices[indices])


def landmark_constraints(indices, targets) -> BoundaryCondition:
    """Pin the given vertices to the given targets."""
    return BoundaryCondition(BoundaryKind.LANDMARK, indices, targets)


def boundary_from_map(deformation: DeformationMap) -> BoundaryCondition:
    """Landmarks taking the boundary positions of an existing map."""
    indices = np.flatnonzero(boundary_mask(deformation.mesh))
    return landmark_constraints(indices, deformation.positions[indices])


# ============================================================================
# Coefficients and Assembly
# ============================================================================

def _alpha_arrays(rho: np.ndarray, tau: np.ndarray):
    denominator = 1.0 - rho ** 2 - tau ** 2
    alpha1 = ((rho - 1.0) ** 2 + tau ** 2) / denominator
    alpha2 = -2.0 * tau / denominator
    alpha3 = ((rho + 1.0) ** 2 + tau ** 2) / denominator
    return alpha1, alpha2, alpha3


def alpha_coefficients(mu: complex) -> tuple[float, float, float]:
    """
    Entries of the diffusion matrix A = [[alpha1, alpha2], [alpha2, alpha3]].

    Args:
        mu: Beltrami coefficient with |mu| < 1

    Returns:
        (alpha1, alpha2, alpha3)

    Raises:
        InadmissibleCoefficientError: If |mu| >= 1

    Example:
        >>> alpha_coefficients(0.5)
        (0.3333333333333333, -0.0, 3.0)
    """
    mu = complex(mu)
    if not abs(mu) < 1.0:
        error_msg = f"Beltrami coefficient {mu} is not admissible (|mu| >= 1)"
        logger.error(error_msg)
        raise InadmissibleCoefficientError(error_msg)
    alpha1, alpha2, alpha3 = _alpha_arrays(np.float64(mu.real), np.float64(mu.imag))
    return float(alpha1), float(alpha2), float(alpha3)


def stiffness_matrix(mesh: TriMesh, field: BeltramiField) -> sp.csr_matrix:
    """
    Assemble the anisotropic stiffness matrix with per-face constant A.

    Each face contributes area * G A G^T where G holds the gradients of its
    three hat functions. Local blocks are symmetrized before assembly so the
    result is exactly symmetric.
    """
    grad_x, grad_y, areas = face_basis_gradients(mesh)
    alpha1, alpha2, alpha3 = _alpha_arrays(field.rho, field.tau)

    flux_x = alpha1[:, None] * grad_x + alpha2[:, None] * grad_y
    flux_y = alpha2[:, None] * grad_x + alpha3[:, None] * grad_y
    local = areas[:, None, None] * (
        grad_x[:, :, None] * flux_x[:, None, :] + grad_y[:, :, None] * flux_y[:, None, :]
    )
    local = 0.5 * (local + local.transpose(0, 2, 1))

    faces = mesh.faces
    rows = np.repeat(faces, 3, axis=1).ravel()
    cols = np.tile(faces, (1, 3)).ravel()
    n = mesh.vertex_count
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def monotone_stiffness(stiffness: sp.csr_matrix) -> sp.csr_matrix:
    """
    Drop the positive off-diagonal couplings and rebuild the diagonal from the rest.

    The result is a symmetric M-matrix with zero row sums: every vertex is a
    convex combination of its neighbours. Solved against a convex Dirichlet
    boundary such a system cannot flip a face. Only sheared fields (tau != 0)
    produce positive couplings on this mesh, so real fields are left as they
    are. A constant field keeps the identity as its identity-boundary
    solution because opposite neighbours keep equal weights.

    Args:
        stiffness: Symmetric stiffness matrix

    Returns:
        CSR matrix with non-positive off-diagonal entries
    """
    n = stiffness.shape[0]
    upper = sp.triu(stiffness, k=1).tocoo()
    keep = upper.data < 0
    rows = np.concatenate([upper.row[keep], upper.col[keep]])
    cols = np.concatenate([upper.col[keep], upper.row[keep]])
    data = np.concatenate([upper.data[keep], upper.data[keep]])
    diagonal = -np.bincount(rows, weights=data, minlength=n)
    dropped = int(np.count_nonzero(~keep & (upper.data > 0)))
    logger.debug(f"Monotone stiffness dropped {dropped} positive couplings")
    return sp.coo_matrix(
        (np.concatenate([data, diagonal]), (np.concatenate([rows, np.arange(n)]), np.concatenate([cols, np.arange(n)]))),
        shape=(n, n),
    ).tocsr()


def assemble(mesh: TriMesh, field: BeltramiField, bc: BoundaryCondition) -> LbsSystem:
    """
    Assemble the linear Beltrami system for a field and boundary condition.

    Args:
        mesh: Reference mesh
        field: Beltrami field on the mesh
        bc: Dirichlet constraints

    Returns:
        LbsSystem with C1 = C2

    Raises:
        InvalidArgumentError: If the field belongs to another grid or a
            constraint index is out of range
        InadmissibleCoefficientError: If sup |mu| > 1 - ASSEMBLY_MARGIN
        UnderdeterminedSystemError: If bc has no constraints
    """
    if (field.mesh.width_v, field.mesh.height_v) != (mesh.width_v, mesh.height_v):
        error_msg = (
            f"Field grid {field.mesh.width_v}x{field.mesh.height_v} does not match "
            f"mesh {mesh.width_v}x{mesh.height_v}"
        )
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)

    magnitude = np.hypot(field.rho, field.tau)
    worst = int(np.argmax(magnitude))
    if magnitude[worst] > 1.0 - ASSEMBLY_MARGIN:
        error_msg = (
            f"Inadmissible Beltrami field: |mu| = {magnitude[worst]:.9f} on face {worst} "
            f"exceeds 1 - {ASSEMBLY_MARGIN}"
        )
        logger.error(error_msg)
        raise InadmissibleCoefficientError(error_msg)

    if len(bc) == 0:
        error_msg = "Boundary condition is empty; the system has no unique solution"
        logger.error(error_msg)
        raise UnderdeterminedSystemError(error_msg)

    if bc.indices.min() < 0 or bc.indices.max() >= mesh.vertex_count:
        error_msg = f"Constraint index out of range [0, {mesh.vertex_count})"
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)

    stiffness = stiffness_matrix(mesh, field)
    logger.debug(
        f"Assembled {mesh.vertex_count}x{mesh.vertex_count} system "
        f"({stiffness.nnz} nonzeros, {len(bc)} constraints, {bc.kind.value})"
    )
    return LbsSystem(mesh, field, stiffness, stiffness.copy(), bc)


# ============================================================================
# Solve
# ============================================================================

def _relative_residual(matrix, x: np.ndarray, rhs: np.ndarray) -> float:
    norm_b = np.linalg.norm(rhs)
    residual = np.linalg.norm(rhs - matrix @ x)
    return float(residual / norm_b) if norm_b > 0 else float(residual)


def _solve_cg(matrix: sp.csr_matrix, rhs: np.ndarray, x0: np.ndarray, label: str) -> np.ndarray:
    diagonal = matrix.diagonal()
    preconditioner = spla.LinearOperator(matrix.shape, matvec=lambda r: r / diagonal, dtype=np.float64)
    maxiter = CG_MAX_ITER_FACTOR * matrix.shape[0]
    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    solution, info = spla.cg(
        matrix, rhs, x0=x0, rtol=CG_RTOL, atol=0.0,
        maxiter=maxiter, M=preconditioner, callback=count,
    )
    residual = _relative_residual(matrix, solution, rhs)
    if info != 0 or not np.all(np.isfinite(solution)):
        error_msg = (
            f"Conjugate gradient did not converge for {label} "
            f"after {iterations} iterations (relative residual {residual:.3e})"
        )
        logger.error(error_msg)
        raise NumericalFailureError(error_msg, residual=residual, context=label)
    logger.debug(f"CG solved {label} in {iterations} iterations (relative residual {residual:.3e})")
    return solution


def _solve_reduced(system: LbsSystem, method: str) -> DeformationMap:
    mesh = system.mesh
    constrained = system.constrained
    free = ~constrained

    positions = np.empty((mesh.vertex_count, 2), dtype=np.float64)
    positions[system.boundary.indices] = system.boundary.targets
    if not free.any():
        return DeformationMap(mesh, positions)

    boundary_values = positions[constrained]
    matrices = (system.c1, system.c2)
    reduced = [m[free][:, free].tocsr() for m in matrices]
    couplings = [m[free][:, constrained] for m in matrices]

    if method == "direct":
        factors = [spla.splu(reduced[0].tocsc())]
        shared = system.c2 is system.c1 or (system.c1 != system.c2).nnz == 0
        factors.append(factors[0] if shared else spla.splu(reduced[1].tocsc()))

    for axis, label in ((0, "u"), (1, "v")):
        rhs = -(couplings[axis] @ boundary_values[:, axis])
        if method == "direct":
            solution = factors[axis].solve(rhs)
            residual = _relative_residual(reduced[axis], solution, rhs)
            if residual > DIRECT_RTOL or not np.all(np.isfinite(solution)):
                error_msg = f"Sparse LU solve for {label} left relative residual {residual:.3e}"
                logger.error(error_msg)
                raise NumericalFailureError(error_msg, residual=residual, context=label)
        else:
            x0 = mesh.vertices[free, axis]
            solution = _solve_cg(reduced[axis], rhs, x0, label)
        positions[free, axis] = solution

    return DeformationMap(mesh, positions)


def solve(system: LbsSystem, method: Optional[str] = None) -> DeformationMap:
    """
    Solve the reduced Dirichlet systems for u and v.

    Unconstrained rows satisfy K_II x_I = -K_IB x_B; constrained vertices
    take their targets exactly. Under an identity boundary the result never
    flips a face: if the consistent solution folds (strong shear next to the
    pinned edge), the map is recomputed from system.monotone() and a warning
    is logged. Measure the residual of such a map against system.monotone().

    Args:
        system: Assembled system
        method: "cg" or "direct"; defaults to LBS_SOLVER

    Returns:
        DeformationMap on the system's mesh

    Raises:
        InvalidArgumentError: If method is unknown
        NumericalFailureError: If the solver misses its residual target

    Example:
        >>> mesh = build_grid_mesh(33, 33)
        >>> system = assemble(mesh, BeltramiField.zeros(mesh), identity_boundary(mesh))
        >>> result = solve(system)
    """
    method = (method or LBS_SOLVER).lower()
    if method not in ("cg", "direct"):
        error_msg = f"Unknown solver method {method!r} (expected 'cg' or 'direct')"
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)

    deformation = _solve_reduced(system, method)
    if system.boundary.kind is BoundaryKind.IDENTITY:
        flipped = face_orientation_count(deformation).flipped
        if flipped:
            logger.warning(f"Solution flips {flipped} faces under identity boundary; re-solving with monotone couplings")
            deformation = _solve_reduced(system.monotone(), method)
    return deformation


def residual_loss(system: LbsSystem, deformation: DeformationMap) -> float:
    """
    L1 residual ||C1 u||_1 + ||C2 v||_1 over the unconstrained rows.

    Args:
        system: Assembled system
        deformation: Candidate map on the same grid

    Returns:
        Non-negative residual
    """
    free = ~system.constrained
    residual_u = (system.c1 @ deformation.u)[free]
    residual_v = (system.c2 @ deformation.v)[free]
    return float(np.abs(residual_u).sum() + np.abs(residual_v).sum())


def reconstruct(
    field: BeltramiField,
    bc: Optional[BoundaryCondition] = None,
    method: Optional[str] = None,
) -> DeformationMap:
    """Assemble and solve in one call; identity boundary by default."""
    mesh = field.mesh
    system = assemble(mesh, field, bc if bc is not None else identity_boundary(mesh))
    return solve(system, method=method)


if __name__ == "__main__":
    from src.mesh import build_grid_mesh

    demo_mesh = build_grid_mesh(33, 33)
    demo_field = BeltramiField.from_complex(demo_mesh, np.full(demo_mesh.face_count, 0.3 + 0.2j))
    demo_system = assemble(demo_mesh, demo_field, identity_boundary(demo_mesh))
    demo_map = solve(demo_system)
    print(f"Residual: {residual_loss(demo_system, demo_map):.3e}")
    print(f"Orientation: {face_orientation_count(demo_map)}")
