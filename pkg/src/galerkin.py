"""1-D finite-element semidiscretization of the controlled reaction-diffusion plant.

State and adjoint live in the span of piecewise-linear hats on the interior
nodes (homogeneous Dirichlet conditions eliminated); controls live in the span
of piecewise constants, one per element.
"""

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sparse
from scipy.sparse.linalg import splu

try:
    from .models import ConfigError, NumericalError
except ImportError:
    from models import ConfigError, NumericalError

# Gauss-Legendre rules on [-1, 1]
_GAUSS2 = np.polynomial.legendre.leggauss(2)
_GAUSS4 = np.polynomial.legendre.leggauss(4)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Sorted nodes 0 = x_0 < ... < x_n = L."""

    length: float
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 3:
            raise ValueError("a mesh needs at least two elements")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("mesh nodes must be strictly increasing")
        if nodes[0] != 0.0 or not math.isclose(nodes[-1], self.length, rel_tol=1e-14):
            raise ValueError("mesh must start at 0 and end at L")
        object.__setattr__(self, "nodes", nodes)

    @property
    def n_elements(self) -> int:
        return self.nodes.size - 1

    @property
    def n_interior(self) -> int:
        return self.nodes.size - 2

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.nodes[1:-1]

    @property
    def element_sizes(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def element_midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])

    @property
    def h(self) -> float:
        """Largest element size (the uniform spacing on uniform meshes)."""
        return float(self.element_sizes.max())

    @property
    def is_uniform(self) -> bool:
        sizes = self.element_sizes
        return bool(np.allclose(sizes, sizes[0], rtol=1e-12, atol=0.0))


@dataclass(frozen=True)
class ControlSupport:
    """Actuated interval (a, b); B = sqrt(beta) * indicator of (a, b)."""

    a: float
    b: float


@dataclass(frozen=True)
class ObservationWindow:
    """Observed interval (a, b) with weight q_bar."""

    a: float
    b: float
    weight: float = 10.0


def build_mesh(length: float, n_elements: int) -> Mesh:
    """Uniform mesh with spacing h = length / n_elements."""
    if not length > 0:
        raise ValueError(f"domain length must be positive, got {length}")
    if n_elements < 2:
        raise ValueError(f"n_elements must be at least 2, got {n_elements}")
    nodes = np.linspace(0.0, float(length), n_elements + 1)
    return Mesh(length=float(length), nodes=nodes)


@dataclass(frozen=True, eq=False)
class FemOperators:
    """Assembled matrices of the semidiscrete plant.

    ``dynamics`` is the matrix with entries mu<phi_i, phi_j> - <phi_i', phi_j'>.
    """

    mesh: Mesh
    mass: sparse.csr_matrix
    stiffness: sparse.csr_matrix
    observation: sparse.csr_matrix
    control: sparse.csr_matrix
    control_weight: np.ndarray
    mu: float
    beta: float
    control_support: ControlSupport
    obs_window: ObservationWindow
    extras: dict = field(default_factory=dict, compare=False, repr=False)

    @cached_property
    def dynamics(self) -> sparse.csr_matrix:
        return (self.mu * self.mass - self.stiffness).tocsr()

    @property
    def n_state(self) -> int:
        return self.mass.shape[0]

    @property
    def n_control(self) -> int:
        return self.control.shape[1]

    @cached_property
    def mass_factor(self):
        return splu(self.mass.tocsc())

    @cached_property
    def control_weight_factor(self):
        try:
            return la.cho_factor(self.control_weight)
        except la.LinAlgError as exc:
            raise ConfigError(
                "control weight R must be symmetric positive definite"
            ) from exc

    def solve_mass(self, rhs: np.ndarray) -> np.ndarray:
        """M^{-1} rhs."""
        return self.mass_factor.solve(np.asarray(rhs, dtype=float))

    def solve_control_weight(self, rhs: np.ndarray) -> np.ndarray:
        """R^{-1} rhs."""
        return la.cho_solve(self.control_weight_factor, np.asarray(rhs, dtype=float))

    def with_mu(self, mu: float) -> "FemOperators":
        """Same mesh and weights, different reaction coefficient."""
        return replace(self, mu=float(mu), extras={})

    @property
    def full_control(self) -> bool:
        support = self.control_support
        return support.a <= 0.0 and support.b >= self.mesh.length

    @property
    def full_observation(self) -> bool:
        window = self.obs_window
        return window.a <= 0.0 and window.b >= self.mesh.length


def _interior_index(mesh: Mesh):
    """Interior indices of the left/right node of every element (-1 on the boundary)."""
    n_el = mesh.n_elements
    left = np.arange(n_el) - 1
    right = np.arange(n_el)
    right[-1] = -1
    return left, right


def _assemble(mesh: Mesh, local: np.ndarray) -> sparse.csr_matrix:
    """Scatter per-element 2x2 blocks ``local[e, a, b]`` onto interior nodes."""
    left, right = _interior_index(mesh)
    idx = np.stack([left, right], axis=1)
    rows, cols, vals = [], [], []
    for a in range(2):
        for b in range(2):
            ok = (idx[:, a] >= 0) & (idx[:, b] >= 0)
            rows.append(idx[ok, a])
            cols.append(idx[ok, b])
            vals.append(local[ok, a, b])
    n = mesh.n_interior
    matrix = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return matrix.tocsr()


def assemble_mass(mesh: Mesh) -> sparse.csr_matrix:
    h = mesh.element_sizes
    local = np.empty((mesh.n_elements, 2, 2))
    local[:, 0, 0] = local[:, 1, 1] = h / 3.0
    local[:, 0, 1] = local[:, 1, 0] = h / 6.0
    return _assemble(mesh, local)


def assemble_stiffness(mesh: Mesh) -> sparse.csr_matrix:
    h = mesh.element_sizes
    local = np.empty((mesh.n_elements, 2, 2))
    local[:, 0, 0] = local[:, 1, 1] = 1.0 / h
    local[:, 0, 1] = local[:, 1, 0] = -1.0 / h
    return _assemble(mesh, local)


def _clipped_gauss(mesh: Mesh, a: float, b: float, rule=_GAUSS2):
    """Quadrature points/weights on the overlap of every element with (a, b)."""
    lo = np.maximum(mesh.nodes[:-1], a)
    hi = np.minimum(mesh.nodes[1:], b)
    width = np.clip(hi - lo, 0.0, None)
    xi, wi = rule
    points = 0.5 * (lo + hi)[:, None] + 0.5 * width[:, None] * xi[None, :]
    weights = 0.5 * width[:, None] * wi[None, :]
    return points, weights


def _hat_values(mesh: Mesh, points: np.ndarray):
    """Left and right hat values of each element at element-local points."""
    x_left = mesh.nodes[:-1][:, None]
    h = mesh.element_sizes[:, None]
    right = (points - x_left) / h
    return 1.0 - right, right


def _check_interval(name: str, a: float, b: float, length: float) -> None:
    if not (0.0 <= a < b <= length):
        raise ConfigError(f"{name} ({a}, {b}) must satisfy 0 <= a < b <= {length}")


def assemble_operators(
    mesh: Mesh,
    mu: float,
    beta: float,
    control_support: Optional[ControlSupport] = None,
    obs_window: Optional[ObservationWindow] = None,
    control_R_weight: float = 1.0,
) -> FemOperators:
    """Assemble mass, stiffness, observation, control and control-weight matrices.

    All integrands are polynomials of degree <= 2 on each element and are
    integrated exactly; supports not aligned with element edges are clipped
    to the overlap with each element.
    """
    if control_support is None:
        control_support = ControlSupport(0.0, mesh.length)
    if obs_window is None:
        obs_window = ObservationWindow(0.0, mesh.length)
    _check_interval(
        "control support", control_support.a, control_support.b, mesh.length
    )
    _check_interval("observation window", obs_window.a, obs_window.b, mesh.length)
    if obs_window.weight < 0:
        raise ConfigError("observation weight q_bar must be nonnegative")
    if not beta > 0:
        raise ConfigError("beta must be positive")
    if not control_R_weight > 0:
        raise ConfigError("control weight must be positive")

    mass = assemble_mass(mesh)
    stiffness = assemble_stiffness(mesh)

    points, weights = _clipped_gauss(mesh, obs_window.a, obs_window.b)
    phi_l, phi_r = _hat_values(mesh, points)
    local = np.empty((mesh.n_elements, 2, 2))
    local[:, 0, 0] = np.sum(weights * phi_l * phi_l, axis=1)
    local[:, 1, 1] = np.sum(weights * phi_r * phi_r, axis=1)
    local[:, 0, 1] = local[:, 1, 0] = np.sum(weights * phi_l * phi_r, axis=1)
    observation = _assemble(mesh, obs_window.weight ** 2 * local)

    points, weights = _clipped_gauss(mesh, control_support.a, control_support.b)
    phi_l, phi_r = _hat_values(mesh, points)
    left, right = _interior_index(mesh)
    elements = np.arange(mesh.n_elements)
    rows, cols, vals = [], [], []
    for idx, phi in ((left, phi_l), (right, phi_r)):
        ok = idx >= 0
        rows.append(idx[ok])
        cols.append(elements[ok])
        vals.append(math.sqrt(beta) * np.sum(weights * phi, axis=1)[ok])
    control = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mesh.n_interior, mesh.n_elements),
    ).tocsr()
    control.eliminate_zeros()

    control_weight = np.diag(control_R_weight * mesh.element_sizes)

    return FemOperators(
        mesh=mesh,
        mass=mass,
        stiffness=stiffness,
        observation=observation,
        control=control,
        control_weight=control_weight,
        mu=float(mu),
        beta=float(beta),
        control_support=control_support,
        obs_window=obs_window,
    )


def _gauss4_points(mesh: Mesh):
    return _clipped_gauss(mesh, 0.0, mesh.length, rule=_GAUSS4)


def _sample(func: Callable, x: np.ndarray) -> np.ndarray:
    values = np.asarray(func(x), dtype=float)
    return np.broadcast_to(values, x.shape)


def load_vector(mesh: Mesh, func: Callable) -> np.ndarray:
    """(<f, phi_i>)_i with 4-point Gauss per element."""
    points, weights = _gauss4_points(mesh)
    phi_l, phi_r = _hat_values(mesh, points)
    values = _sample(func, points)
    left, right = _interior_index(mesh)
    load = np.zeros(mesh.n_interior)
    for idx, phi in ((left, phi_l), (right, phi_r)):
        ok = idx >= 0
        np.add.at(load, idx[ok], np.sum(weights * values * phi, axis=1)[ok])
    return load


def project_initial(
    mesh: Mesh, y0: Callable, mass: Optional[sparse.spmatrix] = None
) -> np.ndarray:
    """L2 projection of y0 onto the hat space: solves M y = (<y0, phi_i>)_i."""
    if mass is None:
        mass = assemble_mass(mesh)
    load = load_vector(mesh, y0)
    try:
        coefficients = splu(sparse.csc_matrix(mass)).solve(load)
    except RuntimeError as exc:
        raise NumericalError(f"mass matrix is singular: {exc}") from exc
    return coefficients


def l2_norm(mass, coefficients: np.ndarray) -> float:
    """sqrt(y^T M y), the L2 norm of the field with these coefficients."""
    y = np.asarray(coefficients, dtype=float)
    return math.sqrt(max(float(y @ (mass @ y)), 0.0))


def evaluate_field(mesh: Mesh, coefficients: np.ndarray, x) -> np.ndarray:
    """Point values of the piecewise-linear field (zero on the boundary)."""
    nodal = np.concatenate([[0.0], np.asarray(coefficients, dtype=float), [0.0]])
    return np.interp(np.asarray(x, dtype=float), mesh.nodes, nodal)


def l2_distance(mesh: Mesh, coefficients: np.ndarray, func: Callable) -> float:
    """||y_h - f||_{L2(0, L)} by 4-point Gauss per element."""
    points, weights = _gauss4_points(mesh)
    diff = evaluate_field(mesh, coefficients, points) - _sample(func, points)
    return math.sqrt(float(np.sum(weights * diff ** 2)))


def pencil_eigenvalues(ops: FemOperators) -> np.ndarray:
    """Eigenvalues of the pencil (A, M) in ascending order."""
    return la.eigh(ops.dynamics.toarray(), ops.mass.toarray(), eigvals_only=True)


def laplace_eigenvalues(mesh: Mesh) -> np.ndarray:
    """Eigenvalues of M^{-1} K (discrete Dirichlet-Laplace spectrum, ascending)."""
    return la.eigh(
        assemble_stiffness(mesh).toarray(),
        assemble_mass(mesh).toarray(),
        eigvals_only=True,
    )
