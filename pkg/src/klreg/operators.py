"""Discretized Fredholm integral operators of the first kind.

``A u (t) = \\int a(t, s) u(s) ds`` is realized by midpoint quadrature,
``M[j, i] = a(t_j, s_i) w_i``.  The adjoint is taken with respect to the
weighted inner products of the two grids, so ``<Au, p>_Gamma`` and
``<u, A*p>_Omega`` agree up to roundoff.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .grid import Grid, GridFunction, values_of

__all__ = [
    "DiscreteOperator",
    "SingularSystemError",
    "KERNELS",
    "make_kernel",
    "fredholm_from_kernel",
    "apply",
    "adjoint_apply",
    "operator_norm",
    "least_squares_preimage",
    "range_decomposition",
]


class SingularSystemError(np.linalg.LinAlgError):
    """Normal equations are numerically singular; retry with a ridge."""


def _gaussian(amp=1.0, width=0.02, floor=0.1):
    return lambda t, s: amp * np.exp(-(t - s) ** 2 / width) + floor


def _constant(value=1.0):
    return lambda t, s: np.full(np.broadcast(t, s).shape, float(value))


def _bilinear(c=1.0):
    return lambda t, s: 1.0 + c * t * s


def _exponential(amp=1.0, scale=0.1, floor=0.1):
    return lambda t, s: amp * np.exp(-np.abs(t - s) / scale) + floor


#: Named kernel families.  Each factory maps keyword parameters to a
#: vectorized callable ``a(t, s)``.
KERNELS: dict[str, Callable[..., Callable]] = {
    "gaussian": _gaussian,
    "constant": _constant,
    "bilinear": _bilinear,
    "exponential": _exponential,
}


def make_kernel(name: str, **params) -> Callable:
    try:
        factory = KERNELS[name]
    except KeyError:
        raise ValueError(f"unknown kernel {name!r}; known: {sorted(KERNELS)}") from None
    return factory(**params)


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Matrix realization of an integral operator between two grids.

    Parameters
    ----------
    matrix : ndarray, shape (m, n)
        Rows belong to the codomain (data) grid, columns to the domain grid.
        Quadrature weights of the domain are already folded in.
    domain_grid, codomain_grid : Grid
    kernel_name : str, optional
        Name in :data:`KERNELS`, used for serialization.
    kernel_params : dict, optional
    kernel_lower, kernel_upper : float, optional
        Extreme kernel values over all node pairs.
    """

    matrix: np.ndarray = field(repr=False)
    domain_grid: Grid
    codomain_grid: Grid
    kernel_name: str | None = None
    kernel_params: dict = field(default_factory=dict)
    kernel_lower: float = float("nan")
    kernel_upper: float = float("nan")

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float)
        if matrix.shape != (self.codomain_grid.size, self.domain_grid.size):
            raise ValueError("matrix shape does not match the grids")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("operator matrix must be finite")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def shape(self):
        return self.matrix.shape

    # array level ---------------------------------------------------------
    def matvec(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u

    def rmatvec(self, p: np.ndarray) -> np.ndarray:
        """Weighted adjoint on raw node values."""
        return (self.matrix.T @ (self.codomain_grid.weights * p)) / self.domain_grid.weights

    # grid function level -------------------------------------------------
    def __call__(self, u) -> GridFunction:
        return apply(self, u)

    @property
    def adjoint(self) -> Callable:
        return lambda p: adjoint_apply(self, p)

    @cached_property
    def scaled_matrix(self) -> np.ndarray:
        """Matrix of the operator in orthonormal coordinates.

        ``diag(sqrt(w_Gamma)) M diag(1 / sqrt(w_Omega))``; its Euclidean
        singular values are the singular values of ``A`` between the
        weighted L^2 spaces.
        """
        return (np.sqrt(self.codomain_grid.weights)[:, None] * self.matrix
                / np.sqrt(self.domain_grid.weights)[None, :])

    @cached_property
    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.scaled_matrix, compute_uv=False)

    @cached_property
    def norm(self) -> float:
        """Weighted operator norm, estimated by power iteration."""
        return operator_norm(self)

    # serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel_name,
            "params": dict(self.kernel_params),
            "domain_grid": self.domain_grid.to_dict(),
            "codomain_grid": self.codomain_grid.to_dict(),
            "shape": list(self.shape),
            "kernel_lower": self.kernel_lower,
            "kernel_upper": self.kernel_upper,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def matrix_bytes(self) -> bytes:
        """Row-major little-endian float64 dump of the matrix."""
        return np.ascontiguousarray(self.matrix, dtype="<f8").tobytes()

    @classmethod
    def from_dict(cls, d: dict, matrix_bytes: bytes | None = None) -> DiscreteOperator:
        dom = Grid.from_dict(d["domain_grid"])
        cod = Grid.from_dict(d["codomain_grid"])
        if matrix_bytes is None:
            if d.get("kernel") is None:
                raise ValueError("operator without a named kernel needs a matrix dump")
            return fredholm_from_kernel(d["kernel"], dom, cod, **d.get("params", {}))
        mat = np.frombuffer(matrix_bytes, dtype="<f8").reshape(cod.size, dom.size)
        return cls(mat.astype(float), dom, cod, d.get("kernel"), dict(d.get("params", {})),
                   d.get("kernel_lower", float("nan")), d.get("kernel_upper", float("nan")))


def fredholm_from_kernel(kernel, domain_grid: Grid, codomain_grid: Grid,
                         **params) -> DiscreteOperator:
    """Quadrature matrix of ``u -> int a(., s) u(s) ds``.

    Parameters
    ----------
    kernel : str or callable
        Either a name from :data:`KERNELS` (``params`` are then passed to
        the factory) or a vectorized callable ``a(t, s)``.
    domain_grid, codomain_grid : Grid
        Grids for ``s`` and ``t``.

    Examples
    --------
    >>> from klreg.grid import make_uniform_grid
    >>> g = make_uniform_grid(0, 1, 8)
    >>> A = fredholm_from_kernel("constant", g, g)
    >>> A.matvec(np.ones(8))
    array([1., 1., 1., 1., 1., 1., 1., 1.])
    """
    name = None
    if isinstance(kernel, str):
        name = kernel
        kernel = make_kernel(kernel, **params)
    elif params:
        raise TypeError("params are only accepted together with a kernel name")
    t = codomain_grid.nodes[:, None]
    s = domain_grid.nodes[None, :]
    values = np.asarray(kernel(t, s), dtype=float)
    values = np.broadcast_to(values, (t.size, s.size))
    if not np.all(np.isfinite(values)):
        raise ValueError("kernel is not finite at every node pair")
    matrix = values * domain_grid.weights[None, :]
    return DiscreteOperator(matrix, domain_grid, codomain_grid, name, dict(params),
                            float(values.min()), float(values.max()))


def apply(A: DiscreteOperator, u) -> GridFunction:
    """Image ``A u`` on the codomain grid."""
    return GridFunction(A.codomain_grid, A.matvec(values_of(u, A.domain_grid)))


def adjoint_apply(A: DiscreteOperator, p) -> GridFunction:
    """Weighted adjoint, ``(A*p)(s_i) = sum_j w_j a(t_j, s_i) p(t_j)``."""
    return GridFunction(A.domain_grid, A.rmatvec(values_of(p, A.codomain_grid)))


def operator_norm(A: DiscreteOperator, iters: int = 50, tol: float = 1e-9) -> float:
    """Power iteration on ``A*A`` in the weighted spaces.

    The start vector is fixed, so the estimate is deterministic.
    """
    x = np.linspace(1.0, 2.0, A.domain_grid.size)
    wd = A.domain_grid.weights
    x /= np.sqrt(np.dot(wd, x * x))
    est = 0.0
    for _ in range(iters):
        y = A.rmatvec(A.matvec(x))
        ny = np.sqrt(np.dot(wd, y * y))
        if ny == 0.0:
            return 0.0
        new = np.sqrt(ny)
        x = y / ny
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return float(est)


def _orthonormal_system(A: DiscreteOperator, g: np.ndarray):
    sw_d = np.sqrt(A.domain_grid.weights)
    sw_c = np.sqrt(A.codomain_grid.weights)
    U, s, Vt = np.linalg.svd(A.scaled_matrix, full_matrices=False)
    return U, s, Vt, sw_d, sw_c, sw_c * g


def least_squares_preimage(A: DiscreteOperator, g, ridge: float = 0.0, refine: int = 1):
    """Minimize ``||A v - g||^2 + ridge ||v||^2`` in the weighted norms.

    Parameters
    ----------
    A : DiscreteOperator
    g : GridFunction or array_like
        Target on the codomain grid.
    ridge : float
        Tikhonov weight.  With ``ridge == 0`` the system must have full
        column rank numerically, otherwise :class:`SingularSystemError` is
        raised and the caller should retry with a positive ridge (a
        common choice is ``1e-10 * A.norm**2``).
    refine : int
        Iterative refinement steps on top of the ridge solve (iterated
        Tikhonov).  Each step squares the ridge bias on well-resolved range
        components, so exact range elements are recovered to roundoff.

    Returns
    -------
    v : GridFunction
    residual : float
        ``||A v - g|| / max(||g||, 1e-300)``.
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    g = values_of(g, A.codomain_grid)
    U, s, Vt, sw_d, sw_c, b = _orthonormal_system(A, g)
    if ridge == 0.0:
        n = A.domain_grid.size
        if s.size < n or s[-1] <= max(A.shape) * np.finfo(float).eps * s[0]:
            raise SingularSystemError("normal equations are singular; use ridge > 0")
        filt = 1.0 / s
    else:
        # iterated Tikhonov filter (1 - (ridge / (s^2 + ridge))^(refine + 1)) / s
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = ridge / (s * s + ridge)
            filt = np.where(s > 0, -np.expm1((refine + 1) * np.log1p(-(1.0 - lam))) / s, 0.0)
    x = Vt.T @ (filt * (U.T @ b))
    v = x / sw_d
    r = A.matvec(v) - g
    wc = A.codomain_grid.weights
    gnorm = np.sqrt(np.dot(wc, g * g))
    residual = float(np.sqrt(np.dot(wc, r * r)) / max(gnorm, 1e-300))
    return GridFunction(A.domain_grid, v), residual


def range_decomposition(A: DiscreteOperator, g, rcond: float = 1e-10):
    """Split ``g`` into parts in and orthogonal to the numerical range of ``A``.

    The range is spanned by left singular vectors with singular value above
    ``rcond * sigma_max`` (weighted inner product on the codomain).

    Returns
    -------
    inside, outside : GridFunction
    """
    g = values_of(g, A.codomain_grid)
    U, s, _, _, sw_c, b = _orthonormal_system(A, g)
    keep = s > rcond * s[0] if s.size else np.zeros(0, bool)
    Uk = U[:, keep]
    inside = (Uk @ (Uk.T @ b)) / sw_c
    return (GridFunction(A.codomain_grid, inside),
            GridFunction(A.codomain_grid, g - inside))
