"""Quadrature grids and grid functions.

Every integral over the source domain (Omega) or the data domain (Gamma)
is replaced by a weighted sum over the nodes of a :class:`Grid`.  Only
one-dimensional midpoint grids are built here; the weights are then all
equal to ``(b - a) / n``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Grid",
    "GridFunction",
    "GridMismatchError",
    "make_uniform_grid",
    "inner_product",
    "norm",
    "values_of",
]


class GridMismatchError(ValueError):
    """Raised when two grid functions live on different grids."""


@dataclass(frozen=True, eq=False)
class Grid:
    """Ordered quadrature nodes with strictly positive weights.

    Parameters
    ----------
    nodes : array_like
        Strictly increasing node coordinates.
    weights : array_like
        Positive quadrature weights, one per node.
    domain_label : str, optional
        Free-form label, conventionally ``"Omega"`` (unknowns) or
        ``"Gamma"`` (data).
    a, b : float, optional
        Interval covered by the grid.  When given, the weights must sum to
        ``b - a`` up to ``1e-12`` relative error.
    """

    nodes: np.ndarray
    weights: np.ndarray
    domain_label: str = "Omega"
    a: float | None = None
    b: float | None = None

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        weights = np.array(self.weights, dtype=float)
        if nodes.ndim != 1 or nodes.shape != weights.shape or nodes.size == 0:
            raise ValueError("nodes and weights must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(nodes)) and np.all(np.isfinite(weights))):
            raise ValueError("nodes and weights must be finite")
        if np.any(weights <= 0):
            raise ValueError("quadrature weights must be strictly positive")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        if self.a is not None and self.b is not None:
            length = float(self.b) - float(self.a)
            if abs(weights.sum() - length) > 1e-12 * abs(length):
                raise ValueError("weights do not sum to the interval length")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def measure(self) -> float:
        """Total measure of the covered set (sum of the weights)."""
        return float(self.weights.sum())

    def __len__(self):
        return self.size

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Grid):
            return NotImplemented
        return (
            np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.weights, other.weights)
        )

    def __hash__(self):
        return hash((self.nodes.tobytes(), self.weights.tobytes()))

    def function(self, values) -> GridFunction:
        """Wrap ``values`` (array or callable of the nodes) as a grid function."""
        if callable(values):
            values = values(self.nodes)
        return GridFunction(self, np.broadcast_to(np.asarray(values, dtype=float), (self.size,)))

    def to_dict(self) -> dict:
        if self.a is None or self.b is None:
            raise ValueError("only uniform midpoint grids are serializable")
        return {"a": self.a, "b": self.b, "n": self.size, "rule": "midpoint",
                "label": self.domain_label}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> Grid:
        if d.get("rule", "midpoint") != "midpoint":
            raise ValueError(f"unsupported quadrature rule {d.get('rule')!r}")
        return make_uniform_grid(d["a"], d["b"], d["n"], d.get("label", "Omega"))

    @classmethod
    def from_json(cls, text: str) -> Grid:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Finite real values attached to the nodes of a grid.

    Instances convert to arrays through ``np.asarray``, so every routine
    in the package that expects node values also accepts grid functions.
    """

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.size,):
            raise ValueError(
                f"expected {self.grid.size} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values
        return self.values.astype(dtype)

    def __len__(self):
        return self.values.size

    def _wrap(self, other, op):
        if isinstance(other, GridFunction):
            _check_same(self.grid, other.grid)
            other = other.values
        return GridFunction(self.grid, op(self.values, other))

    def __add__(self, other):
        return self._wrap(other, np.add)

    def __radd__(self, other):
        return self._wrap(other, np.add)

    def __sub__(self, other):
        return self._wrap(other, np.subtract)

    def __rsub__(self, other):
        return self._wrap(other, lambda x, y: y - x)

    def __mul__(self, other):
        return self._wrap(other, np.multiply)

    def __rmul__(self, other):
        return self._wrap(other, np.multiply)

    def __truediv__(self, other):
        return self._wrap(other, np.divide)

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())


def make_uniform_grid(a: float, b: float, n: int, domain_label: str = "Omega") -> Grid:
    """Midpoint grid with ``n`` cells on ``[a, b]``.

    Examples
    --------
    >>> g = make_uniform_grid(0, 1, 4)
    >>> g.nodes
    array([0.125, 0.375, 0.625, 0.875])
    >>> g.weights
    array([0.25, 0.25, 0.25, 0.25])
    """
    if not (np.isfinite(a) and np.isfinite(b)):
        raise ValueError("grid bounds must be finite")
    if not a < b:
        raise ValueError("need a < b")
    if int(n) != n or n < 2:
        raise ValueError("need at least two nodes")
    n = int(n)
    h = (b - a) / n
    nodes = a + h * (np.arange(n) + 0.5)
    return Grid(nodes, np.full(n, h), domain_label, float(a), float(b))


def _check_same(g1: Grid, g2: Grid):
    if g1 is not g2 and g1 != g2:
        raise GridMismatchError("grid functions live on different grids")


def values_of(u, grid: Grid | None = None) -> np.ndarray:
    """Node values of ``u`` as a float array, checking the grid if possible."""
    if isinstance(u, GridFunction):
        if grid is not None:
            _check_same(u.grid, grid)
        return u.values
    arr = np.asarray(u, dtype=float)
    if grid is not None and arr.shape != (grid.size,):
        raise GridMismatchError(f"expected {grid.size} values, got shape {arr.shape}")
    return arr


def inner_product(u: GridFunction, v: GridFunction) -> float:
    """Quadrature of ``u * v``, i.e. ``sum_i w_i u_i v_i``."""
    _check_same(u.grid, v.grid)
    return float(np.dot(u.grid.weights, u.values * v.values))


def norm(u: GridFunction, p=2) -> float:
    """Weighted L^p norm for ``p`` in {1, 2, inf}.

    The sup norm is the plain maximum of ``|u_i|``; a discrete measure has
    no null sets.
    """
    if p == 1:
        return float(np.dot(u.grid.weights, np.abs(u.values)))
    if p == 2:
        return float(np.sqrt(np.dot(u.grid.weights, u.values ** 2)))
    if p in (np.inf, "inf", "∞"):
        return float(np.max(np.abs(u.values)))
    raise ValueError(f"unsupported norm exponent {p!r}")
