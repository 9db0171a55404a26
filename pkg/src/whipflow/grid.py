"""Uniform discretization of the unit arc-length interval.

All solvers share one staggered layout: positions and tensions live on the
nodes ``s_i = i*h``, tangents and fluxes live on the midpoints
``s_{i+1/2} = (i+1/2)*h``.  This makes the divergence of a midpoint flux a
natural node-centered difference and keeps every boundary term
single-valued.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class Grid:
    """Uniform grid on (0, 1) with ``n_cells`` intervals."""

    n_cells: int
    h: float = field(init=False)
    nodes: np.ndarray = field(init=False, repr=False)
    midpoints: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 1:
            raise ValueError(f"n_cells must be a positive integer, got {self.n_cells}")
        n = int(self.n_cells)
        h = 1.0 / n
        nodes = np.linspace(0.0, 1.0, n + 1)
        mids = 0.5 * (nodes[:-1] + nodes[1:])
        nodes.flags.writeable = False
        mids.flags.writeable = False
        object.__setattr__(self, "n_cells", n)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "midpoints", mids)

    @property
    def n_nodes(self) -> int:
        return self.n_cells + 1

    def _check_nodal(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.n_nodes:
            raise ShapeError(
                f"expected {self.n_nodes} node samples, got {values.shape[0]}"
            )
        return values

    def _check_midpoint(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.n_cells:
            raise ShapeError(
                f"expected {self.n_cells} midpoint samples, got {values.shape[0]}"
            )
        return values

    def diff_forward(self, values: np.ndarray) -> np.ndarray:
        """First difference mapping node samples to midpoint samples.

        Exact for affine data; works on scalar fields ``(n+1,)`` and vector
        fields ``(n+1, d)`` alike.
        """
        values = self._check_nodal(values)
        return (values[1:] - values[:-1]) / self.h

    def quad_trapezoid(self, values: np.ndarray) -> float:
        """Trapezoid rule for a node-sampled scalar field; exact for affine
        integrands."""
        values = self._check_nodal(values)
        if values.ndim != 1:
            raise ShapeError("quad_trapezoid expects a scalar field")
        return self.h * (values.sum() - 0.5 * (values[0] + values[-1]))

    def quad_midpoint(self, values: np.ndarray) -> float:
        """Midpoint rule for a midpoint-sampled scalar field."""
        values = self._check_midpoint(values)
        if values.ndim != 1:
            raise ShapeError("quad_midpoint expects a scalar field")
        return self.h * values.sum()
