"""Finite differences over uniform sample grids."""
import itertools

import numpy as np

from flatforge.errors import GridError


def derivative(values, axis, spacing):
    """
    Partial derivative of gridded values along `axis`.

    4th-order central stencil where two neighbours exist on each side,
    numpy.gradient (2nd order, one-sided at the ends) elsewhere.
    """
    values = np.asarray(values)
    count = values.shape[axis]
    if count < 3:
        raise GridError(f"need at least 3 points along axis {axis}, got {count}")
    out = np.gradient(values, spacing, axis=axis, edge_order=2)
    if count >= 5:
        v = np.moveaxis(values, axis, 0)
        o = np.moveaxis(out, axis, 0)
        o[2:-2] = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12 * spacing)
    return out


def interior_indices(counts):
    """Grid indices at least one step away from every edge."""
    return list(itertools.product(*(range(1, c - 1) for c in counts)))


def curvature(B1, B2, d1B2, d2B1):
    """d1 B2 - d2 B1 + [B1, B2] for stacks of matrices (last two axes)."""
    return d1B2 - d2B1 + np.matmul(B1, B2) - np.matmul(B2, B1)
