"""Initial laws for particle ensembles and grid densities."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from . import rng
from .errors import ConfigError, PreconditionError

KINDS = ("uniform", "gaussian", "dirac", "atoms")


@dataclass(frozen=True)
class InitialLaw:
    """A law with finite fourth moment on ``R^d``.

    kinds
        ``uniform``  componentwise uniform on ``[low, high]``;
        ``gaussian`` independent normals with ``mean`` and ``std``;
        ``dirac``    point mass at ``point``;
        ``atoms``    equal-weight atoms; sample ``i`` is atom ``i mod k``, so
                     any sample size divisible by ``k`` reproduces the law
                     exactly.
    """

    kind: str = "uniform"
    low: float | Sequence[float] = -3.0
    high: float | Sequence[float] = 3.0
    mean: float | Sequence[float] = 0.0
    std: float | Sequence[float] = 1.0
    point: float | Sequence[float] = 0.0
    atoms: Optional[Sequence] = field(default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown initial law {self.kind!r}; expected one of {KINDS}")
        if self.kind == "uniform" and np.any(np.asarray(self.high) <= np.asarray(self.low)):
            raise ConfigError("uniform law needs high > low")
        if self.kind == "gaussian" and np.any(np.asarray(self.std) < 0):
            raise ConfigError("gaussian std must be nonnegative")
        if self.kind == "atoms" and not self.atoms:
            raise ConfigError("atoms law needs at least one atom")

    def sample(self, n: int, dim: int, seed: int, stream: Sequence[int] = ()) -> np.ndarray:
        """``n`` draws as an ``(n, dim)`` array from substream ``(INIT, *stream)``."""
        g = rng.generator(seed, (rng.INIT, *stream))
        shape = (n, dim)
        if self.kind == "uniform":
            low = np.broadcast_to(np.asarray(self.low, float), (dim,))
            high = np.broadcast_to(np.asarray(self.high, float), (dim,))
            return low + (high - low) * g.random(shape)
        if self.kind == "gaussian":
            mean = np.broadcast_to(np.asarray(self.mean, float), (dim,))
            std = np.broadcast_to(np.asarray(self.std, float), (dim,))
            return mean + std * g.standard_normal(shape)
        if self.kind == "dirac":
            return np.broadcast_to(np.asarray(self.point, float), shape).copy()
        atoms = np.asarray(self.atoms, dtype=float).reshape(len(self.atoms), -1)
        if atoms.shape[1] == 1 and dim > 1:
            atoms = np.repeat(atoms, dim, axis=1)
        if atoms.shape[1] != dim:
            raise PreconditionError(f"atoms have dimension {atoms.shape[1]}, expected {dim}")
        return atoms[np.arange(n) % atoms.shape[0]].copy()

    def cell_masses(self, edges: np.ndarray) -> np.ndarray:
        """Exact probability of each cell ``[edges[j], edges[j+1])`` for a 1D law.

        Point masses go to the cell containing them (the last cell is closed).
        Mass outside the edges is dropped; callers renormalize if needed.
        """
        edges = np.asarray(edges, dtype=float)
        if self.kind == "uniform":
            low, high = float(np.ravel(self.low)[0]), float(np.ravel(self.high)[0])
            cdf = np.clip((edges - low) / (high - low), 0.0, 1.0)
            return np.diff(cdf)
        if self.kind == "gaussian":
            mean, std = float(np.ravel(self.mean)[0]), float(np.ravel(self.std)[0])
            if std > 0:
                return np.diff(ndtr((edges - mean) / std))
            points = np.array([mean])
        elif self.kind == "dirac":
            points = np.ravel(np.asarray(self.point, float))[:1]
        else:
            points = np.asarray(self.atoms, dtype=float).ravel()
        masses = np.zeros(edges.size - 1)
        idx = np.searchsorted(edges, points, side="right") - 1
        idx = np.where(points == edges[-1], edges.size - 2, idx)
        ok = (idx >= 0) & (idx < masses.size)
        np.add.at(masses, idx[ok], 1.0 / points.size)
        return masses
