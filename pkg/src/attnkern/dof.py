"""Empirical degrees of freedom of the attention kernel and per-layer dimension allocation."""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ._parallel import derive_seed, pmap
from .attention import kernel_matrix
from .errors import ArgumentError, NumericalError

NORMALIZATIONS = ("raw", "mean")
DEFAULT_J = 1024


@dataclass
class GramMatrix:
    values: np.ndarray
    mode: str = "raw"

    @property
    def J(self):
        return self.values.shape[0]


@dataclass
class DoFReport:
    lam: float
    J: int
    seed: int
    table: np.ndarray  # (S, H)
    normalization: str = "raw"
    model_id: str = ""

    @property
    def layer_max(self):
        return self.table.max(axis=1)


@dataclass
class Allocation:
    budget: int
    lam: float
    t_inv: float
    dims: list = field(default_factory=list)
    clip: int | None = None


def sample_inputs(dump, layer, head, J, seed):
    """Draw ``J`` rows without replacement from the pooled queries and keys of one head."""
    q, k = dump.head(layer, head)
    pool = np.concatenate([q, k], axis=0)
    if not 1 <= J <= pool.shape[0]:
        raise ArgumentError(f"J={J} outside [1, pool size {pool.shape[0]}]")
    idx = np.random.default_rng(seed).choice(pool.shape[0], size=J, replace=False)
    return pool[idx]


def gram(points, mode="raw"):
    if mode not in NORMALIZATIONS:
        raise ArgumentError(f"normalization must be one of {NORMALIZATIONS}, got {mode!r}")
    points = np.asarray(points, dtype=np.float64)
    g = kernel_matrix(points, points)
    g = 0.5 * (g + g.T)
    if mode == "mean":
        g /= points.shape[0]
    return GramMatrix(g, mode)


def _smallest_pivot(a):
    _, dmat, _ = scipy.linalg.ldl(a)
    return float(np.min(np.linalg.eigvalsh(dmat)))


def cho_factor_shifted(g, lam):
    """Cholesky factor of ``sym(g) + lam*I``; raises :class:`NumericalError` on failure."""
    if not lam > 0:
        raise ArgumentError(f"lambda must be > 0, got {lam}")
    a = 0.5 * (g + g.T) + lam * np.eye(g.shape[0])
    try:
        return scipy.linalg.cho_factor(a, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as err:
        pivot = _smallest_pivot(a) if np.isfinite(a).all() else float("nan")
        raise NumericalError(
            f"G + lambda*I is not numerically positive definite (smallest pivot {pivot:.3e})",
            pivot=pivot,
        ) from err


def dof(g, lam):
    """``tr G (G + lam I)^-1`` computed as ``J - lam * tr (G + lam I)^-1`` via Cholesky."""
    values = g.values if isinstance(g, GramMatrix) else np.asarray(g, dtype=np.float64)
    J = values.shape[0]
    c, lower = cho_factor_shifted(values, lam)
    linv = scipy.linalg.solve_triangular(c, np.eye(J), lower=lower)
    trace_inv = float(np.sum(linv * linv))
    return float(np.clip(J - lam * trace_inv, 0.0, J))


def dof_report(dump, lam, J=None, seed=0, normalization="raw", model_id="", workers=None):
    """Fill the (layer, head) DoF table; each head uses its own seed derived from ``seed``.

    ``J=None`` uses ``min(DEFAULT_J, pool size)``; an explicit ``J`` larger than
    the pool is an error.
    """
    if J is None:
        J = min(DEFAULT_J, 2 * dump.T * dump.L)
    cells = [(s, h) for s in range(dump.S) for h in range(dump.H)]

    def one(cell):
        s, h = cell
        x = sample_inputs(dump, s, h, J, derive_seed(seed, s, h))
        return dof(gram(x, normalization), lam)

    values = pmap(one, cells, workers)
    table = np.array(values, dtype=np.float64).reshape(dump.S, dump.H)
    return DoFReport(float(lam), int(J), int(seed), table, normalization, model_id)


def allocate(report, C, clip=None):
    """Scale per-layer DoF so that the mean feature dimension matches the budget ``C``.

    ``report`` is a :class:`DoFReport` or a sequence of per-layer DoF values.
    """
    if isinstance(report, DoFReport):
        per_layer, lam = report.layer_max, report.lam
    else:
        per_layer, lam = np.asarray(report, dtype=np.float64), None
    if C < 1:
        raise ArgumentError(f"cost C must be >= 1, got {C}")
    if clip is not None and clip < 1:
        raise ArgumentError(f"clip must be >= 1, got {clip}")
    if per_layer.size == 0 or not np.all(per_layer > 0):
        raise ArgumentError("every per-layer DoF must be > 0")
    t_inv = C / per_layer.mean()
    dims = np.maximum(1, np.rint(t_inv * per_layer)).astype(int)
    if clip is not None:
        dims = np.minimum(dims, clip)
    return Allocation(int(C), lam, float(t_inv), [int(m) for m in dims], clip)
