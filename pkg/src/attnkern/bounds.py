"""Monte-Carlo checks of the kernel-approximation error bounds on empirical proxies.

Population objects are replaced by their J-sample counterparts: the integral
operator becomes the mean-normalized Gram ``G/J``, ``L2(rho)`` norms become
root-mean-squares over the data, and the supremum over feature locations
becomes a maximum over a finite Gaussian candidate pool.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import derive_seed
from .attention import kernel_matrix, prf_features
from .errors import ArgumentError
from .sampling import leverage_scores, make_pool, sample_leverage, sample_uniform

SAMPLERS = ("uniform", "leverage")
DEFAULT_POOL = 4096


@dataclass
class BoundConstants:
    trace: float
    op_norm: float

    @classmethod
    def from_data(cls, data):
        g = kernel_matrix(data, data) / data.shape[0]
        g = 0.5 * (g + g.T)
        return cls(float(np.trace(g)), float(np.linalg.eigvalsh(g)[-1]))

    @property
    def c1(self):
        return 5.0 * self.trace

    @property
    def c2(self):
        return self.trace * self.op_norm

    def c3(self, alpha, lam):
        return math.sqrt(2.0) * (max(self.op_norm, math.sqrt(self.op_norm)) + lam ** (1.0 - alpha))


@dataclass
class BoundTrialRecord:
    item: str
    lam: float
    t: float
    delta: float
    M_required: int
    M_used: int
    lhs: float
    rhs: float
    violated: bool
    seed: int


@dataclass
class VerificationResult:
    records: list
    violation_rate: float
    slack: float
    allowed: float
    N: float = float("nan")
    constants: BoundConstants | None = None
    extra: dict = field(default_factory=dict)

    @property
    def passed(self):
        return bool(self.violation_rate <= self.allowed)


def feature_threshold(N, t, delta, form="squared"):
    """Feature count guaranteeing ``||Delta_lambda||_op <= t`` w.p. ``1 - delta``.

    ``form="squared"`` uses ``(4N/t^2) log(64N/(delta t^2))``; ``form="linear"``
    uses ``(4N/t) log(64N/(delta t))``. The result is at least 1.
    """
    if not N > 0:
        raise ArgumentError(f"N must be > 0, got {N}")
    if not 0 < t <= 3:
        raise ArgumentError(f"t must lie in (0, 3], got {t}")
    if not 0 < delta <= 1:
        raise ArgumentError(f"delta must lie in (0, 1], got {delta}")
    if form == "squared":
        s = t * t
    elif form == "linear":
        s = t
    else:
        raise ArgumentError(f"form must be 'squared' or 'linear', got {form!r}")
    value = (4.0 * N / s) * math.log(64.0 * N / (delta * s))
    return max(1, math.ceil(value))


def empirical_nql(data, pool, lam, density=None, mode="mean", gram_matrix=None):
    """Max over the pool of ``score / q``.

    ``density`` is ``None`` (q = 1), ``"leverage"`` (q proportional to the
    scores, normalized to mean one over the pool) or an array of q values.
    """
    if pool.scores is None:
        pool = leverage_scores(pool, data, lam, mode, gram_matrix)
    s = pool.scores
    if density is None:
        return float(s.max())
    if isinstance(density, str):
        if density != "leverage":
            raise ArgumentError(f"unknown density {density!r}")
        q = s / s.mean()
        keep = q > 0
        return float(np.max(s[keep] / q[keep]))
    q = np.asarray(density, dtype=np.float64)
    if q.shape != s.shape or not (q > 0).all():
        raise ArgumentError("density must be positive with one value per candidate")
    return float(np.max(s / q))


def approx_gram(data, fm, chunk=8192):
    """``Phi(X) Phi(X)^T`` accumulated over feature chunks to bound memory."""
    J = data.shape[0]
    out = np.zeros((J, J))
    for start in range(0, fm.M, chunk):
        sub = type(fm)(fm.Z[start:start + chunk], fm.log_weights[start:start + chunk])
        f = prf_features(data, sub) * math.sqrt(sub.M / fm.M)
        out += f @ f.T
    return out


def kernel_l2_error(data, fm):
    """Root-mean-square of ``K - K_hat`` over all ``J^2`` data pairs."""
    data = np.asarray(data, dtype=np.float64)
    diff = kernel_matrix(data, data) - approx_gram(data, fm)
    return float(np.sqrt(np.mean(diff * diff)))


def _inv_sqrt(g, lam):
    w, V = np.linalg.eigh(0.5 * (g + g.T))
    return (V / np.sqrt(np.maximum(w, 0.0) + lam)) @ V.T


def operator_concentration(data, fm, lam, mode="mean"):
    """``||(G + lam I)^-1/2 (G - G_hat)(G + lam I)^-1/2||_op`` on the data Gram proxies."""
    if not lam > 0:
        raise ArgumentError(f"lambda must be > 0, got {lam}")
    data = np.asarray(data, dtype=np.float64)
    scale = 1.0 / data.shape[0] if mode == "mean" else 1.0
    g = kernel_matrix(data, data) * scale
    ghat = approx_gram(data, fm) * scale
    w = _inv_sqrt(g, lam)
    delta = w @ (g - ghat) @ w
    return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (delta + delta.T)))))


def _setup(data, lam, t, delta, sampler, seed, pool_size, m_scale, form):
    if sampler not in SAMPLERS:
        raise ArgumentError(f"sampler must be one of {SAMPLERS}, got {sampler!r}")
    data = np.asarray(data, dtype=np.float64)
    pool = make_pool(pool_size, data.shape[1], derive_seed(seed, 0xB0))
    pool = leverage_scores(pool, data, lam, "mean")
    if sampler == "uniform":
        N = empirical_nql(data, pool, lam)
    else:
        N = empirical_nql(data, pool, lam, density="leverage")
    m_req = feature_threshold(N, t, delta, form)
    m_used = max(1, math.ceil(m_scale * m_req))
    return data, pool, N, m_req, m_used


def _draw(sampler, pool, M, d, seed):
    if sampler == "uniform":
        return sample_uniform(M, d, seed)
    return sample_leverage(pool, M, seed, allow_oversample=True)


def _finish(records, slack, allowed, N, consts, **extra):
    rate = sum(r.violated for r in records) / len(records)
    return VerificationResult(records, rate, slack, allowed, N, consts, extra)


def verify_kernel_error(data, lam, t, delta, trials=100, seed=0, sampler="uniform",
                        pool_size=DEFAULT_POOL, m_scale=1.0, form="squared"):
    """Check ``||K - K_hat||^2 <= lam t C1 / delta + t^2 C2`` over independent feature draws.

    ``lhs`` in each record is the squared empirical L2 error. The allowed
    violation rate is ``2 delta`` plus three binomial standard deviations.
    """
    if trials < 1:
        raise ArgumentError("trials must be >= 1")
    data, pool, N, m_req, m_used = _setup(data, lam, t, delta, sampler, seed, pool_size, m_scale, form)
    consts = BoundConstants.from_data(data)
    rhs = lam * t * consts.c1 / delta + t * t * consts.c2
    records = []
    for i in range(trials):
        s = derive_seed(seed, i)
        lhs = kernel_l2_error(data, _draw(sampler, pool, m_used, data.shape[1], s)) ** 2
        records.append(BoundTrialRecord("i", lam, t, delta, m_req, m_used, float(lhs), float(rhs), bool(lhs > rhs), s))
    p = min(2 * delta, 1.0)
    slack = 3.0 * math.sqrt(p * (1.0 - p) / trials)
    return _finish(records, slack, p + slack, N, consts)


def verify_integration_error(data, values=None, lam=0.1, t=0.5, delta=0.1, trials=100, seed=0,
                             sampler="uniform", pool_size=DEFAULT_POOL, m_scale=1.0, form="squared"):
    """Check the kernel-integration bound at exponent 0.

    ``lhs = ||(G_hat - G) v / J||_2 / sqrt(J)`` and
    ``rhs = sqrt(2) (lam + max(||S||, ||S||^1/2)) t ||v||_2 / sqrt(J)``.
    ``values`` defaults to a random unit vector.
    """
    if trials < 1:
        raise ArgumentError("trials must be >= 1")
    data, pool, N, m_req, m_used = _setup(data, lam, t, delta, sampler, seed, pool_size, m_scale, form)
    J = data.shape[0]
    if values is None:
        values = np.random.default_rng(derive_seed(seed, 0xA1)).standard_normal(J)
        values /= np.linalg.norm(values)
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.shape[0] != J:
        raise ArgumentError(f"values has {v.shape[0]} entries for J={J}")
    consts = BoundConstants.from_data(data)
    g = kernel_matrix(data, data)
    rhs = float(consts.c3(0.0, lam) * t * np.linalg.norm(v) / math.sqrt(J))
    records = []
    for i in range(trials):
        s = derive_seed(seed, i)
        ghat = approx_gram(data, _draw(sampler, pool, m_used, data.shape[1], s))
        lhs = float(np.linalg.norm((ghat - g) @ v / J) / math.sqrt(J))
        records.append(BoundTrialRecord("ii", lam, t, delta, m_req, m_used, lhs, rhs, bool(lhs > rhs), s))
    slack = 3.0 * math.sqrt(delta * (1.0 - delta) / trials)
    return _finish(records, slack, delta + slack, N, consts)


def integration_error_diagnostic(data, fm, h, lam, t, alpha=0.5):
    """Both sides of the integration bound for ``v = (S + lam I)^-alpha h`` (no assertion).

    Returns ``(lhs, rhs)``; the fractional power uses a symmetric eigensolve.
    """
    data = np.asarray(data, dtype=np.float64)
    J = data.shape[0]
    g = kernel_matrix(data, data)
    w, V = np.linalg.eigh(0.5 * (g + g.T) / J)
    v = (V * (np.maximum(w, 0.0) + lam) ** (-alpha)) @ V.T @ h
    lhs = np.linalg.norm((approx_gram(data, fm) - g) @ v / J) / math.sqrt(J)
    consts = BoundConstants(float(w.sum()), float(w[-1]))
    return float(lhs), float(consts.c3(alpha, lam) * t * np.linalg.norm(h) / math.sqrt(J))
