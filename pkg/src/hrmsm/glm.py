"""Weighted generalized linear models fitted by Newton / IRLS.

Four families are supported: ``gaussian_identity``, ``bernoulli_logit``
(responses in [0, 1], fractional responses give the quasi-likelihood fit),
``binomial_logit`` (responses are ``(C, N)`` pairs) and
``multinomial_logit`` (baseline-category logits, first level is the
baseline).  All fits maximise the weighted log-likelihood; the score is
``sum_i w_i x_i (y_i - mu_i)`` in response-residual form.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp, softmax

__all__ = [
    "FAMILIES",
    "GlmError",
    "GlmWarning",
    "GlmProblem",
    "GlmControls",
    "GlmFit",
    "fit",
    "score",
    "loglik",
    "information",
]

FAMILIES = ("gaussian_identity", "bernoulli_logit", "binomial_logit", "multinomial_logit")

SEPARATION_BOUND = 30.0


class GlmError(ValueError):
    """Invalid GLM problem (shapes, weights, too few informative rows)."""


class GlmWarning(UserWarning):
    """Non-convergence, rank deficiency or separation during a fit."""


@dataclass
class GlmProblem:
    X: np.ndarray
    y: np.ndarray
    family: str
    weights: np.ndarray | None = None
    n_levels: int = 2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise GlmError(f"unknown family {self.family!r}")
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n, p = X.shape
        y = np.asarray(self.y, dtype=np.int64 if self.family == "multinomial_logit" else float)
        w = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (n,):
            raise GlmError("weights must have one entry per row")
        if not np.isfinite(w).all() or (w < 0).any():
            raise GlmError("weights must be finite and non-negative")
        if not np.isfinite(X).all():
            raise GlmError("design matrix has non-finite entries")
        if self.family == "binomial_logit":
            if y.shape != (n, 2):
                raise GlmError("binomial responses must be (C, N) pairs")
            if (y[:, 1] < 0).any() or (y[:, 0] < 0).any() or (y[:, 0] > y[:, 1]).any():
                raise GlmError("binomial responses need 0 <= C <= N")
        else:
            if y.shape != (n,):
                raise GlmError("one response per row is required")
            if self.family == "bernoulli_logit" and ((y < 0) | (y > 1)).any():
                raise GlmError("bernoulli responses must lie in [0, 1]")
            if self.family == "multinomial_logit" and ((y < 0) | (y >= self.n_levels)).any():
                raise GlmError("multinomial response outside the level range")
        if not np.isfinite(y).all():
            raise GlmError("responses must be finite")
        if int((w > 0).sum()) < p:
            raise GlmError(f"{int((w > 0).sum())} positive-weight rows for {p} coefficients")
        self.X, self.y, self.weights = X, y, w

    @property
    def n_params(self) -> int:
        p = self.X.shape[1]
        return p * (self.n_levels - 1) if self.family == "multinomial_logit" else p

    def shape_beta(self, flat: np.ndarray) -> np.ndarray:
        if self.family == "multinomial_logit":
            return flat.reshape(self.n_levels - 1, self.X.shape[1]).T
        return flat


@dataclass
class GlmControls:
    max_iter: int = 100
    tol: float = 1e-8
    ridge: float = 1e-10


@dataclass
class GlmFit:
    """Result of :func:`fit`.

    ``beta`` is (p,) or, for multinomial, (p, levels-1).  ``score_norm`` is the
    max-norm of the score divided by the total weight, the quantity compared
    with ``tol``.
    """

    beta: np.ndarray
    family: str
    converged: bool
    iterations: int
    score_norm: float
    dispersion: float | None = None
    rank_deficient: bool = False
    separation: bool = False
    messages: list[str] = field(default_factory=list)

    def linear_predictor(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.beta

    def mean(self, X) -> np.ndarray:
        """Expected response (probability of success for the logit families)."""
        eta = self.linear_predictor(X)
        if self.family == "gaussian_identity":
            return eta
        if self.family == "multinomial_logit":
            return _multinomial_probs(eta)
        return expit(eta)

    def predict_proba(self, X) -> np.ndarray:
        """(N, levels) category probabilities for the logit families."""
        eta = self.linear_predictor(X)
        if self.family == "multinomial_logit":
            return _multinomial_probs(eta)
        if self.family == "gaussian_identity":
            raise GlmError("gaussian fits have no category probabilities")
        p1 = expit(eta)
        return np.column_stack([1 - p1, p1])


def _multinomial_probs(eta: np.ndarray) -> np.ndarray:
    full = np.column_stack([np.zeros(eta.shape[0]), eta])
    return softmax(full, axis=1)


def _eta(problem: GlmProblem, beta: np.ndarray) -> np.ndarray:
    return problem.X @ problem.shape_beta(np.asarray(beta, dtype=float).ravel()) if (
        problem.family == "multinomial_logit"
    ) else problem.X @ np.asarray(beta, dtype=float)


def _flat(problem: GlmProblem, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if problem.family == "multinomial_logit" and beta.ndim == 2:
        return beta.T.ravel()
    return beta.ravel()


def loglik(problem: GlmProblem, beta) -> float:
    """Weighted log-likelihood (gaussian: ``-0.5 * sum w r^2``, unit variance)."""
    b = _flat(problem, beta)
    eta = _eta(problem, b)
    w, y = problem.weights, problem.y
    fam = problem.family
    if fam == "gaussian_identity":
        return float(-0.5 * np.sum(w * (y - eta) ** 2))
    if fam == "bernoulli_logit":
        return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))
    if fam == "binomial_logit":
        return float(np.sum(w * (y[:, 0] * eta - y[:, 1] * np.logaddexp(0.0, eta))))
    full = np.column_stack([np.zeros(len(y)), eta])
    return float(np.sum(w * (full[np.arange(len(y)), y] - logsumexp(full, axis=1))))


def _residuals(problem: GlmProblem, eta: np.ndarray) -> np.ndarray:
    y, fam = problem.y, problem.family
    if fam == "gaussian_identity":
        return y - eta
    if fam == "bernoulli_logit":
        return y - expit(eta)
    if fam == "binomial_logit":
        return y[:, 0] - y[:, 1] * expit(eta)
    mu = _multinomial_probs(eta)[:, 1:]
    onehot = (y[:, None] == np.arange(1, problem.n_levels)[None, :]).astype(float)
    return onehot - mu


def score(problem: GlmProblem, beta) -> np.ndarray:
    """Gradient of :func:`loglik`: ``sum_i w_i x_i (y_i - mu_i)``.

    Multinomial scores are stacked level by level (level 1 block first).
    """
    b = _flat(problem, beta)
    r = _residuals(problem, _eta(problem, b))
    wr = problem.weights[:, None] * (r if r.ndim == 2 else r[:, None])
    return (problem.X.T @ wr).T.ravel()


def information(problem: GlmProblem, beta) -> np.ndarray:
    """Negative Hessian of :func:`loglik` (observed = expected for canonical links)."""
    b = _flat(problem, beta)
    eta = _eta(problem, b)
    X, w, fam = problem.X, problem.weights, problem.family
    if fam == "gaussian_identity":
        return X.T @ (w[:, None] * X)
    if fam in ("bernoulli_logit", "binomial_logit"):
        mu = expit(eta)
        v = mu * (1 - mu)
        if fam == "binomial_logit":
            v = v * problem.y[:, 1]
        return X.T @ ((w * v)[:, None] * X)
    mu = _multinomial_probs(eta)[:, 1:]
    m, p = mu.shape[1], X.shape[1]
    H = np.empty((m * p, m * p))
    for k in range(m):
        for l in range(k, m):
            c = mu[:, k] * ((k == l) - mu[:, l])
            block = X.T @ ((w * c)[:, None] * X)
            H[k * p : (k + 1) * p, l * p : (l + 1) * p] = block
            H[l * p : (l + 1) * p, k * p : (k + 1) * p] = block.T
    return H


def _separated(problem: GlmProblem, beta_flat: np.ndarray) -> bool:
    if problem.family == "gaussian_identity":
        return False
    sd = problem.X.std(axis=0)
    scale = np.where(sd > 0, sd, 1.0)
    if problem.family == "multinomial_logit":
        scale = np.tile(scale, problem.n_levels - 1)
    return bool(np.any(np.abs(beta_flat * scale) > SEPARATION_BOUND))


def fit(problem: GlmProblem, controls: GlmControls | None = None, start=None) -> GlmFit:
    """Maximum-likelihood fit by damped Newton (IRLS for the canonical links).

    A ridge of ``controls.ridge`` times the mean diagonal of the information
    is added to each Newton system for rank protection only; the fixed point
    still solves the unpenalised score equation.
    """
    ctl = controls or GlmControls()
    k = problem.n_params
    beta = np.zeros(k) if start is None else _flat(problem, start).copy()
    total_w = float(problem.weights.sum())
    if total_w <= 0:
        raise GlmError("total weight is zero")
    messages: list[str] = []
    rank_deficient = False
    ll = loglik(problem, beta)
    converged = False
    it = 0
    g = score(problem, beta)
    norm = float(np.max(np.abs(g))) / total_w
    while it < ctl.max_iter:
        if norm <= ctl.tol:
            converged = True
            break
        it += 1
        H = information(problem, beta)
        diag = np.diag(H)
        lam = ctl.ridge * max(float(diag.mean()), 1e-300)
        evals = np.linalg.eigvalsh(H)
        if evals[0] <= 1e-12 * max(evals[-1], 1e-300):
            rank_deficient = True
        try:
            step = np.linalg.solve(H + lam * np.eye(k), g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H + lam * np.eye(k), g, rcond=None)[0]
            rank_deficient = True
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            ll_new = loglik(problem, cand)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * (abs(ll) + 1.0):
                break
            t *= 0.5
        else:
            messages.append("step halving failed to increase the likelihood")
            break
        beta, ll = cand, ll_new
        g = score(problem, beta)
        norm = float(np.max(np.abs(g))) / total_w
    else:
        converged = norm <= ctl.tol

    separation = _separated(problem, beta)
    if not converged:
        messages.append(f"no convergence after {it} iterations; score norm {norm:.3e}")
        warnings.warn(f"GLM ({problem.family}) did not converge: score norm {norm:.3e}", GlmWarning)
    if rank_deficient:
        messages.append("design is (numerically) rank deficient; ridge applied")
        warnings.warn(f"GLM ({problem.family}) design is rank deficient", GlmWarning)
    if separation:
        messages.append("diverging coefficients suggest (quasi-)separation")
        warnings.warn(f"GLM ({problem.family}) shows signs of separation", GlmWarning)

    dispersion = None
    if problem.family == "gaussian_identity":
        r = problem.y - problem.X @ beta
        m = int((problem.weights > 0).sum())
        dof = max(m - k, 1)
        dispersion = float(np.sum(problem.weights * r**2) / total_w * m / dof)
    return GlmFit(
        beta=problem.shape_beta(beta),
        family=problem.family,
        converged=converged,
        iterations=it,
        score_norm=norm,
        dispersion=dispersion,
        rank_deficient=rank_deficient,
        separation=separation,
        messages=messages,
    )
