"""Double robust (augmented IPTW) estimation for identity-link MSMs.

For outcome time ``t`` with window start ``t0 = t-s+1``, the IPTW function

    D(beta) = h(t, a, V) (Y(t+1) - x(t, a, V)' beta) / G_t,
    G_j = prod_{k=t0..j} g(A(k) | past),

is augmented by ``-sum_{j=t0..t} (E[D | A-bar(j), L-bar(j)] - E[D | A-bar(j-1), L-bar(j)])``.
Integrating the future treatments against g cancels their probabilities, so

    E[D | A-bar(j-1), L-bar(j)] = (1/G_{j-1}) sum_{a(j..t)} h(a') (Qbar_j(a(j..t)) - x(a')' beta)

where ``a'`` is the observed A(t0..j-1) followed by ``a(j..t)`` and
``Qbar_j`` is E[Y(t+1) | observed past to L(j), A(j..t) set], computed by
forward simulation under the fitted Q.  The conditional expectation given
A(j) restricts the sum to ``a(j) = A(j)`` and divides by ``G_j``.  Every
piece is affine in beta, so the estimating equation is one linear solve.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..data import PanelDataset, PanelError, v_matrix
from ..design import MsmSpec, design_matrix
from ..engine import NoiseBank
from ..features import History
from ..montecarlo import ROWS_PER_CHUNK, substream
from ..treatment import TreatmentModel, compute_weights, observed_step_probs
from .common import GRID_LIMIT, EstimateReport, RegimenGrid, observed_design
from .qmodel import QModel

__all__ = ["dr_estimate", "SingularSystemError", "completion_means", "MAX_CONDITION"]

MAX_CONDITION = 1e12


class SingularSystemError(ArithmeticError):
    """The assembled linear system is singular or badly conditioned."""


def _sequences(L: int, r: int) -> np.ndarray:
    """(L**r, r) codes; digit k (position j+k) of block b is (b // L**k) % L."""
    b = np.arange(L**r)
    return np.column_stack([(b // L**k) % L for k in range(r)]) if r else np.empty((1, 0), int)


def completion_means(
    data: PanelDataset,
    qmodel: QModel,
    depths: dict[int, int],
    M_aug: int,
    seed: int,
    threads: int = 1,
    rows_per_chunk: int = ROWS_PER_CHUNK,
) -> dict[int, list[np.ndarray | None]]:
    """``out[j][r]`` (L**r, n): E_Q[Y(j+r) | observed L-bar(j), A-bar(j-1), A(j..j+r-1) set].

    Branches of the completion tree share noise (common random numbers);
    task ``(j, chunk)`` uses the sub-stream keyed by ``(j, chunk)``.
    """
    model = qmodel.sequential(None)
    L = len(data.levels)
    n = data.n
    hist_all = History.from_panel(data)
    out = {j: [None] + [np.empty((L**r, n)) for r in range(1, d + 1)] for j, d in depths.items()}
    tasks = []
    for j in sorted(depths):
        per_unit = M_aug * L ** depths[j]
        nu = max(1, rows_per_chunk // per_unit)
        for c, lo in enumerate(range(0, n, nu)):
            tasks.append((j, c, np.arange(lo, min(lo + nu, n))))

    def run(task):
        j, c, idx = task
        rng = substream(seed, j, c)
        nu = len(idx)
        stack = hist_all.take(idx).tile(M_aug)
        noise = NoiseBank.draw(rng, nu * M_aug, model.K + 2, model.n_channels)
        res = []
        for r in range(1, depths[j] + 1):
            prev = stack.N
            stack = stack.tile(L)
            stack.A[:, j + r - 1] = np.repeat(np.arange(L), prev)
            model.draw_covariates(stack, j + r, noise.tile(L**r))
            y = model.outcome_mean(stack, j + r)
            res.append(y.reshape(L**r, M_aug, nu).mean(axis=1))
        return j, idx, res

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(tk) for tk in tasks]
    for j, idx, res in results:
        for r, q in enumerate(res, start=1):
            out[j][r][:, idx] = q
    return out


def _solve(A: np.ndarray, b: np.ndarray, context: str) -> np.ndarray:
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularSystemError(f"{context}: DR system is singular (condition number {cond:.3e})")
    return np.linalg.solve(A, b)


def dr_estimate(
    data: PanelDataset,
    spec: MsmSpec,
    qmodel: QModel,
    gmodel: TreatmentModel,
    M_aug: int = 100,
    seed: int = 0,
    style: str = "unstabilized",
    threads: int = 1,
    rows_per_chunk: int = ROWS_PER_CHUNK,
) -> EstimateReport:
    """Solve the augmented IPTW estimating equation (identity link only)."""
    if spec.link != "identity":
        raise PanelError("double robust estimation is implemented for the identity link only")
    spec.validate(data)
    if M_aug < 1:
        raise PanelError("M_aug must be positive")
    window = spec.window
    s, times = window.s, window.targets
    L = len(data.levels)
    if L**s > GRID_LIMIT:
        raise PanelError(f"{L ** s} window regimens exceed the limit of {GRID_LIMIT}")
    stabilized = style == "stabilized"
    if style not in ("unstabilized", "stabilized"):
        raise PanelError("style must be 'unstabilized' or 'stabilized'")
    wr = compute_weights(gmodel, data, window, style)

    depths: dict[int, int] = {}
    for t in times:
        for j in range(t - s + 1, t + 1):
            depths[j] = max(depths.get(j, 0), t - j + 1)
    qbar = completion_means(data, qmodel, depths, M_aug, seed, threads, rows_per_chunk)

    step, _ = observed_step_probs(gmodel, data)
    n, p = data.n, spec.p
    scores = data.levels.scores
    codes = data.treatments
    place = L ** np.arange(s - 1, -1, -1)
    full_grid = RegimenGrid.full(data.levels, s).regimens
    systems = []
    for t in times:
        start = t - s + 1
        v = v_matrix(data, spec.vspec, t, s)
        num = gmodel.numerator_regimen_probs(t, full_grid, v) if stabilized else None
        x_obs = observed_design(data, spec, t)
        h_obs = x_obs if num is None else x_obs * num[np.arange(n), codes[:, start : t + 1] @ place][:, None]
        G_t = np.ones(n)
        for j in range(start, t + 1):
            G_t = G_t * step[:, j]
        y = data.outcome[:, t + 1]
        b = h_obs.T @ (y / G_t)
        A = (h_obs / G_t[:, None]).T @ x_obs
        G_prev = np.ones(n)
        for j in range(start, t + 1):
            r = t - j + 1
            G_j = G_prev * step[:, j]
            seqs = _sequences(L, r)
            nb = seqs.shape[0]
            full = np.concatenate(
                [
                    np.broadcast_to(codes[:, None, start:j], (n, nb, j - start)),
                    np.broadcast_to(seqs[None, :, :], (n, nb, r)),
                ],
                axis=2,
            )
            X = design_matrix(
                spec, t, scores[full].reshape(n * nb, s), np.repeat(v, nb, axis=0)
            ).reshape(n, nb, p)
            h = X if num is None else X * num[np.arange(n)[:, None], full @ place][:, :, None]
            Q = qbar[j][r].T  # (n, nb)
            match = (seqs[None, :, 0] == codes[:, j : j + 1]).astype(float)
            wL = (1.0 / G_prev)[:, None]
            wA = match / G_j[:, None]
            b -= np.einsum("nbp,nb->p", h, Q * (wA - wL))
            A -= np.einsum("nbp,nbq,nb->pq", h, X, wA - wL)
            G_prev = G_j
        systems.append((A, b))

    if spec.mode == "pooled":
        A = sum(a for a, _ in systems)
        b = sum(bb for _, bb in systems)
        beta = _solve(A, b, "pooled")
    else:
        beta = np.vstack([_solve(a, bb, f"t={t}") for (a, bb), t in zip(systems, times)])
    messages = list(qmodel.messages)
    return EstimateReport(
        estimator="dr",
        mode=spec.mode,
        link=spec.link,
        term_names=spec.term_names,
        beta=beta,
        times=times,
        s=s,
        n_units=n,
        weights=wr.summary(),
        monte_carlo_draws=M_aug,
        seed=seed,
        converged=bool(qmodel.converged and gmodel.denominator.converged),
        messages=messages,
        extra={"style": style},
    )
