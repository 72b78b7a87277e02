"""Component-wise L2 gradient boosting for density responses.

The production loop runs in clr coordinates, where the model is linear and
least squares applies directly; the density-space formulation with
perturbation and powering is provided as an independent second path that must
reproduce the same coefficient trajectories. Norms everywhere are
measure-weighted, which is where discrete, continuous, and mixed supports
differ.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .basis import EffectDesign
from .bayes import (
    ClrElement,
    DensityElement,
    clr,
    clr_inv,
    decompose_clr,
    embed_clr_continuous,
    embed_clr_discrete,
    inner,
    norm,
    perturb,
    power,
    subtract,
)
from .measure import ReferenceMeasure

__all__ = [
    "BoostConfig",
    "FitState",
    "MixedFit",
    "EarlyStopResult",
    "offset",
    "negative_gradient",
    "fit_base_learner",
    "select_base_learner",
    "boost",
    "boost_from_clr",
    "boost_density_space",
    "early_stop",
    "boost_mixed",
]

_RISK_SLACK = 1e-9


@dataclass(frozen=True)
class BoostConfig:
    """Settings for one boosting run.

    ``stopping`` selects how the number of iterations is chosen: "fixed" uses
    ``m_stop`` (default ``max_iterations``), "cv" k-fold cross-validation,
    "bootstrap" out-of-bag risk over resampled density sets.
    """

    step_length: float = 0.1
    max_iterations: int = 250
    stopping: str = "fixed"
    m_stop: int | None = None
    folds: int = 10
    replicates: int = 25
    target_df: float | dict | None = 2.0
    seed: int = 0
    threads: int = 1
    track_increments: bool = False

    def __post_init__(self):
        if not 0.0 < self.step_length < 1.0:
            raise ValueError("step length must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.stopping not in ("fixed", "cv", "bootstrap"):
            raise ValueError(f"unknown stopping method {self.stopping!r}")
        if self.m_stop is not None and self.m_stop < 0:
            raise ValueError("m_stop must be nonnegative")


@dataclass
class FitState:
    """Result of one boosting run in a single component space."""

    measure: ReferenceMeasure
    offset_clr: np.ndarray            # (P,)
    coefficients: list                # theta_j, each (K_j * K_Y,)
    fitted_clr: np.ndarray            # (N, P) final fitted surfaces incl. offset
    selections: list                  # chosen effect index per iteration
    risk_path: np.ndarray             # in-bag SSE, index m = 0 .. m_stop
    m_stop: int
    increments: list | None = None    # (j, gamma) per iteration when tracked
    stop_curve: np.ndarray | None = None  # resampled out-of-sample risk per m

    @property
    def selected_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.coefficients), dtype=bool)
        for j in self.selections:
            mask[j] = True
        return mask


@dataclass
class MixedFit:
    """Separate continuous and discrete fits plus the recombined surfaces."""

    continuous: FitState
    discrete: FitState
    measure: ReferenceMeasure
    fitted_clr: np.ndarray            # (N, P) on the mixed measure

    @property
    def m_stop(self) -> tuple[int, int]:
        return (self.continuous.m_stop, self.discrete.m_stop)


@dataclass
class EarlyStopResult:
    m_stop: int
    risk_curve: np.ndarray            # mean out-of-sample risk, index 0 .. M
    method: str


def offset(responses: list[DensityElement]) -> DensityElement:
    """Mean of the responses in the density space (mean of clr images)."""
    if not responses:
        raise ValueError("offset needs at least one response")
    zs = np.stack([clr(f).values for f in responses])
    return clr_inv(ClrElement(responses[0].measure, zs.mean(axis=0)))


def negative_gradient(y: DensityElement, h_current: DensityElement) -> DensityElement:
    """Steepest-descent direction of the squared-distance loss: 2 (y - h)."""
    return power(2.0, subtract(y, h_current))


_warned_singular = False


def _penalized_factor(gram: np.ndarray):
    """Cholesky factor of the penalized normal matrix, with a one-time warned
    ridge jitter for degenerate designs (e.g. empty categories in small folds)."""
    global _warned_singular
    try:
        return cho_factor(gram)
    except np.linalg.LinAlgError:
        if not _warned_singular:
            warnings.warn(
                "singular base-learner system, adding ridge jitter", RuntimeWarning
            )
            _warned_singular = True
        return cho_factor(gram + 1e-10 * np.eye(gram.shape[0]))


class _EffectSolver:
    """Per-effect precomputation: Gram matrices and penalized Cholesky factor."""

    def __init__(self, effect: EffectDesign, weights: np.ndarray, rows: np.ndarray | None = None):
        self.effect = effect
        x = effect.X if rows is None else effect.X[rows]
        self.x = x
        self.basis = effect.density_basis.clr_matrix
        self.weighted_basis = self.basis * weights[:, None]
        gram = np.kron(x.T @ x, self.basis.T @ self.weighted_basis) + effect.penalty()
        self.factor = _penalized_factor(gram)

    def fit(self, u: np.ndarray) -> np.ndarray:
        rhs = (self.x.T @ u @ self.weighted_basis).ravel()
        return cho_solve(self.factor, rhs)

    def surface(self, gamma: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:
        x = self.x if x is None else x
        coef = gamma.reshape(self.x.shape[1], self.basis.shape[1])
        return x @ coef @ self.basis.T


def fit_base_learner(effect: EffectDesign, u: np.ndarray) -> np.ndarray:
    """Penalized least-squares coefficients for one effect against the
    stacked clr gradients ``u`` of shape (N, P)."""
    weights = effect.density_basis.measure.weights
    return _EffectSolver(effect, weights).fit(np.asarray(u, dtype=float))


def select_base_learner(
    effects: list[EffectDesign], gammas: list[np.ndarray], u: np.ndarray
) -> int:
    """Index of the base-learner with the smallest weighted residual sum of
    squares; ties break toward the lowest index."""
    weights = effects[0].density_basis.measure.weights
    rss = []
    for effect, gamma in zip(effects, gammas):
        solver = _EffectSolver(effect, weights)
        resid = u - solver.surface(gamma)
        rss.append(float(((resid ** 2) * weights).sum()))
    return int(np.argmin(rss))


def boost_from_clr(
    y_clr: np.ndarray,
    measure: ReferenceMeasure,
    designs: list[EffectDesign],
    config: BoostConfig,
    m_stop: int | None = None,
) -> FitState:
    """Run the boosting loop on a matrix of clr-transformed responses."""
    y_clr = np.asarray(y_clr, dtype=float)
    n = y_clr.shape[0]
    if any(d.X.shape[0] != n for d in designs):
        raise ValueError("design rows must match the number of responses")
    if y_clr.shape[1] != measure.size:
        raise ValueError("response columns must match the measure layout")
    weights = measure.weights
    m_stop = config.max_iterations if m_stop is None else m_stop
    solvers = [_EffectSolver(d, weights) for d in designs]

    offset_clr = y_clr.mean(axis=0)
    fitted = np.tile(offset_clr, (n, 1))
    theta = [np.zeros(d.n_cov * d.density_basis.n_basis) for d in designs]
    kappa = config.step_length

    selections: list[int] = []
    increments: list | None = [] if config.track_increments else None
    risk = [float((((y_clr - fitted) ** 2) * weights).sum())]

    for _ in range(m_stop):
        u = 2.0 * (y_clr - fitted)
        best_j, best_rss, best_gamma, best_surface = -1, np.inf, None, None
        for j, solver in enumerate(solvers):
            gamma = solver.fit(u)
            surface = solver.surface(gamma)
            rss = float((((u - surface) ** 2) * weights).sum())
            if rss < best_rss:
                best_j, best_rss, best_gamma, best_surface = j, rss, gamma, surface
        theta[best_j] = theta[best_j] + kappa * best_gamma
        fitted = fitted + kappa * best_surface
        selections.append(best_j)
        if increments is not None:
            increments.append((best_j, best_gamma))
        risk.append(float((((y_clr - fitted) ** 2) * weights).sum()))

    risk_path = np.asarray(risk)
    drops = np.diff(risk_path)
    assert np.all(drops <= _RISK_SLACK * max(1.0, risk_path[0])), (
        "in-bag risk increased during boosting"
    )
    return FitState(
        measure=measure,
        offset_clr=offset_clr,
        coefficients=theta,
        fitted_clr=fitted,
        selections=selections,
        risk_path=risk_path,
        m_stop=m_stop,
        increments=increments,
    )


def boost(
    responses: list[DensityElement],
    designs: list[EffectDesign],
    config: BoostConfig,
) -> FitState:
    """Fit the additive model to density responses sharing one measure.

    Resolves the stopping iteration first (resampling methods re-run the loop
    on subsets at the density level), then fits on the full data.
    """
    measure = _common_measure(responses)
    y_clr = np.stack([clr(f).values for f in responses])
    m_stop = _resolve_m_stop(y_clr, measure, designs, config)
    state = boost_from_clr(y_clr, measure, designs, config, m_stop=m_stop.m_stop)
    state.stop_curve = m_stop.risk_curve
    return state


def _common_measure(responses: list[DensityElement]) -> ReferenceMeasure:
    if not responses:
        raise ValueError("no responses given")
    measure = responses[0].measure
    for f in responses[1:]:
        if f.measure is not measure and not f.measure.same_support(measure):
            raise ValueError("responses live on different reference measures")
    return measure


def _resolve_m_stop(y_clr, measure, designs, config: BoostConfig) -> EarlyStopResult:
    if config.stopping == "fixed":
        m = config.m_stop if config.m_stop is not None else config.max_iterations
        if m > config.max_iterations:
            raise ValueError("m_stop exceeds max_iterations")
        return EarlyStopResult(m, None, "fixed")
    return early_stop_from_clr(y_clr, measure, designs, config)


def _heldout_curve(
    y_clr: np.ndarray,
    weights: np.ndarray,
    designs: list[EffectDesign],
    config: BoostConfig,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
) -> np.ndarray:
    """Out-of-sample risk after each iteration of a fit on ``train_idx``.

    ``train_idx`` may contain repeats (bootstrap resampling); the returned
    curve has length max_iterations + 1 with entry 0 for the offset-only fit.
    """
    y_train, y_test = y_clr[train_idx], y_clr[test_idx]
    solvers = [
        _EffectSolver(d, weights, rows=train_idx) for d in designs
    ]
    x_test = [d.X[test_idx] for d in designs]
    offset_clr = y_train.mean(axis=0)
    fit_train = np.tile(offset_clr, (len(train_idx), 1))
    fit_test = np.tile(offset_clr, (len(test_idx), 1))
    kappa = config.step_length
    curve = np.empty(config.max_iterations + 1)
    curve[0] = float((((y_test - fit_test) ** 2) * weights).sum()) / len(test_idx)
    for m in range(1, config.max_iterations + 1):
        u = 2.0 * (y_train - fit_train)
        best_j, best_rss, best_gamma, best_surface = -1, np.inf, None, None
        for j, solver in enumerate(solvers):
            gamma = solver.fit(u)
            surface = solver.surface(gamma)
            rss = float((((u - surface) ** 2) * weights).sum())
            if rss < best_rss:
                best_j, best_rss, best_gamma, best_surface = j, rss, gamma, surface
        fit_train = fit_train + kappa * best_surface
        fit_test = fit_test + kappa * solvers[best_j].surface(best_gamma, x_test[best_j])
        curve[m] = float((((y_test - fit_test) ** 2) * weights).sum()) / len(test_idx)
    return curve


def early_stop_from_clr(
    y_clr: np.ndarray,
    measure: ReferenceMeasure,
    designs: list[EffectDesign],
    config: BoostConfig,
) -> EarlyStopResult:
    """Pick the stopping iteration by resampling the responses.

    Cross-validation splits the densities into folds; bootstrapping draws
    them with replacement and scores on the out-of-bag densities. Each
    resample's per-density risk curve is averaged first within, then across
    resamples, and the minimizer over m = 1 .. max_iterations is returned.
    """
    n = y_clr.shape[0]
    weights = measure.weights
    rng = np.random.default_rng(config.seed)
    splits: list[tuple[np.ndarray, np.ndarray]] = []
    if config.stopping == "cv":
        k = min(config.folds, n)
        if k < 2:
            raise ValueError("cross-validation needs at least two folds")
        perm = rng.permutation(n)
        folds = np.array_split(perm, k)
        for i in range(k):
            test = np.sort(folds[i])
            train = np.sort(np.concatenate([folds[j] for j in range(k) if j != i]))
            splits.append((train, test))
    elif config.stopping == "bootstrap":
        for _ in range(config.replicates):
            while True:
                draw = rng.integers(0, n, size=n)
                oob = np.setdiff1d(np.arange(n), draw)
                if oob.size:
                    break
            splits.append((np.sort(draw), oob))
    else:
        raise ValueError(f"no resampling for stopping method {config.stopping!r}")

    def run(split):
        train, test = split
        return _heldout_curve(y_clr, weights, designs, config, train, test)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            curves = list(pool.map(run, splits))
    else:
        curves = [run(s) for s in splits]
    mean_curve = np.mean(np.stack(curves), axis=0)
    m_stop = int(np.argmin(mean_curve[1:]) + 1)
    return EarlyStopResult(m_stop, mean_curve, config.stopping)


def early_stop(
    responses: list[DensityElement],
    designs: list[EffectDesign],
    config: BoostConfig,
) -> EarlyStopResult:
    measure = _common_measure(responses)
    y_clr = np.stack([clr(f).values for f in responses])
    return early_stop_from_clr(y_clr, measure, designs, config)


def boost_mixed(
    responses: list[DensityElement],
    designs_continuous: list[EffectDesign],
    designs_discrete: list[EffectDesign],
    config: BoostConfig,
    config_discrete: BoostConfig | None = None,
) -> MixedFit:
    """Fit a mixed-measure model as two independent component fits.

    Every response splits orthogonally into a continuous and a discrete
    component; each component is boosted on its own measure with its own
    stopping iteration, and predictions recombine through the embeddings.
    """
    measure = _common_measure(responses)
    if not measure.is_mixed:
        raise ValueError("boost_mixed requires a mixed reference measure")
    config_d = config_discrete if config_discrete is not None else replace(config, seed=config.seed + 1)
    parts = [decompose_clr(clr(f)) for f in responses]
    y_c = np.stack([zc.values for zc, _ in parts])
    y_d = np.stack([zd.values for _, zd in parts])
    measure_c = designs_continuous[0].density_basis.measure
    measure_d = designs_discrete[0].density_basis.measure

    stop_c = _resolve_m_stop(y_c, measure_c, designs_continuous, config)
    fit_c = boost_from_clr(y_c, measure_c, designs_continuous, config, m_stop=stop_c.m_stop)
    fit_c.stop_curve = stop_c.risk_curve
    stop_d = _resolve_m_stop(y_d, measure_d, designs_discrete, config_d)
    fit_d = boost_from_clr(y_d, measure_d, designs_discrete, config_d, m_stop=stop_d.m_stop)
    fit_d.stop_curve = stop_d.risk_curve

    combined = np.empty((len(responses), measure.size))
    for i in range(len(responses)):
        zc = ClrElement(measure_c, fit_c.fitted_clr[i])
        zd = ClrElement(measure_d, fit_d.fitted_clr[i])
        combined[i] = (
            embed_clr_continuous(zc, measure).values
            + embed_clr_discrete(zd, measure).values
        )
    return MixedFit(fit_c, fit_d, measure, combined)


# ---------------------------------------------------------------------------
# Density-space formulation (independent second path)
# ---------------------------------------------------------------------------

def boost_density_space(
    responses: list[DensityElement],
    designs: list[EffectDesign],
    config: BoostConfig,
    m_stop: int | None = None,
) -> FitState:
    """The boosting loop carried out on density representatives.

    State evolves through perturbation and powering of positive densities
    rather than linear updates of clr vectors; inner products come from the
    density-space inner product. Serves as the equivalence check for
    :func:`boost_from_clr`, which must produce the same selections and
    coefficient paths.
    """
    measure = _common_measure(responses)
    m_stop = config.max_iterations if m_stop is None else m_stop
    n = len(responses)
    kappa = config.step_length
    weights = measure.weights

    basis_densities = [
        [clr_inv(ClrElement(measure, col)) for col in d.density_basis.clr_matrix.T]
        for d in designs
    ]
    basis_clr = [
        np.stack([clr(b).values for b in cols]) if cols else np.empty((0, measure.size))
        for cols in basis_densities
    ]
    grams = []
    for d, cols in zip(designs, basis_densities):
        k = len(cols)
        g = np.empty((k, k))
        for a in range(k):
            for b in range(a, k):
                g[a, b] = g[b, a] = inner(cols[a], cols[b])
        grams.append(np.kron(d.X.T @ d.X, g) + d.penalty())
    factors = [_penalized_factor(g) for g in grams]

    start = offset(responses)
    current = [start for _ in range(n)]
    theta = [np.zeros(d.n_cov * d.density_basis.n_basis) for d in designs]
    selections: list[int] = []
    increments: list | None = [] if config.track_increments else None
    risk = [sum(norm(subtract(y, h)) ** 2 for y, h in zip(responses, current))]

    def compose(cols: list[DensityElement], coef: np.ndarray) -> DensityElement:
        out = np.ones(measure.size)
        for c, b in zip(coef, cols):
            out = out * (b.values ** c)
        return DensityElement(measure, out).as_probability()

    for _ in range(m_stop):
        gradients = [negative_gradient(y, h) for y, h in zip(responses, current)]
        grad_clr = np.stack([clr(u).values for u in gradients])
        best = None
        for j, d in enumerate(designs):
            cross = grad_clr @ (basis_clr[j].T * weights[:, None])  # (N, K_Y)
            rhs = (d.X.T @ cross).ravel()
            gamma = cho_solve(factors[j], rhs)
            coef = gamma.reshape(d.n_cov, -1)
            fits = [compose(basis_densities[j], coef.T @ d.X[i]) for i in range(n)]
            rss = sum(
                norm(subtract(u, fit)) ** 2 for u, fit in zip(gradients, fits)
            )
            if best is None or rss < best[1]:
                best = (j, rss, gamma, fits)
        j_star, _, gamma, fits = best
        theta[j_star] = theta[j_star] + kappa * gamma
        current = [perturb(h, power(kappa, fit)) for h, fit in zip(current, fits)]
        selections.append(j_star)
        if increments is not None:
            increments.append((j_star, gamma))
        risk.append(sum(norm(subtract(y, h)) ** 2 for y, h in zip(responses, current)))

    return FitState(
        measure=measure,
        offset_clr=clr(start).values,
        coefficients=theta,
        fitted_clr=np.stack([clr(h).values for h in current]),
        selections=selections,
        risk_path=np.asarray(risk),
        m_stop=m_stop,
        increments=increments,
    )
