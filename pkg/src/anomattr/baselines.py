"""Comparison attribution methods applied to the deviation f(x) - y.

Local surrogate fits (plain and Bayesian), path-integrated gradients with
fixed or averaged baselines, Shapley values (exact or permutation-sampled),
the z-score, and a Gaussian-loss counterfactual shift.  All of them except
the last are insensitive to the observed target: shifting y only moves a
surrogate intercept or cancels in differences, and the implementations keep
that cancellation exact at machine precision.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from math import comb

import numpy as np

from .gpa import proximal_minimize
from .models import (
    GradientEstimatorConfig,
    ModelHandle,
    _step_draws,
    estimate_gradient,
)

__all__ = [
    "ReferenceSet",
    "LimeConfig",
    "IgConfig",
    "BaylimeResult",
    "lime",
    "lime0",
    "baylime_distributions",
    "integrated_gradient",
    "expected_integrated_gradient",
    "shapley_sampled",
    "z_score",
    "lc",
]

# exact Shapley enumeration cutoff: coalition values to evaluate
_EXACT_SV_BUDGET = 50_000


@dataclass
class ReferenceSet:
    """Samples standing in for the input distribution, optionally weighted."""

    samples: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.samples.size == 0:
            raise ValueError("reference set must be nonempty")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != (self.samples.shape[0],):
                raise ValueError("one weight per reference sample required")
            if np.any(self.weights < 0):
                raise ValueError("weights must be nonnegative")
            total = self.weights.sum()
            if abs(total - 1.0) > 1e-8:
                raise ValueError("weights must sum to 1")
            self.weights = self.weights / total

    @property
    def effective_weights(self) -> np.ndarray:
        if self.weights is not None:
            return self.weights
        n = self.samples.shape[0]
        return np.full(n, 1.0 / n)


@dataclass(frozen=True)
class LimeConfig:
    """Local surrogate settings: cloud size, perturbation scale (standardized
    units), and l1 strength."""

    n_samples: int = 1000
    sampling_std: float = 0.3
    l1_strength: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if self.sampling_std <= 0:
            raise ValueError("sampling_std must be positive")
        if self.l1_strength < 0:
            raise ValueError("l1_strength must be nonnegative")


@dataclass(frozen=True)
class IgConfig:
    """Path-integral settings; ``baseline`` is the start point x0."""

    baseline: tuple[float, ...] | None = None
    n_intervals: int = 100

    def __post_init__(self):
        if self.n_intervals < 1:
            raise ValueError("n_intervals must be >= 1")


def _local_cloud(model: ModelHandle, x_t, cfg: LimeConfig):
    """Standard-normal offsets around x_t and the model values there."""
    x_t = np.asarray(x_t, dtype=float)
    if cfg.n_samples < model.dimension + 1:
        raise ValueError("n_samples must be at least dimension + 1 for a solvable fit")
    rng = np.random.default_rng(cfg.seed)
    offsets = rng.standard_normal((cfg.n_samples, model.dimension))
    fvals = model.evaluate_batch(x_t + cfg.sampling_std * offsets)
    return offsets, fvals


def _lasso_cd(design: np.ndarray, target: np.ndarray, l1: float,
              max_sweeps: int = 10_000, tol: float = 1e-13) -> np.ndarray:
    """Coordinate descent for (1/n)||target - design @ beta||^2 + l1 ||beta||_1
    on centered data (no intercept column)."""
    n, m = design.shape
    col_sq = 2.0 / n * np.einsum("ij,ij->j", design, design)
    if np.all(col_sq == 0):
        raise ValueError("degenerate local design: all samples identical")
    beta = np.zeros(m)
    resid = target.copy()
    for _ in range(max_sweeps):
        worst = 0.0
        for j in range(m):
            if col_sq[j] == 0.0:
                continue
            rho = 2.0 / n * (design[:, j] @ resid) + col_sq[j] * beta[j]
            new = np.sign(rho) * max(abs(rho) - l1, 0.0) / col_sq[j]
            if new != beta[j]:
                resid += design[:, j] * (beta[j] - new)
                worst = max(worst, abs(new - beta[j]))
                beta[j] = new
        if worst <= tol * max(1.0, float(np.max(np.abs(beta)))):
            break
    return beta


def lime(model: ModelHandle, x_t, y_t: float, cfg: LimeConfig) -> np.ndarray:
    """l1-regularized local surrogate slopes at (x_t, y_t).

    Samples a Gaussian cloud around x_t, fits the deviation f(x) - y_t with a
    lasso via coordinate descent and returns the slope vector.  The target
    value only shifts the surrogate intercept (the lasso objective is convex,
    so the slopes are unique); the fit therefore runs on mean-centered model
    values, which keeps the returned scores exactly independent of y_t.
    """
    del y_t  # absorbed by the intercept; see docstring
    offsets, fvals = _local_cloud(model, x_t, cfg)
    design = cfg.sampling_std * offsets
    design = design - design.mean(axis=0)
    centered = fvals - fvals.mean()
    return _lasso_cd(design, centered, cfg.l1_strength)


def lime0(model: ModelHandle, x_t, cfg: LimeConfig) -> np.ndarray:
    """Pure least-squares surrogate slopes (the l1-free limit of :func:`lime`);
    a local estimator of the model gradient.  A rank-deficient cloud yields
    the minimum-norm solution and a warning."""
    offsets, fvals = _local_cloud(model, x_t, cfg)
    design = cfg.sampling_std * offsets
    design = design - design.mean(axis=0)
    centered = fvals - fvals.mean()
    beta, _, rank, _ = np.linalg.lstsq(design, centered, rcond=None)
    if rank < model.dimension:
        warnings.warn(
            "rank-deficient local design; returning the minimum-norm solution",
            stacklevel=2,
        )
    return beta


@dataclass
class BaylimeResult:
    """Per-variable Gaussian posterior of the surrogate slopes: means plus
    one shared variance 1/(prior_eta + noise_lambda * n_samples)."""

    means: np.ndarray
    variance: float

    def pairs(self) -> list[tuple[float, float]]:
        return [(float(m), self.variance) for m in self.means]


def baylime_distributions(
    model: ModelHandle,
    x_t,
    y_t: float,
    cfg: LimeConfig,
    prior_eta: float,
    noise_lambda: float,
) -> BaylimeResult:
    """Bayesian ridge surrogate around x_t.

    The posterior mean solves the ridge system with prior precision
    ``prior_eta`` and noise precision ``noise_lambda`` on the standardized
    offsets; the reported variance is the design-independent constant
    ``1/(prior_eta + noise_lambda * n_samples)`` -- identical for every
    variable, which is exactly what makes this baseline's uncertainty
    uninformative.
    """
    if prior_eta <= 0 or noise_lambda < 0:
        raise ValueError("prior_eta must be positive, noise_lambda nonnegative")
    del y_t  # absorbed by the intercept, as in lime
    offsets, fvals = _local_cloud(model, x_t, cfg)
    design = offsets - offsets.mean(axis=0)
    centered = fvals - fvals.mean()
    gram = noise_lambda * design.T @ design
    gram[np.diag_indices_from(gram)] += prior_eta
    means = np.linalg.solve(gram, noise_lambda * design.T @ centered)
    variance = 1.0 / (prior_eta + noise_lambda * cfg.n_samples)
    return BaylimeResult(means, variance)


def _gradients_along(model: ModelHandle, points: np.ndarray,
                     grad_cfg: GradientEstimatorConfig) -> np.ndarray:
    """Smoothed-slope gradients at several points in one model batch.

    Uses the same per-(seed, coordinate, draw) step sizes as
    :func:`anomattr.models.estimate_gradient`, so results match a pointwise
    loop bit for bit.
    """
    m = model.dimension
    mc = grad_cfg.mc_samples
    h, _ = _step_draws(grad_cfg.seed, grad_cfg.perturbation_std, mc, m)
    n_points = points.shape[0]
    base = model.evaluate_batch(points)
    rep = np.repeat(points, m * mc, axis=0)
    coord = np.tile(np.repeat(np.arange(m), mc), n_points)
    steps = np.tile(h.ravel(), n_points)
    rep[np.arange(rep.shape[0]), coord] += steps
    fvals = model.evaluate_batch(rep)
    slopes = (fvals - np.repeat(base, m * mc)) / steps
    return slopes.reshape(n_points, m, mc).mean(axis=2)


def integrated_gradient(
    model: ModelHandle,
    x_t,
    cfg: IgConfig,
    grad_cfg: GradientEstimatorConfig,
) -> np.ndarray:
    """Trapezoidal path integral of the gradient from ``cfg.baseline`` to
    x_t, scaled elementwise by the displacement."""
    if cfg.baseline is None:
        raise ValueError("integrated_gradient requires a baseline point")
    x_t = np.asarray(x_t, dtype=float)
    x0 = np.asarray(cfg.baseline, dtype=float)
    if x0.shape != x_t.shape:
        raise ValueError("baseline must have the same dimension as x_t")
    d = x_t - x0
    alphas = np.linspace(0.0, 1.0, cfg.n_intervals + 1)
    path = x0[None, :] + alphas[:, None] * d[None, :]
    grads = _gradients_along(model, path, grad_cfg)
    weights = np.full(cfg.n_intervals + 1, 1.0 / cfg.n_intervals)
    weights[0] = weights[-1] = 0.5 / cfg.n_intervals
    return d * (weights @ grads)


def expected_integrated_gradient(
    model: ModelHandle,
    x_t,
    ref: ReferenceSet,
    cfg: IgConfig,
    grad_cfg: GradientEstimatorConfig,
) -> np.ndarray:
    """Path integral averaged over baselines drawn from the reference set."""
    x_t = np.asarray(x_t, dtype=float)
    weights = ref.effective_weights
    total = np.zeros(model.dimension)
    for w, sample in zip(weights, ref.samples):
        sub_cfg = IgConfig(baseline=tuple(sample), n_intervals=cfg.n_intervals)
        total += w * integrated_gradient(model, x_t, sub_cfg, grad_cfg)
    return total


def _coalition_points(x_t: np.ndarray, ref_samples: np.ndarray, mask: np.ndarray):
    """Reference samples with the masked coordinates pinned to x_t."""
    points = ref_samples.copy()
    points[:, mask] = x_t[mask]
    return points


def _shapley_exact(model: ModelHandle, x_t: np.ndarray, ref: ReferenceSet) -> np.ndarray:
    m = model.dimension
    weights = ref.effective_weights
    # value of each coalition: expected model output with coalition members
    # pinned to the test point and the rest drawn from the reference set
    values = {}
    for size in range(m + 1):
        for coalition in itertools.combinations(range(m), size):
            mask = np.zeros(m, dtype=bool)
            mask[list(coalition)] = True
            fvals = model.evaluate_batch(_coalition_points(x_t, ref.samples, mask))
            values[coalition] = float(weights @ fvals)
    scores = np.zeros(m)
    for i in range(m):
        others = [j for j in range(m) if j != i]
        for size in range(m):
            coeff = 1.0 / (m * comb(m - 1, size))
            for subset in itertools.combinations(others, size):
                with_i = tuple(sorted(subset + (i,)))
                scores[i] += coeff * (values[with_i] - values[subset])
    return scores


def _shapley_sampling(model: ModelHandle, x_t: np.ndarray, ref: ReferenceSet,
                      n_configs: int, seed: int) -> np.ndarray:
    m = model.dimension
    rng = np.random.default_rng(seed)
    weights = ref.effective_weights
    scores = np.zeros(m)
    for _ in range(n_configs):
        perm = rng.permutation(m)
        r = ref.samples[rng.choice(len(weights), p=weights)]
        # walk the permutation, swapping reference coordinates to the test
        # point one at a time; each swap's output change is one contribution
        points = np.tile(r, (m + 1, 1))
        for pos, j in enumerate(perm):
            points[pos + 1 :, j] = x_t[j]
        fvals = model.evaluate_batch(points)
        scores[perm] += fvals[1:] - fvals[:-1]
    return scores / n_configs


def shapley_sampled(
    model: ModelHandle,
    x_t,
    ref: ReferenceSet,
    n_configs: int = 100,
    seed: int = 0,
    method: str = "auto",
) -> np.ndarray:
    """Shapley values of the deviation with out-of-coalition coordinates
    substituted from the reference set (interventional substitution).

    ``method="auto"`` enumerates coalitions exactly when the dimension and
    reference set are small enough, and otherwise Monte Carlo samples
    ``n_configs`` (permutation, reference sample) configurations.  The
    observed target cancels in every marginal contribution, so it does not
    appear here at all.
    """
    x_t = np.asarray(x_t, dtype=float)
    if n_configs < 1:
        raise ValueError("n_configs must be >= 1")
    if method not in ("auto", "exact", "sampling"):
        raise ValueError(f"unknown method {method!r}")
    m = model.dimension
    if method == "auto":
        cheap = m <= 10 and (2**m) * len(ref.samples) <= _EXACT_SV_BUDGET
        method = "exact" if cheap else "sampling"
    if method == "exact":
        return _shapley_exact(model, x_t, ref)
    return _shapley_sampling(model, x_t, ref, n_configs, seed)


def z_score(x_t, ref: ReferenceSet) -> np.ndarray:
    """Per-variable standardization of x_t against the reference set
    (population standard deviation)."""
    x_t = np.asarray(x_t, dtype=float)
    if len(ref.samples) < 2:
        raise ValueError("z_score needs at least two reference samples")
    w = ref.effective_weights
    mean = w @ ref.samples
    var = w @ (ref.samples - mean) ** 2
    std = np.sqrt(var)
    bad = np.nonzero(std == 0)[0]
    if bad.size:
        raise ValueError(f"variable {bad[0]} is constant in the reference set")
    return (x_t - mean) / std


def lc(
    model: ModelHandle,
    x_t,
    y_t: float,
    eta: float,
    nu: float,
    lam: float = 1.0,
    kappa: float = 0.01,
    grad_cfg: GradientEstimatorConfig = GradientEstimatorConfig(),
    max_iter: int = 10_000,
    tol: float = 1e-6,
) -> np.ndarray:
    """Counterfactual shift under a plain Gaussian loss.

    Minimizes ``(eta/2)||delta||^2 + (lam/2)[y_t - f(x_t + delta)]^2`` plus
    the l1 term handled by the proximal step -- the same solver structure as
    :func:`anomattr.gpa.map_estimate` but without the heavy-tailed
    marginalization, which makes this the point-estimate-only sibling.
    """
    if eta <= 0 or nu <= 0 or lam <= 0 or kappa <= 0:
        raise ValueError("eta, nu, lam and kappa must be positive")
    x_t = np.asarray(x_t, dtype=float)

    def grad_fn(delta):
        x_shift = x_t + delta
        fv = model.evaluate(x_shift)
        r = y_t - fv
        gf = estimate_gradient(model, x_shift, grad_cfg, f0=fv)
        return eta * delta - lam * r * gf

    def value_fn(delta):
        r = y_t - model.evaluate(x_t + delta)
        return 0.5 * eta * float(delta @ delta) + 0.5 * lam * r * r

    state = proximal_minimize(
        grad_fn, value_fn, model.dimension, eta, nu, kappa, max_iter, tol,
        grad_cfg.seed,
    )
    return state.delta
