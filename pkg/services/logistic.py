"""Logistic regression on [1 | one-hot(A) | Z] fitted by damped Newton.

Parameter vectors are laid out as theta = (beta0, beta_a, beta_z).
"""
import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.special import expit

from config.settings import FitOptions
from services.dataset import Dataset
from services.exceptions import DatasetError, EmptyCellError, SingularHessianError
from services.resample import equity_count_realization

logger = logging.getLogger(__name__)

MAX_HALVINGS = 30
FALLBACK_RIDGE = 1e-8


@dataclass(frozen=True, eq=False)
class LogisticModel:
    """Fitted coefficients, decision threshold and per-group intercept offsets.

    ``group_thresholds``, when set, replaces ``threshold`` group by group.
    """
    beta0: float
    beta_a: np.ndarray
    beta_z: np.ndarray
    threshold: float = 0.5
    group_intercept_offsets: Optional[np.ndarray] = None
    group_thresholds: Optional[np.ndarray] = None
    group_names: Tuple[str, ...] = ()
    feature_names: Tuple[str, ...] = ()
    converged: bool = True
    iterations: int = 0
    grad_inf_norm: float = 0.0
    ridge_used: float = 0.0

    def __post_init__(self):
        beta_a = np.asarray(self.beta_a, dtype=float).reshape(-1)
        beta_z = np.asarray(self.beta_z, dtype=float).reshape(-1)
        offsets = (np.zeros_like(beta_a) if self.group_intercept_offsets is None
                   else np.asarray(self.group_intercept_offsets, dtype=float).reshape(-1))
        if offsets.shape != beta_a.shape:
            raise ValueError("group_intercept_offsets must have one entry per group")
        if not (np.isfinite(self.beta0) and np.isfinite(beta_a).all()
                and np.isfinite(beta_z).all() and np.isfinite(offsets).all()):
            raise ValueError("logistic model coefficients must be finite")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie strictly inside (0, 1), got {self.threshold}")
        thresholds = self.group_thresholds
        if thresholds is not None:
            thresholds = np.asarray(thresholds, dtype=float).reshape(-1)
            if thresholds.shape != beta_a.shape:
                raise ValueError("group_thresholds must have one entry per group")
            if not ((thresholds > 0.0) & (thresholds < 1.0)).all():
                raise ValueError("group thresholds must lie strictly inside (0, 1)")
        group_names = tuple(self.group_names) or tuple(f"g{a + 1}" for a in range(beta_a.size))
        feature_names = tuple(self.feature_names) or tuple(f"z{k + 1}" for k in range(beta_z.size))
        object.__setattr__(self, "beta0", float(self.beta0))
        object.__setattr__(self, "beta_a", beta_a)
        object.__setattr__(self, "beta_z", beta_z)
        object.__setattr__(self, "group_intercept_offsets", offsets)
        object.__setattr__(self, "group_thresholds", thresholds)
        object.__setattr__(self, "group_names", group_names)
        object.__setattr__(self, "feature_names", feature_names)

    @property
    def num_groups(self) -> int:
        return int(self.beta_a.size)

    @property
    def p(self) -> int:
        return int(self.beta_z.size)

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([[self.beta0], self.beta_a, self.beta_z])

    def with_threshold(self, threshold: float) -> "LogisticModel":
        return dataclasses.replace(self, threshold=threshold)

    def threshold_for(self, group):
        """Decision threshold of one group index or an array of them."""
        if self.group_thresholds is None:
            return self.threshold
        return self.group_thresholds[group]

    def linear_predictor(self, data: Dataset) -> np.ndarray:
        offsets = self.group_intercept_offsets
        return self.beta0 + offsets[data.group] + self.beta_a[data.group] + data.z @ self.beta_z

    def predict_proba(self, data: Dataset) -> np.ndarray:
        return expit(self.linear_predictor(data))

    def classify(self, data: Dataset) -> np.ndarray:
        return (self.predict_proba(data) >= self.threshold_for(data.group)).astype(np.int64)


def predict_proba(model: LogisticModel, group: int, z: Sequence[float]) -> float:
    """P(Y=1 | A=group, Z=z) including the group's intercept offset."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != model.p:
        raise ValueError(f"expected {model.p} predictors, got {z.size}")
    eta = (model.beta0 + model.group_intercept_offsets[group]
           + model.beta_a[group] + float(z @ model.beta_z))
    return float(expit(eta))


def classify(model: LogisticModel, group: int, z: Sequence[float]) -> int:
    """1 iff the probability reaches the group's threshold (ties go to 1)."""
    return int(predict_proba(model, group, z) >= model.threshold_for(group))


# ---------------------------------------------------------------------------
# loss, gradient, Hessian

def _weights(data: Dataset, weights: Optional[Sequence[float]]) -> np.ndarray:
    if weights is None:
        return np.ones(data.n)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size != data.n:
        raise ValueError(f"expected {data.n} weights, got {w.size}")
    if (w < 0).any():
        raise ValueError("weights must be nonnegative")
    return w


def _check_theta(theta: np.ndarray, data: Dataset) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    expected = 1 + data.num_groups + data.p
    if theta.size != expected:
        raise ValueError(f"theta has {theta.size} entries, expected {expected}")
    return theta


def _loss_terms(xi: np.ndarray, label: np.ndarray, theta: np.ndarray) -> np.ndarray:
    u = (2.0 * label - 1.0) * (xi @ theta)
    return np.log1p(np.exp(-np.abs(u))) + np.maximum(-u, 0.0)


def _gradient(xi: np.ndarray, label: np.ndarray, w: np.ndarray, theta: np.ndarray) -> np.ndarray:
    mu = expit(xi @ theta)
    return xi.T @ (w * (mu - label))


def _hessian(xi: np.ndarray, w: np.ndarray, theta: np.ndarray) -> np.ndarray:
    mu = expit(xi @ theta)
    return (xi * (w * mu * (1.0 - mu))[:, None]).T @ xi


def nll(theta: Sequence[float], data: Dataset,
        weights: Optional[Sequence[float]] = None) -> float:
    """Weighted negative log-likelihood sum_i w_i log(1 + exp(-y~_i theta.xi_i))."""
    theta = _check_theta(theta, data)
    w = _weights(data, weights)
    return float(w @ _loss_terms(data.design_matrix(), data.label, theta))


def gradient(theta: Sequence[float], data: Dataset,
             weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """Xi^T (w * (mu - y)), intercept component first."""
    theta = _check_theta(theta, data)
    return _gradient(data.design_matrix(), data.label, _weights(data, weights), theta)


def hessian(theta: Sequence[float], data: Dataset,
            weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """Xi^T diag(w * mu * (1 - mu)) Xi."""
    theta = _check_theta(theta, data)
    return _hessian(data.design_matrix(), _weights(data, weights), theta)


# ---------------------------------------------------------------------------
# Newton solver

def _newton_direction(h: np.ndarray, g: np.ndarray) -> np.ndarray:
    try:
        factor = linalg.cho_factor(h, lower=True, check_finite=False)
    except linalg.LinAlgError as e:
        raise SingularHessianError(str(e)) from e
    step = linalg.cho_solve(factor, g, check_finite=False)
    if not np.isfinite(step).all():
        raise SingularHessianError("Newton step is not finite")
    return step


def _newton(xi: np.ndarray, label: np.ndarray, w: np.ndarray, ridge: float,
            tol: float, max_iter: int, verbose: bool):
    d = xi.shape[1]
    penalty = np.full(d, ridge)
    penalty[0] = 0.0

    def objective(theta):
        return float(w @ _loss_terms(xi, label, theta)) + float(penalty @ theta ** 2)

    def grad(theta):
        return _gradient(xi, label, w, theta) + 2.0 * penalty * theta

    log = logger.info if verbose else logger.debug
    theta = np.zeros(d)
    f = objective(theta)
    g = grad(theta)
    iterations = 0
    while np.max(np.abs(g)) > tol and iterations < max_iter:
        h = _hessian(xi, w, theta) + np.diag(2.0 * penalty)
        step = _newton_direction(h, g)
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            candidate = theta - t * step
            f_candidate = objective(candidate)
            if f_candidate <= f:
                break
            t *= 0.5
        else:
            log("Line search stalled at iteration %d (|g|=%.3e)", iterations, np.max(np.abs(g)))
            break
        theta, f = candidate, f_candidate
        iterations += 1
        g = grad(theta)
        log("Newton iteration %d: objective=%.10g step=%.3g |g|=%.3e",
            iterations, f, t, np.max(np.abs(g)))
    grad_norm = float(np.max(np.abs(g))) if g.size else 0.0
    return theta, iterations, grad_norm, grad_norm <= tol


def fit_logistic(data: Dataset, opts: Optional[FitOptions] = None,
                 weights: Optional[Sequence[float]] = None) -> LogisticModel:
    """Minimize nll + ridge * ||theta without intercept||^2 by damped Newton.

    A rank-deficient design, which the intercept plus a full one-hot block
    always is, gets ridge max(ridge, 1e-8) up front. A singular Newton system
    at ridge 0 is retried once with that ridge.
    A fit that misses the tolerance is returned with ``converged=False``.
    """
    opts = opts or FitOptions()
    opts.validate()
    if data.n < 1:
        raise DatasetError("cannot fit a logistic model to an empty dataset")
    xi = data.design_matrix()
    w = _weights(data, weights)
    tol = opts.resolve_tol(data.n)

    ridge = opts.ridge
    if ridge < FALLBACK_RIDGE and np.linalg.matrix_rank(xi) < xi.shape[1]:
        logger.debug("Design matrix is rank deficient; fitting with ridge=%.0e", FALLBACK_RIDGE)
        ridge = FALLBACK_RIDGE
    try:
        theta, iterations, grad_norm, converged = _newton(
            xi, data.label, w, ridge, tol, opts.max_iter, opts.verbose)
    except SingularHessianError as e:
        fallback = max(ridge, FALLBACK_RIDGE)
        if fallback == ridge:
            logger.warning("Singular Newton system at ridge=%.0e: %s", ridge, e)
            raise
        logger.warning("Singular Newton system (%s); refitting with ridge=%.0e", e, fallback)
        ridge = fallback
        theta, iterations, grad_norm, converged = _newton(
            xi, data.label, w, ridge, tol, opts.max_iter, opts.verbose)

    if not converged:
        logger.warning("Logistic fit did not converge: |g|=%.3e > tol=%.3e after %d iterations",
                       grad_norm, tol, iterations)
    k = data.num_groups
    return LogisticModel(
        beta0=theta[0],
        beta_a=theta[1:1 + k],
        beta_z=theta[1 + k:],
        threshold=0.5,
        group_names=data.group_names,
        feature_names=data.feature_names,
        converged=converged,
        iterations=iterations,
        grad_inf_norm=grad_norm,
        ridge_used=ridge,
    )


# ---------------------------------------------------------------------------
# equity weighting

def equity_weights(data: Dataset, m: float) -> np.ndarray:
    """w_i = M / n_{a_i}^{y_i}; every (group, label) cell must be populated."""
    counts = data.cell_counts()
    for a in range(data.num_groups):
        for y in (0, 1):
            if counts[a, y] == 0:
                raise EmptyCellError(data.group_names[a], y, context="equity weights")
    return m / counts[data.group, data.label]


def equity_weighted_nll(theta: Sequence[float], data: Dataset, m: float) -> float:
    """J2: the expectation of the equity-resampled loss, as a weighted nll."""
    return nll(theta, data, weights=equity_weights(data, m))


def equity_loss_realization(theta: Sequence[float], data: Dataset, m: int,
                            rng: np.random.Generator, scheme: str = "bootstrap") -> float:
    """J1: the nll under one random equity resample's row multiplicities."""
    counts = equity_count_realization(data, m, rng, scheme=scheme)
    return nll(theta, data, weights=counts)


# ---------------------------------------------------------------------------
# text format

def to_text(model: LogisticModel) -> str:
    """One ``name<TAB>value`` line per coefficient, threshold and offset.

    Per-group thresholds, when the model has them, follow as ``threshold:<group>`` lines.
    """
    lines = [f"intercept\t{model.beta0!r}"]
    lines += [f"group:{name}\t{float(v)!r}" for name, v in zip(model.group_names, model.beta_a)]
    lines += [f"z:{name}\t{float(v)!r}" for name, v in zip(model.feature_names, model.beta_z)]
    lines.append(f"threshold\t{float(model.threshold)!r}")
    if model.group_thresholds is not None:
        lines += [f"threshold:{name}\t{float(v)!r}"
                  for name, v in zip(model.group_names, model.group_thresholds)]
    lines += [f"offset:{name}\t{float(v)!r}"
              for name, v in zip(model.group_names, model.group_intercept_offsets)]
    return "\n".join(lines) + "\n"


def from_text(text: str) -> LogisticModel:
    """Inverse of to_text."""
    beta0, threshold = None, 0.5
    groups, features, offsets, thresholds = [], [], {}, {}
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            name, raw = line.split("\t")
            value = float(raw)
        except ValueError as e:
            raise ValueError(f"line {number}: expected name<TAB>value, got {line!r}") from e
        if name == "intercept":
            beta0 = value
        elif name == "threshold":
            threshold = value
        elif name.startswith("threshold:"):
            thresholds[name[len("threshold:"):]] = value
        elif name.startswith("group:"):
            groups.append((name[len("group:"):], value))
        elif name.startswith("z:"):
            features.append((name[len("z:"):], value))
        elif name.startswith("offset:"):
            offsets[name[len("offset:"):]] = value
        else:
            raise ValueError(f"line {number}: unknown coefficient name {name!r}")
    if beta0 is None:
        raise ValueError("missing intercept line")
    group_names = tuple(name for name, _ in groups)
    return LogisticModel(
        beta0=beta0,
        beta_a=np.array([v for _, v in groups]),
        beta_z=np.array([v for _, v in features]),
        threshold=threshold,
        group_intercept_offsets=np.array([offsets.get(name, 0.0) for name in group_names]),
        group_thresholds=(np.array([thresholds.get(name, threshold) for name in group_names])
                          if thresholds else None),
        group_names=group_names,
        feature_names=tuple(name for name, _ in features),
    )
