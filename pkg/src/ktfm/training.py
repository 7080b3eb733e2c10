"""Model fitting: MAP gradient descent (logit) and Gibbs sampling (probit).

MAP descent minimizes the mean negative log-likelihood plus an L2 penalty on
the per-feature parameters (the penalty plays the role of fixed Gaussian
priors; the global bias is not penalized).

The Gibbs sampler treats each binary outcome through a latent Gaussian
utility:

    z_i ~ Normal(score_i, 1), truncated to (0, inf) when y_i = 1
                              and to (-inf, 0) when y_i = 0,

then draws every parameter from its Gaussian conditional, which is available
in closed form because the score is linear in each single parameter. Biases
share one (mean, precision) prior group; each factor dimension gets its own
group; group means and precisions are resampled from Normal(0, 1) and
Gamma(1, 1) hyperpriors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .model import FMParams, Link, raw_scores
from .sparse import DesignMatrix, SparseRow

NLL_EPS = 1e-12
_TINY = np.finfo(np.float64).tiny


class TrainingDivergedError(RuntimeError):
    """Loss or parameters became non-finite (learning rate too large)."""


@dataclass(frozen=True)
class TrainConfig:
    """Knobs shared by both trainers; `epochs` doubles as MCMC iterations."""

    d: int = 0
    epochs: int = 200
    learning_rate: float = 0.01
    l2: float = 0.0
    seed: int = 0
    init_scale: float = 0.01
    full_batch: bool = False
    burn_in: int | None = None  # Gibbs only; defaults to epochs // 5
    average_predictions: bool = True  # Gibbs test predictions: per-iteration mean

    def __post_init__(self):
        if self.d < 0:
            raise ValueError("d must be >= 0")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be nonnegative")
        if self.init_scale <= 0:
            raise ValueError("init scale must be positive")
        if self.burn_in is not None and not 0 <= self.burn_in < self.epochs:
            raise ValueError("burn-in must lie in [0, epochs)")

    def replace(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)

    @property
    def effective_burn_in(self) -> int:
        return self.epochs // 5 if self.burn_in is None else self.burn_in


@dataclass(frozen=True)
class HyperPriors:
    """Hyperpriors on each group's prior mean and precision."""

    mean_prior_var: float = 1.0  # group mean ~ Normal(0, this)
    precision_shape: float = 1.0  # group precision ~ Gamma(shape, rate)
    precision_rate: float = 1.0

    def __post_init__(self):
        if min(self.mean_prior_var, self.precision_shape, self.precision_rate) <= 0:
            raise ValueError("hyperprior parameters must be positive")


@dataclass(frozen=True)
class GibbsOutput:
    """Posterior-mean parameters plus, optionally, averaged test predictions."""

    params: FMParams
    test_predictions: np.ndarray | None
    history: tuple[dict, ...] = ()


def nll(predictions: Sequence[float], labels: Sequence[int]) -> float:
    """Mean negative log-likelihood of Bernoulli outcomes.

    Probabilities are clamped to [eps, 1 - eps] with eps = 1e-12 so that
    saturated predictions stay finite.
    """
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError(f"shape mismatch: {p.shape} predictions, {y.shape} labels")
    if p.size == 0:
        raise ValueError("empty prediction list")
    p = np.clip(p, NLL_EPS, 1.0 - NLL_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def init_params(config: TrainConfig, n_features: int) -> FMParams:
    """Zero biases; factor entries i.i.d. Normal(0, init_scale^2)."""
    if config.d == 0:
        return FMParams(0.0, np.zeros(n_features))
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    V = config.init_scale * rng.standard_normal((n_features, config.d))
    return FMParams(0.0, np.zeros(n_features), V)


def nll_gradient(
    params: FMParams, x: SparseRow, label: int
) -> tuple[float, np.ndarray, np.ndarray | None]:
    """Dense per-example gradient of the (unregularized) logit NLL.

    Returns (d/d bias, d/d w, d/d V); the V part is None when d = 0.
    """
    idx, xv = x.indices, x.values
    z = params.bias + float(np.dot(params.w[idx], xv))
    if params.V is not None:
        vx = params.V[idx] * xv[:, None]
        q = vx.sum(axis=0)
        z += 0.5 * (float(np.dot(q, q)) - float((vx * vx).sum()))
    g = float(Link.LOGIT.inverse(z)) - float(label)
    gw = np.zeros(params.n_features)
    gw[idx] = g * xv
    gV = None
    if params.V is not None:
        gV = np.zeros_like(params.V)
        gV[idx] = g * (xv[:, None] * q[None, :] - (xv * xv)[:, None] * params.V[idx])
    return g, gw, gV


def _check_labels(data: DesignMatrix) -> None:
    labels = data.labels
    if labels.size and (labels == labels[0]).all():
        warnings.warn(
            "all training labels are identical; the fit is degenerate",
            stacklevel=3,
        )


def _scores(bias, w, V, X, X2) -> np.ndarray:
    z = bias + X @ w
    if V is not None:
        q = X @ V
        z = z + 0.5 * ((q * q).sum(axis=1) - (X2 @ (V * V)).sum(axis=1))
    return np.asarray(z, dtype=np.float64)


def _epoch_metrics(bias, w, V, train, test, link):
    from .evaluation import accuracy, auc  # local import to avoid a cycle

    row = {
        "train_nll": nll(
            link.inverse(_scores(bias, w, V, train.csr, train.csr_squared if V is not None else None)),
            train.labels,
        )
    }
    if test is not None:
        p = link.inverse(
            _scores(bias, w, V, test.csr, test.csr_squared if V is not None else None)
        )
        row["test_acc"] = accuracy(p, test.labels)
        try:
            row["test_auc"] = auc(p, test.labels)
        except ValueError:
            row["test_auc"] = float("nan")
        row["test_nll"] = nll(p, test.labels)
    return row


def train_map_logit(
    data: DesignMatrix,
    config: TrainConfig,
    *,
    test: DesignMatrix | None = None,
    epoch_log: list | None = None,
) -> FMParams:
    """MAP fit under the logit link.

    Default mode is per-row stochastic gradient descent with seed-driven
    shuffling each epoch; ``full_batch=True`` switches to deterministic
    full-gradient descent (the convex d = 0 case decreases monotonically
    there). The per-example update uses the residual (p - y) times

        d score / d w_k    = x_k
        d score / d V_kf   = x_k * q_f - x_k^2 * V_kf,   q_f = sum_l x_l V_lf.
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty design matrix")
    _check_labels(data)

    start = init_params(config, data.space.width)
    bias = start.bias
    w = start.w.copy()
    V = None if start.V is None else start.V.copy()
    lr, l2 = config.learning_rate, config.l2
    y = data.labels.astype(np.float64)
    X = data.csr
    X2 = data.csr_squared if V is not None else None

    shuffle_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])

    if config.full_batch:
        scale = 1.0 / len(data)
        for epoch in range(config.epochs):
            z = bias + X @ w
            if V is not None:
                q = X @ V
                z = z + 0.5 * ((q * q).sum(axis=1) - (X2 @ (V * V)).sum(axis=1))
            p = Link.LOGIT.inverse(z)
            r = (p - y) * scale
            bias -= lr * float(r.sum())
            w -= lr * (X.T @ r + l2 * w)
            if V is not None:
                gV = X.T @ (r[:, None] * q) - (X2.T @ r)[:, None] * V + l2 * V
                V -= lr * gV
            if not np.isfinite(bias) or not np.all(np.isfinite(w)):
                raise TrainingDivergedError(f"non-finite parameters at epoch {epoch}")
            if epoch_log is not None:
                epoch_log.append(
                    {"epoch": epoch, **_epoch_metrics(bias, w, V, data, test, Link.LOGIT)}
                )
        return FMParams(bias, w, V)

    indptr, cols, vals = X.indptr, X.indices, X.data
    for epoch in range(config.epochs):
        for r in shuffle_rng.permutation(len(data)):
            lo, hi = indptr[r], indptr[r + 1]
            idx = cols[lo:hi]
            xv = vals[lo:hi]
            z = bias + w[idx] @ xv
            if V is not None:
                vx = V[idx] * xv[:, None]
                qf = vx.sum(axis=0)
                z += 0.5 * (qf @ qf - (vx * vx).sum())
            g = float(Link.LOGIT.inverse(z)) - y[r]
            bias -= lr * g
            w[idx] -= lr * (g * xv + l2 * w[idx])
            if V is not None:
                Vk = V[idx]
                gV = g * (xv[:, None] * qf[None, :] - (xv * xv)[:, None] * Vk)
                V[idx] = Vk - lr * (gV + l2 * Vk)
        if not np.isfinite(bias) or not np.all(np.isfinite(w)) or (
            V is not None and not np.all(np.isfinite(V))
        ):
            raise TrainingDivergedError(f"non-finite parameters at epoch {epoch}")
        if epoch_log is not None:
            epoch_log.append(
                {"epoch": epoch, **_epoch_metrics(bias, w, V, data, test, Link.LOGIT)}
            )
    return FMParams(bias, w, V)


def sample_truncated_normal(
    means: np.ndarray, positive: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Unit-variance normal draws constrained to the sign given by ``positive``.

    Uses the inverse upper-tail CDF, which stays accurate when the mean sits
    many standard deviations on the wrong side of zero.
    """
    means = np.asarray(means, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    signed = np.where(positive, means, -means)
    u = rng.uniform(size=means.shape)
    tail = ndtr(signed)  # P(z > 0) for a unit normal centered at `signed`
    v = np.clip(u * tail, _TINY, 1.0)
    z = signed - ndtri(v)
    z = np.maximum(z, _TINY)  # guard the exact-zero corner
    return np.where(positive, z, -z)


class _GroupState:
    """Prior mean and precision of one parameter group."""

    __slots__ = ("mean", "precision")

    def __init__(self):
        self.mean = 0.0
        self.precision = 1.0

    def resample(self, values: np.ndarray, priors: HyperPriors, rng) -> None:
        n = values.size
        # precision | values ~ Gamma(shape + n/2, rate + sum sq dev / 2)
        shape = priors.precision_shape + 0.5 * n
        rate = priors.precision_rate + 0.5 * float(((values - self.mean) ** 2).sum())
        lam = rng.gamma(shape, 1.0 / rate)
        if not np.isfinite(lam) or lam <= 0.0:
            lam = 1.0  # precision underflow guard
        self.precision = float(lam)
        # mean | values: Normal prior with mean 0 and variance mean_prior_var
        prec0 = 1.0 / priors.mean_prior_var
        post_prec = prec0 + n * self.precision
        post_mean = self.precision * float(values.sum()) / post_prec
        self.mean = float(post_mean + rng.standard_normal() / np.sqrt(post_prec))


def _draw(prior_mean, prior_prec, h_dot_r, h_dot_h, rng) -> float:
    """One Gaussian conditional draw for a parameter with unit-variance noise."""
    prec = prior_prec + h_dot_h
    var = 1.0 / prec
    if not np.isfinite(var):
        raise TrainingDivergedError("non-finite conditional variance in Gibbs sweep")
    mean = (prior_prec * prior_mean + h_dot_r) * var
    return mean + rng.standard_normal() * np.sqrt(var)


def train_gibbs_probit(
    train: DesignMatrix,
    test: DesignMatrix | None = None,
    config: TrainConfig = TrainConfig(),
    priors: HyperPriors = HyperPriors(),
    *,
    epoch_log: list | None = None,
) -> GibbsOutput:
    """Bayesian fit under the probit link via latent-utility Gibbs sampling.

    Each iteration (1) draws the latent utilities truncated to the side their
    label dictates, (2) sweeps bias, w, and V in fixed order drawing each from
    its Gaussian conditional while keeping the score residuals in sync, and
    (3) resamples the per-group prior means and precisions. After burn-in,
    parameters are accumulated into a posterior mean and test probabilities
    into a running average.
    """
    if len(train) == 0:
        raise ValueError("cannot train on an empty design matrix")
    _check_labels(train)

    n = train.space.width
    d = config.d
    iters = config.epochs
    burn_in = config.effective_burn_in

    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(3)[2])

    start = init_params(config, n)
    bias = start.bias
    w = start.w.copy()
    V = None if start.V is None else start.V.copy()

    X = train.csr
    X2 = train.csr_squared if d else None
    Xc = X.tocsc()
    col_rows = [Xc.indices[Xc.indptr[k] : Xc.indptr[k + 1]] for k in range(n)]
    col_vals = [Xc.data[Xc.indptr[k] : Xc.indptr[k + 1]] for k in range(n)]
    col_sq = [float(v @ v) for v in col_vals]
    positive = train.labels.astype(bool)
    test_X = test.csr if test is not None else None
    test_X2 = test.csr_squared if (test is not None and d) else None

    bias_group = _GroupState()
    dim_groups = [_GroupState() for _ in range(d)]

    kept = 0
    bias_sum = 0.0
    w_sum = np.zeros_like(w)
    V_sum = None if V is None else np.zeros_like(V)
    test_sum = None if test is None else np.zeros(len(test))
    history: list[dict] = []

    for it in range(iters):
        scores = _scores(bias, w, V, X, X2)
        z = sample_truncated_normal(scores, positive, rng)
        e = scores - z  # running residual, kept in sync below

        # global bias: d score / d bias = 1 for every row
        new_bias = _draw(
            bias_group.mean,
            bias_group.precision,
            float((bias - e).sum()),
            float(len(train)),
            rng,
        )
        e += new_bias - bias
        bias = new_bias

        for k in range(n):
            rows, hv = col_rows[k], col_vals[k]
            if rows.size == 0:
                # untouched feature: a pure prior draw
                w[k] = bias_group.mean + rng.standard_normal() / np.sqrt(
                    bias_group.precision
                )
                continue
            h_dot_r = float(hv @ (w[k] * hv - e[rows]))
            new = _draw(bias_group.mean, bias_group.precision, h_dot_r, col_sq[k], rng)
            e[rows] += (new - w[k]) * hv
            w[k] = new

        if V is not None:
            for f in range(d):
                group = dim_groups[f]
                qf = X @ V[:, f]
                for k in range(n):
                    rows, xv = col_rows[k], col_vals[k]
                    old = V[k, f]
                    if rows.size == 0:
                        V[k, f] = group.mean + rng.standard_normal() / np.sqrt(
                            group.precision
                        )
                        continue
                    h = xv * (qf[rows] - xv * old)
                    h_dot_r = float(h @ (old * h - e[rows]))
                    new = _draw(group.mean, group.precision, h_dot_r, float(h @ h), rng)
                    delta = new - old
                    e[rows] += delta * h
                    qf[rows] += delta * xv
                    V[k, f] = new

        bias_group.resample(np.concatenate(([bias], w)), priors, rng)
        if V is not None:
            for f in range(d):
                dim_groups[f].resample(V[:, f], priors, rng)

        if it >= burn_in:
            kept += 1
            bias_sum += bias
            w_sum += w
            if V_sum is not None:
                V_sum += V
            if test_sum is not None:
                test_sum += Link.PROBIT.inverse(_scores(bias, w, V, test_X, test_X2))

        if epoch_log is not None:
            row = {"epoch": it, **_epoch_metrics(bias, w, V, train, test, Link.PROBIT)}
            history.append(row)
            epoch_log.append(row)

    mean_params = FMParams(
        bias_sum / kept,
        w_sum / kept,
        None if V_sum is None else V_sum / kept,
    )
    if test is None:
        test_pred = None
    elif config.average_predictions:
        test_pred = np.clip(test_sum / kept, 1e-15, 1.0 - 1e-15)
    else:
        test_pred = Link.PROBIT.inverse(raw_scores(mean_params, test))
    return GibbsOutput(mean_params, test_pred, tuple(history))
