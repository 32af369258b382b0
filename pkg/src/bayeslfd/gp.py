"""Exact Gaussian-process regression baseline with the same predictive
interface as the Bayesian network policy.

One independent GP per action dimension, squared-exponential kernel with
per-input-dimension (ARD) lengthscales and a constant mean set to the
training-target mean.  Hyperparameters are fitted by gradient ascent on
the log marginal likelihood in log-space with backtracking step control;
all solves go through a Cholesky factorization with escalating jitter.

The cubic cost of exact inference is deliberate: fitting refuses datasets
beyond a configurable cap instead of silently approximating.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.spatial.distance import cdist

from .bnn import PredictiveOutput, make_predictive_output

JITTERS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)
LOG_2PI = float(np.log(2.0 * np.pi))

# Log-space clamp keeping line-search candidates numerically sane.
LOG_PARAM_MIN, LOG_PARAM_MAX = -12.0, 12.0


class GpDatasetTooLarge(ValueError):
    """Training set exceeds the exact-inference cap."""


class IllConditionedKernel(RuntimeError):
    """Cholesky failed even after the maximum jitter escalation."""


@dataclass
class KernelConfig:
    signal_variance: float
    lengthscales: np.ndarray  # one per input dim
    noise_variance: float
    mean_constant: float = 0.0

    def __post_init__(self) -> None:
        self.lengthscales = np.asarray(self.lengthscales, dtype=np.float64).reshape(-1)
        if self.signal_variance <= 0 or self.noise_variance <= 0:
            raise ValueError("variances must be positive")
        if np.any(self.lengthscales <= 0):
            raise ValueError("lengthscales must be positive")


def default_kernel_config(input_dim: int, mean_constant: float = 0.0) -> KernelConfig:
    return KernelConfig(
        signal_variance=1.0,
        lengthscales=np.ones(input_dim),
        noise_variance=0.01,
        mean_constant=mean_constant,
    )


def kernel_matrix(cfg: KernelConfig, A: np.ndarray, B: np.ndarray | None = None) -> np.ndarray:
    As = np.asarray(A, dtype=np.float64) / cfg.lengthscales
    Bs = As if B is None else np.asarray(B, dtype=np.float64) / cfg.lengthscales
    d2 = cdist(As, Bs, metric="sqeuclidean")
    return cfg.signal_variance * np.exp(-0.5 * d2)


def kernel_eval(cfg: KernelConfig, x, y) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    y = np.asarray(y, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != cfg.lengthscales.shape[0] or y.shape[1] != cfg.lengthscales.shape[0]:
        raise ValueError("input dim does not match the lengthscale vector")
    return float(kernel_matrix(cfg, x, y)[0, 0])


def _chol_with_jitter(Kn: np.ndarray) -> np.ndarray:
    for jitter in JITTERS:
        try:
            return cholesky(Kn + jitter * np.eye(Kn.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            continue
    raise IllConditionedKernel("kernel matrix not positive definite after max jitter")


def log_marginal_likelihood(X: np.ndarray, y: np.ndarray, cfg: KernelConfig) -> float:
    """Gaussian log evidence of one output dimension via Cholesky."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = X.shape[0]
    if n < 1:
        raise ValueError("need at least one training point")
    r = y - cfg.mean_constant
    Kn = kernel_matrix(cfg, X) + cfg.noise_variance * np.eye(n)
    L = _chol_with_jitter(Kn)
    alpha = solve_triangular(L.T, solve_triangular(L, r, lower=True), lower=False)
    return float(-0.5 * r @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI)


def _lml_and_grad(
    X: np.ndarray, r: np.ndarray, log_params: np.ndarray
) -> tuple[float, np.ndarray]:
    """Value and gradient of the log evidence w.r.t.
    [ln signal_variance, ln lengthscale_1.., ln noise_variance]."""
    n, d = X.shape
    sv = float(np.exp(log_params[0]))
    ls = np.exp(log_params[1 : 1 + d])
    nv = float(np.exp(log_params[-1]))
    Xs = X / ls
    Kf = sv * np.exp(-0.5 * cdist(Xs, Xs, metric="sqeuclidean"))
    L = _chol_with_jitter(Kf + nv * np.eye(n))
    alpha = solve_triangular(L.T, solve_triangular(L, r, lower=True), lower=False)
    lml = float(-0.5 * r @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI)
    Kinv = solve_triangular(L.T, solve_triangular(L, np.eye(n), lower=True), lower=False)
    W = np.outer(alpha, alpha) - Kinv
    grad = np.empty(d + 2)
    grad[0] = 0.5 * float(np.sum(W * Kf))
    WK = W * Kf
    for j in range(d):
        D_j = (X[:, j, None] - X[None, :, j]) ** 2
        grad[1 + j] = 0.5 * float(np.sum(WK * D_j)) / (ls[j] ** 2)
    grad[-1] = 0.5 * nv * float(np.trace(W))
    return lml, grad


@dataclass
class GpModel:
    configs: list[KernelConfig]  # one per output dim
    X: np.ndarray  # (n, d) retained training inputs
    Y: np.ndarray  # (n, n_out) retained training targets
    chols: list[np.ndarray]
    alphas: list[np.ndarray]
    fit_traces: list[list[float]]

    @property
    def n_outputs(self) -> int:
        return len(self.configs)


def _factorize(X: np.ndarray, Y: np.ndarray, configs: list[KernelConfig]):
    chols, alphas = [], []
    n = X.shape[0]
    for d, cfg in enumerate(configs):
        Kn = kernel_matrix(cfg, X) + cfg.noise_variance * np.eye(n)
        L = _chol_with_jitter(Kn)
        r = Y[:, d] - cfg.mean_constant
        alphas.append(solve_triangular(L.T, solve_triangular(L, r, lower=True), lower=False))
        chols.append(L)
    return chols, alphas


def fit(
    X: np.ndarray,
    Y: np.ndarray,
    init: KernelConfig,
    steps: int = 100,
    max_points: int = 2000,
    initial_step: float = 0.1,
) -> GpModel:
    """Fit one GP per output dim by log-space gradient ascent on the evidence.

    Each outer step takes the analytic gradient and backtracks the step size
    until the evidence improves, so the recorded trace is nondecreasing.
    The constant mean is set to the per-dimension training-target mean.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, d = X.shape
    if n < 1:
        raise ValueError("empty dataset")
    if n > max_points:
        raise GpDatasetTooLarge(f"{n} points exceeds the exact-inference cap {max_points}")

    configs: list[KernelConfig] = []
    traces: list[list[float]] = []
    for out in range(Y.shape[1]):
        mean_c = float(Y[:, out].mean())
        r = Y[:, out] - mean_c
        params = np.concatenate(
            [[np.log(init.signal_variance)], np.log(init.lengthscales), [np.log(init.noise_variance)]]
        )
        lml, grad = _lml_and_grad(X, r, params)
        trace = [lml]
        step_size = initial_step
        for _ in range(steps):
            accepted = False
            s = step_size
            while s >= 1e-12:
                cand = np.clip(params + s * grad, LOG_PARAM_MIN, LOG_PARAM_MAX)
                try:
                    cand_lml, cand_grad = _lml_and_grad(X, r, cand)
                except IllConditionedKernel:
                    cand_lml = -np.inf
                if np.isfinite(cand_lml) and cand_lml > lml:
                    params, lml, grad = cand, cand_lml, cand_grad
                    step_size = min(s * 2.0, 10.0)
                    accepted = True
                    break
                s *= 0.5
            if not accepted:
                break
            trace.append(lml)
        configs.append(
            KernelConfig(
                signal_variance=float(np.exp(params[0])),
                lengthscales=np.exp(params[1 : 1 + d]),
                noise_variance=float(np.exp(params[-1])),
                mean_constant=mean_c,
            )
        )
        traces.append(trace)
    chols, alphas = _factorize(X, Y, configs)
    return GpModel(configs=configs, X=X, Y=Y, chols=chols, alphas=alphas, fit_traces=traces)


def _posterior_variance_unfloored(model: GpModel, x: np.ndarray, out: int) -> float:
    cfg = model.configs[out]
    k_star = kernel_matrix(cfg, model.X, x[None, :])[:, 0]
    v = solve_triangular(model.chols[out], k_star, lower=True)
    return float(cfg.signal_variance - v @ v + cfg.noise_variance)


def predict_gp(model: GpModel, x) -> PredictiveOutput:
    """Exact posterior mean and (noise-inclusive) variance, floored at zero."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != model.X.shape[1]:
        raise ValueError(f"query dim {x.shape[0]} != training dim {model.X.shape[1]}")
    means = np.empty(model.n_outputs)
    stds = np.empty(model.n_outputs)
    for out, cfg in enumerate(model.configs):
        k_star = kernel_matrix(cfg, model.X, x[None, :])[:, 0]
        means[out] = cfg.mean_constant + k_star @ model.alphas[out]
        stds[out] = np.sqrt(max(_posterior_variance_unfloored(model, x, out), 0.0))
    return make_predictive_output(means, stds)


def predict_gp_batch(model: GpModel, X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized predict_gp over rows; returns (means, stds, sigma_scalars)."""
    X = np.asarray(X, dtype=np.float64)
    m = X.shape[0]
    means = np.empty((m, model.n_outputs))
    stds = np.empty((m, model.n_outputs))
    for out, cfg in enumerate(model.configs):
        K_star = kernel_matrix(cfg, model.X, X)  # (n, m)
        means[:, out] = cfg.mean_constant + K_star.T @ model.alphas[out]
        V = solve_triangular(model.chols[out], K_star, lower=True)
        var = cfg.signal_variance - np.sum(V * V, axis=0) + cfg.noise_variance
        stds[:, out] = np.sqrt(np.maximum(var, 0.0))
    sigmas = stds.sum(axis=1) / stds.shape[1]
    return means, stds, sigmas


GP_FORMAT_VERSION = 1


def save_gp(model: GpModel, path) -> None:
    """Hyperparameters plus training set; factorization is rebuilt on load."""
    arrays = {
        "format_version": np.int64(GP_FORMAT_VERSION),
        "X": model.X,
        "Y": model.Y,
        "signal_variance": np.array([c.signal_variance for c in model.configs]),
        "noise_variance": np.array([c.noise_variance for c in model.configs]),
        "mean_constant": np.array([c.mean_constant for c in model.configs]),
        "lengthscales": np.stack([c.lengthscales for c in model.configs]),
    }
    np.savez(path, **arrays)


def load_gp(path) -> GpModel:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != GP_FORMAT_VERSION:
            raise ValueError(f"unsupported GP format version {version}")
        X, Y = data["X"], data["Y"]
        configs = [
            KernelConfig(
                signal_variance=float(data["signal_variance"][i]),
                lengthscales=data["lengthscales"][i],
                noise_variance=float(data["noise_variance"][i]),
                mean_constant=float(data["mean_constant"][i]),
            )
            for i in range(data["signal_variance"].shape[0])
        ]
    chols, alphas = _factorize(X, Y, configs)
    return GpModel(configs=configs, X=X, Y=Y, chols=chols, alphas=alphas, fit_traces=[])
