"""Mean-field Bayesian MLP policy trained by backprop through weight noise.

Every weight and bias carries a Gaussian (mu, rho) pair with scale
sigma = softplus(rho), sampled via w = mu + sigma * eps.  The training
objective is the variational free energy: a Monte Carlo estimate of the
negative Gaussian log-likelihood of the targets (with a single learned
homoscedastic log-noise) plus the closed-form KL divergence to a standard
normal prior, scaled by batch_size / dataset_size so one epoch pays the
full KL exactly once.

Prediction runs M forward passes with independently sampled weights and
summarizes them as an empirical mean, a per-output-dimension standard
deviation, and the scalar uncertainty obtained by averaging the latter.
Everything runs in float64 on CPU with explicitly threaded generators so
results are reproducible bit for bit.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

INIT_MU_STD = 0.1
INIT_SIGMA = 0.05
INIT_LIKELIHOOD_NOISE = 0.1

_LOG_2PI = math.log(2.0 * math.pi)

_ACTIVATIONS = {"tanh": torch.tanh, "relu": F.relu}


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite; carries the last good posterior."""

    def __init__(self, message: str, posterior: "VariationalPosterior", epoch_losses: list):
        super().__init__(message)
        self.posterior = posterior
        self.epoch_losses = epoch_losses


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden_layers: tuple[int, ...] = (64, 64)
    output_dim: int = 1
    activation: str = "tanh"

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if len(self.hidden_layers) < 1 or min(self.hidden_layers) < 1:
            raise ValueError("need at least one hidden layer of positive width")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(_ACTIVATIONS)}")
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_layers, self.output_dim]
        return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    def n_parameters(self) -> int:
        return sum(di * do + do for di, do in self.layer_dims())


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    train_mc_samples: int = 2
    predict_mc_samples: int = 50
    kl_scale_mode: str = "per_batch_fraction"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.train_mc_samples < 1 or self.predict_mc_samples < 1:
            raise ValueError("MC sample counts must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.kl_scale_mode != "per_batch_fraction":
            raise ValueError("only per_batch_fraction KL scaling is supported")


@dataclass(frozen=True)
class PredictiveOutput:
    """Action mean plus uncertainty; sigma_scalar averages std_per_dim."""

    mean: np.ndarray
    std_per_dim: np.ndarray
    sigma_scalar: float

    def __post_init__(self) -> None:
        if np.any(self.std_per_dim < 0):
            raise ValueError("standard deviations must be nonnegative")


def make_predictive_output(mean: np.ndarray, std_per_dim: np.ndarray) -> PredictiveOutput:
    std = np.asarray(std_per_dim, dtype=np.float64)
    return PredictiveOutput(
        mean=np.asarray(mean, dtype=np.float64),
        std_per_dim=std,
        sigma_scalar=float(std.sum() / std.shape[0]),
    )


class VariationalPosterior(torch.nn.Module):
    """Per-parameter Gaussian (mu, rho) pairs plus the likelihood log-noise.

    The pairs are stored as flat vectors (one slice per layer weight/bias,
    weights before biases) so sampling and the KL reduce to a handful of
    vectorized ops.
    """

    def __init__(self, arch: Architecture):
        super().__init__()
        self.arch = arch
        self.slices: list[tuple[int, tuple[int, ...]]] = []
        offset = 0
        for d_in, d_out in arch.layer_dims():
            self.slices.append((offset, (d_out, d_in)))
            offset += d_in * d_out
            self.slices.append((offset, (d_out,)))
            offset += d_out
        self.mu = torch.nn.Parameter(torch.zeros(offset, dtype=torch.float64))
        self.rho = torch.nn.Parameter(torch.zeros(offset, dtype=torch.float64))
        self.likelihood_log_noise = torch.nn.Parameter(
            torch.tensor(math.log(INIT_LIKELIHOOD_NOISE), dtype=torch.float64)
        )
        self.init_seed = 0

    @property
    def n_layers(self) -> int:
        return len(self.slices) // 2

    def n_param_pairs(self) -> int:
        return self.mu.numel()

    def _views(self, flat: torch.Tensor) -> list:
        out = []
        for i in range(0, len(self.slices), 2):
            ow, shape_w = self.slices[i]
            ob, shape_b = self.slices[i + 1]
            W = flat[ow : ow + shape_w[0] * shape_w[1]].view(shape_w)
            b = flat[ob : ob + shape_b[0]]
            out.append((W, b))
        return out

    def mu_tensors(self):
        for W, b in self._views(self.mu):
            yield W
            yield b

    def rho_tensors(self):
        for W, b in self._views(self.rho):
            yield W
            yield b

    def sigmas(self) -> torch.Tensor:
        return F.softplus(self.rho.detach())

    def clone(self) -> "VariationalPosterior":
        other = VariationalPosterior(self.arch)
        with torch.no_grad():
            for dst, src in zip(other.parameters(), self.parameters()):
                dst.copy_(src)
        other.init_seed = self.init_seed
        return other


def softplus_inverse(y: float) -> float:
    return math.log(math.expm1(y))


def init_posterior(arch: Architecture, seed: int) -> VariationalPosterior:
    """Means drawn N(0, 0.1^2); scales start at 0.05; noise starts at 0.1."""
    post = VariationalPosterior(arch)
    g = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        post.mu.normal_(0.0, INIT_MU_STD, generator=g)
        post.rho.fill_(softplus_inverse(INIT_SIGMA))
    post.init_seed = int(seed)
    return post


def weights_from_eps(post: VariationalPosterior, eps: torch.Tensor) -> list:
    """Reparameterized sample w = mu + softplus(rho) * eps (differentiable)."""
    flat = post.mu + F.softplus(post.rho) * eps
    return post._views(flat)


def draw_eps(post: VariationalPosterior, generator: torch.Generator) -> torch.Tensor:
    return torch.randn(post.mu.shape, generator=generator, dtype=torch.float64)


def sample_weights(post: VariationalPosterior, generator: torch.Generator) -> list:
    return weights_from_eps(post, draw_eps(post, generator))


def forward_with_weights(arch: Architecture, weights: list, x: torch.Tensor) -> torch.Tensor:
    act = _ACTIVATIONS[arch.activation]
    h = x
    for i, (W, b) in enumerate(weights):
        h = F.linear(h, W, b)
        if i < len(weights) - 1:
            h = act(h)
    return h


def _forward_sampled(
    post: VariationalPosterior, X: torch.Tensor, n_samples: int, generator: torch.Generator
) -> torch.Tensor:
    """Forward X under n_samples independent weight draws in one batched pass.

    Returns (n_samples, batch, output_dim); differentiable w.r.t. mu/rho.
    """
    act = _ACTIVATIONS[post.arch.activation]
    # float32 draw upcast to float64: the float64 normal kernel is ~5x slower
    # and the quantization is far below MC noise.
    eps = torch.randn(
        (n_samples, post.mu.numel()), generator=generator, dtype=torch.float32
    ).to(torch.float64)
    theta = post.mu + F.softplus(post.rho) * eps  # (M, P)
    h = X.unsqueeze(0).expand(n_samples, *X.shape)
    n_slices = len(post.slices)
    for i in range(0, n_slices, 2):
        ow, (d_out, d_in) = post.slices[i]
        ob, _ = post.slices[i + 1]
        W = theta[:, ow : ow + d_out * d_in].view(n_samples, d_out, d_in)
        b = theta[:, ob : ob + d_out]
        h = torch.baddbmm(b.unsqueeze(1), h, W.transpose(1, 2))
        if i + 2 < n_slices:
            h = act(h)
    return h


def kl_to_prior(post: VariationalPosterior) -> torch.Tensor:
    """Closed-form KL(q || N(0, I)) summed over all weights and biases.

    Per parameter: -ln(sigma) + (sigma^2 + mu^2) / 2 - 1/2.
    """
    sigma = F.softplus(post.rho)
    return (-torch.log(sigma) + (sigma**2 + post.mu**2) / 2.0 - 0.5).sum()


def gaussian_nll(pred: torch.Tensor, target: torch.Tensor, log_noise: torch.Tensor) -> torch.Tensor:
    """Sum of -ln N(target | pred, exp(log_noise)^2) over all entries."""
    var = torch.exp(2.0 * log_noise)
    return 0.5 * ((target - pred) ** 2 / var + _LOG_2PI + 2.0 * log_noise).sum()


def _as_tensor(X) -> torch.Tensor:
    if isinstance(X, torch.Tensor):
        return X.to(torch.float64)
    return torch.as_tensor(np.asarray(X), dtype=torch.float64)


def elbo_loss(
    post: VariationalPosterior,
    X,
    Y,
    cfg: TrainConfig,
    generator: torch.Generator,
    dataset_size: int | None = None,
) -> torch.Tensor:
    """MC negative log-likelihood plus KL scaled by batch_size / dataset_size."""
    Xt, Yt = _as_tensor(X), _as_tensor(Y)
    if Xt.ndim != 2 or Xt.shape[0] == 0:
        raise ValueError("batch must be a nonempty 2-D array")
    if Xt.shape[1] != post.arch.input_dim:
        raise ValueError(f"feature dim {Xt.shape[1]} != input_dim {post.arch.input_dim}")
    n = Xt.shape[0]
    scale = n / float(dataset_size if dataset_size is not None else n)
    preds = _forward_sampled(post, Xt, cfg.train_mc_samples, generator)
    nll = gaussian_nll(preds, Yt.unsqueeze(0).expand_as(preds), post.likelihood_log_noise)
    return nll / cfg.train_mc_samples + scale * kl_to_prior(post)


def train(
    post: VariationalPosterior, X, Y, cfg: TrainConfig
) -> tuple[VariationalPosterior, list[float]]:
    """Minibatch Adam on the free energy; returns a new posterior and the
    per-epoch mean losses.  The input posterior is left untouched.

    Raises TrainingDiverged (carrying the last finite snapshot) if the loss
    stops being finite.
    """
    work = post.clone()
    if cfg.epochs == 0:
        return work, []
    Xt, Yt = _as_tensor(X), _as_tensor(Y)
    n = Xt.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    opt = torch.optim.Adam(work.parameters(), lr=cfg.learning_rate)
    g_eps = torch.Generator().manual_seed(int(cfg.seed))
    g_perm = torch.Generator().manual_seed(int(cfg.seed) + 1)
    epoch_losses: list[float] = []
    last_finite = work.clone()
    for _ in range(cfg.epochs):
        perm = torch.randperm(n, generator=g_perm)
        total, batches = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            loss = elbo_loss(work, Xt[idx], Yt[idx], cfg, g_eps, dataset_size=n)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} after {len(epoch_losses)} epochs",
                    last_finite,
                    epoch_losses,
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += value
            batches += 1
        epoch_losses.append(total / batches)
        last_finite = work.clone()
    return work, epoch_losses


def predict_batch(
    post: VariationalPosterior, X, M: int, generator: torch.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise MC predictive summaries: means, stds, scalar uncertainties."""
    if M < 2:
        raise ValueError("need at least 2 MC samples for a standard deviation")
    Xt = _as_tensor(X)
    if Xt.ndim == 1:
        Xt = Xt.unsqueeze(0)
    with torch.no_grad():
        outs = _forward_sampled(post, Xt, M, generator)
        means = outs.mean(dim=0)
        stds = outs.std(dim=0, unbiased=True)
    means_np = means.numpy()
    stds_np = stds.numpy()
    sigmas = stds_np.sum(axis=1) / stds_np.shape[1]
    return means_np, stds_np, sigmas


def predict(
    post: VariationalPosterior, x, M: int, generator: torch.Generator
) -> PredictiveOutput:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != post.arch.input_dim:
        raise ValueError(f"feature dim {x.shape[0]} != input_dim {post.arch.input_dim}")
    means, stds, _ = predict_batch(post, x[None, :], M, generator)
    return make_predictive_output(means[0], stds[0])


FORMAT_VERSION = 1


def save_posterior(post: VariationalPosterior, path) -> None:
    """Versioned record: architecture, flat mu/rho arrays, log-noise, seed."""
    arch = post.arch
    np.savez(
        path,
        format_version=np.int64(FORMAT_VERSION),
        arch_json=json.dumps(
            {
                "input_dim": arch.input_dim,
                "hidden_layers": list(arch.hidden_layers),
                "output_dim": arch.output_dim,
                "activation": arch.activation,
            }
        ),
        mu=post.mu.detach().numpy().copy(),
        rho=post.rho.detach().numpy().copy(),
        likelihood_log_noise=np.float64(float(post.likelihood_log_noise.detach())),
        seed=np.int64(post.init_seed),
    )


def load_posterior(path) -> VariationalPosterior:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported posterior format version {version}")
        spec = json.loads(str(data["arch_json"]))
        arch = Architecture(
            input_dim=int(spec["input_dim"]),
            hidden_layers=tuple(spec["hidden_layers"]),
            output_dim=int(spec["output_dim"]),
            activation=spec["activation"],
        )
        post = VariationalPosterior(arch)
        if data["mu"].shape[0] != post.mu.numel():
            raise ValueError("parameter count does not match the architecture")
        with torch.no_grad():
            post.mu.copy_(torch.from_numpy(data["mu"]))
            post.rho.copy_(torch.from_numpy(data["rho"]))
            post.likelihood_log_noise.fill_(float(data["likelihood_log_noise"]))
        post.init_seed = int(data["seed"])
    return post
