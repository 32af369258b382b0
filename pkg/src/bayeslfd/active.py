"""Sequential active learning from demonstration over a context set.

The controller executes contexts in order.  Each step it builds the current
temporal window, predicts an action with its uncertainty, and feeds the
uncertainty to the detector; when the detector fires, the episode halts,
fresh expert demonstrations are merged into the aggregate dataset, the
policy is retrained, the adaptive threshold is recomputed over all trained
contexts, and the episode restarts in the same context.

Baselines: the naive learner queries and retrains on every context before
executing it; the random learner never queries and runs its untrained
prior policy.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.stats import rankdata

from . import bnn, envs, gp
from .detector import DetectorState
from .seeding import derive_seed
from .windows import Normalizer, bootstrap_window, build_windows, windows_to_arrays


class BnnPolicy:
    """Bayesian-network policy: standardize the window, then MC-predict."""

    def __init__(
        self,
        posterior: bnn.VariationalPosterior,
        normalizer: Normalizer,
        mc_samples: int,
        generator: torch.Generator,
    ):
        self.posterior = posterior
        self.normalizer = normalizer
        self.mc_samples = mc_samples
        self.generator = generator

    def predict(self, features: np.ndarray) -> bnn.PredictiveOutput:
        z = self.normalizer.apply(features)
        return bnn.predict(self.posterior, z, self.mc_samples, self.generator)

    def predict_many(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        Z = self.normalizer.apply(X)
        return bnn.predict_batch(self.posterior, Z, self.mc_samples, self.generator)


class GpPolicy:
    """GP policy sharing the predictive contract of BnnPolicy."""

    def __init__(self, model: gp.GpModel, normalizer: Normalizer):
        self.model = model
        self.normalizer = normalizer

    def predict(self, features: np.ndarray) -> bnn.PredictiveOutput:
        return gp.predict_gp(self.model, self.normalizer.apply(features))

    def predict_many(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return gp.predict_gp_batch(self.model, self.normalizer.apply(X))


class ExpertPolicy:
    """Wraps the demonstrator behind the window-based policy interface.

    Reads the current state back out of the (raw, unnormalized) window
    features and reports zero uncertainty.
    """

    def __init__(self, ctx: envs.Context, k: int):
        self.ctx = ctx
        self.k = k

    def predict(self, features: np.ndarray) -> bnn.PredictiveOutput:
        dim_s = self.ctx.state_dim
        s = features[(self.k - 1) * dim_s : self.k * dim_s]
        a = envs.expert_action(self.ctx, s)
        return bnn.make_predictive_output(a, np.zeros_like(a))


@dataclass
class EpisodeResult:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    sigmas: np.ndarray  # one per executed step
    halted_at: int | None  # step index (1-based) at which the detector fired
    trace: list[tuple]  # (t, sigma, smoothed, threshold, fired) per observation

    @property
    def r_d(self) -> float:
        return float(self.rewards.sum())

    @property
    def sigma_d(self) -> float:
        return float(self.sigmas.sum())


def run_episode(
    policy,
    ctx: envs.Context,
    k: int,
    rng: np.random.Generator,
    detector: DetectorState | None = None,
    collect_trace: bool = False,
) -> EpisodeResult:
    """One episode under ``policy``; halts early if the detector fires.

    The firing step's action is never applied and its reward/uncertainty are
    not accumulated, matching the restart semantics of the query loop.
    """
    s = envs.reset(ctx, rng)
    states, actions, rewards, sigmas = [s], [], [], []
    trace: list[tuple] = []
    halted_at = None
    if detector is not None:
        detector.reset_episode()
    for t in range(1, ctx.horizon + 1):
        w = bootstrap_window(states, actions, rewards, k, source=(ctx.id, 0, t - 1))
        out = policy.predict(w.features)
        if detector is not None:
            detector.observe(out.sigma_scalar)
            fired = detector.should_query()
            if collect_trace:
                trace.append(
                    (detector.t, out.sigma_scalar, detector.smoothed(), detector.threshold, fired)
                )
            if fired:
                halted_at = t
                break
        a = envs.clip_action(ctx, out.mean)
        s, r = envs.step(ctx, s, a)
        states.append(s)
        actions.append(a)
        rewards.append(r)
        sigmas.append(out.sigma_scalar)
    return EpisodeResult(
        states=np.stack(states),
        actions=np.stack(actions) if actions else np.zeros((0, ctx.action_dim)),
        rewards=np.array(rewards),
        sigmas=np.array(sigmas),
        halted_at=halted_at,
        trace=trace,
    )


@dataclass
class RunConfig:
    contexts: list[envs.Context]
    k: int = 2
    c: float = 1.0
    m: int = 10
    t_start: int | None = None  # defaults to m
    demos_per_request: int = 5
    train_cfg: bnn.TrainConfig = field(default_factory=bnn.TrainConfig)
    hidden_layers: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    eval_episodes: int = 0  # post-run evaluation episodes per context
    seed: int = 0
    max_queries_per_context: int = 3
    max_total_queries: int | None = None
    warm_start: bool = True

    def __post_init__(self) -> None:
        if not self.contexts:
            raise ValueError("need a nonempty context sequence")
        if self.demos_per_request < 1:
            raise ValueError("demos_per_request must be >= 1")
        if self.t_start is None:
            self.t_start = self.m


@dataclass
class ContextLog:
    context_id: str
    order_index: int
    queried: bool
    n_queries: int
    r_d: float  # reward of the final executed episode
    sigma_d: float
    omega_at_entry: float
    halted_steps: list[int]
    eval_mean_r: float = math.nan
    eval_mean_sigma: float = math.nan
    eval_episodes: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class RunLog:
    mode: str
    seed: int
    contexts: list[ContextLog]
    total_queries: int
    cumulative_reward: float  # sum of final-episode rewards over contexts
    eval_cumulative_reward: float  # sum of per-context mean evaluation rewards
    omega_trace: list[float]
    trained_context_ids: list[str]
    diverged: bool = False
    traces: dict = field(default_factory=dict)  # (order_index, attempt) -> trace rows


def _arch_for(cfg: RunConfig) -> bnn.Architecture:
    ctx = cfg.contexts[0]
    from .windows import window_dim

    return bnn.Architecture(
        input_dim=window_dim(cfg.k, ctx.state_dim, ctx.action_dim),
        hidden_layers=cfg.hidden_layers,
        output_dim=ctx.action_dim,
        activation=cfg.activation,
    )


def _mean_sigma_on_windows(policy: BnnPolicy, X: np.ndarray, generator: torch.Generator) -> float:
    Z = policy.normalizer.apply(X)
    _, _, sigmas = bnn.predict_batch(policy.posterior, Z, policy.mc_samples, generator)
    return float(sigmas.mean())


def evaluate_policy(
    policy,
    ctx: envs.Context,
    episodes: int,
    k: int,
    rng: np.random.Generator,
) -> list[tuple[float, float]]:
    """Full-horizon rollouts with the detector disabled; returns (r_d, sigma_d)
    per episode."""
    results = []
    for _ in range(episodes):
        ep = run_episode(policy, ctx, k, rng, detector=None)
        results.append((ep.r_d, ep.sigma_d))
    return results


def spearman_rank_corr(xs, ys) -> float:
    """Spearman rank correlation with average-rank tie handling."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("inputs must be 1-D and of equal length")
    if xs.shape[0] < 3:
        raise ValueError("need at least 3 points")
    rx = rankdata(xs, method="average")
    ry = rankdata(ys, method="average")
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0.0:
        return math.nan
    return float(rx @ ry) / denom


class _ActiveLearner:
    """Mutable state shared by the active and naive training loops."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        arch = _arch_for(cfg)
        self.posterior = bnn.init_posterior(arch, derive_seed(cfg.seed, "init"))
        self.normalizer = Normalizer.identity(arch.input_dim)
        self.generator = torch.Generator().manual_seed(derive_seed(cfg.seed, "predict"))
        self.windows_by_context: dict[str, list] = {}
        self.trained_ids: list[str] = []
        self.demo_rng = np.random.default_rng(derive_seed(cfg.seed, "demos"))
        self.reset_rng = np.random.default_rng(derive_seed(cfg.seed, "resets"))
        self.n_retrains = 0

    def policy(self) -> BnnPolicy:
        return BnnPolicy(
            self.posterior, self.normalizer, self.cfg.train_cfg.predict_mc_samples, self.generator
        )

    def request_and_retrain(self, ctx: envs.Context) -> None:
        cfg = self.cfg
        demos = envs.get_demonstrations(ctx, cfg.demos_per_request, self.demo_rng)
        new_windows = [w for tr in demos for w in build_windows(tr, cfg.k)]
        self.windows_by_context.setdefault(ctx.id, []).extend(new_windows)
        if ctx.id not in self.trained_ids:
            self.trained_ids.append(ctx.id)
        all_windows = [w for cid in self.trained_ids for w in self.windows_by_context[cid]]
        X, Y = windows_to_arrays(all_windows)
        from .windows import fit_normalizer

        self.normalizer = fit_normalizer(X)
        start = self.posterior if cfg.warm_start else bnn.init_posterior(
            self.posterior.arch, derive_seed(cfg.seed, "init", self.n_retrains)
        )
        train_cfg = bnn.TrainConfig(
            epochs=cfg.train_cfg.epochs,
            batch_size=cfg.train_cfg.batch_size,
            learning_rate=cfg.train_cfg.learning_rate,
            train_mc_samples=cfg.train_cfg.train_mc_samples,
            predict_mc_samples=cfg.train_cfg.predict_mc_samples,
            seed=derive_seed(cfg.seed, "train", self.n_retrains),
        )
        self.posterior, _ = bnn.train(start, self.normalizer.apply(X), Y, train_cfg)
        self.n_retrains += 1

    def per_context_mean_sigmas(self) -> list[float]:
        g = torch.Generator().manual_seed(derive_seed(self.cfg.seed, "omega", self.n_retrains))
        policy = self.policy()
        means = []
        for cid in self.trained_ids:
            X, _ = windows_to_arrays(self.windows_by_context[cid])
            means.append(_mean_sigma_on_windows(policy, X, g))
        return means


def _post_run_eval(learner: _ActiveLearner, log: RunLog, cfg: RunConfig) -> None:
    if cfg.eval_episodes < 1:
        return
    total = 0.0
    for i, ctx in enumerate(cfg.contexts):
        rng = np.random.default_rng(derive_seed(cfg.seed, "eval", i))
        results = evaluate_policy(learner.policy(), ctx, cfg.eval_episodes, cfg.k, rng)
        rs = [r for r, _ in results]
        ss = [s for _, s in results]
        log.contexts[i].eval_episodes = results
        log.contexts[i].eval_mean_r = float(np.mean(rs))
        log.contexts[i].eval_mean_sigma = float(np.mean(ss))
        total += log.contexts[i].eval_mean_r
    log.eval_cumulative_reward = total


def run_active_lfd(cfg: RunConfig) -> RunLog:
    """Execute the uncertainty-triggered query loop over the context sequence."""
    learner = _ActiveLearner(cfg)
    detector = DetectorState(m=cfg.m, c=cfg.c, t_start=cfg.t_start, omega=0.0)
    log = RunLog(
        mode="active",
        seed=cfg.seed,
        contexts=[],
        total_queries=0,
        cumulative_reward=0.0,
        eval_cumulative_reward=math.nan,
        omega_trace=[0.0],
        trained_context_ids=learner.trained_ids,
    )
    diverged = False
    for i, ctx in enumerate(cfg.contexts):
        entry_omega = detector.omega
        queries_here = 0
        halted_steps: list[int] = []
        final_ep: EpisodeResult | None = None
        while True:
            budget_left = (
                cfg.max_total_queries is None or log.total_queries < cfg.max_total_queries
            )
            use_detector = detector if (budget_left and queries_here < cfg.max_queries_per_context) else None
            attempt = len(halted_steps)
            ep = run_episode(
                learner.policy(), ctx, cfg.k, learner.reset_rng,
                detector=use_detector, collect_trace=True,
            )
            if ep.trace:
                log.traces[(i, attempt)] = ep.trace
            if ep.halted_at is None:
                final_ep = ep
                break
            halted_steps.append(ep.halted_at)
            try:
                learner.request_and_retrain(ctx)
            except bnn.TrainingDiverged:
                diverged = True
                final_ep = ep
                break
            queries_here += 1
            log.total_queries += 1
            detector.update_threshold(learner.per_context_mean_sigmas())
            log.omega_trace.append(detector.omega)
        log.contexts.append(
            ContextLog(
                context_id=ctx.id,
                order_index=i,
                queried=queries_here > 0,
                n_queries=queries_here,
                r_d=final_ep.r_d,
                sigma_d=final_ep.sigma_d,
                omega_at_entry=entry_omega,
                halted_steps=halted_steps,
            )
        )
        log.cumulative_reward += final_ep.r_d
        if diverged:
            log.diverged = True
            return log
    _post_run_eval(learner, log, cfg)
    return log


def run_baseline(cfg: RunConfig, mode: str) -> RunLog:
    """Naive (query every context) and random (never query) baselines."""
    if mode not in ("naive", "random"):
        raise ValueError("mode must be 'naive' or 'random'")
    learner = _ActiveLearner(cfg)
    log = RunLog(
        mode=mode,
        seed=cfg.seed,
        contexts=[],
        total_queries=0,
        cumulative_reward=0.0,
        eval_cumulative_reward=math.nan,
        omega_trace=[0.0],
        trained_context_ids=learner.trained_ids,
    )
    diverged = False
    for i, ctx in enumerate(cfg.contexts):
        queried = False
        if mode == "naive":
            budget_left = (
                cfg.max_total_queries is None or log.total_queries < cfg.max_total_queries
            )
            if budget_left:
                try:
                    learner.request_and_retrain(ctx)
                    queried = True
                    log.total_queries += 1
                except bnn.TrainingDiverged:
                    diverged = True
        ep = run_episode(learner.policy(), ctx, cfg.k, learner.reset_rng, detector=None)
        log.contexts.append(
            ContextLog(
                context_id=ctx.id,
                order_index=i,
                queried=queried,
                n_queries=int(queried),
                r_d=ep.r_d,
                sigma_d=ep.sigma_d,
                omega_at_entry=0.0,
                halted_steps=[],
            )
        )
        log.cumulative_reward += ep.r_d
        if diverged:
            log.diverged = True
            return log
    _post_run_eval(learner, log, cfg)
    return log


def export_runlog(log: RunLog, out_dir, prefix: str, header_lines: list[str] | None = None) -> None:
    """Summary CSV plus one per-step detector trace CSV per halted/observed episode."""
    os.makedirs(out_dir, exist_ok=True)
    summary_path = os.path.join(out_dir, f"{prefix}_summary.csv")
    with open(summary_path, "w", newline="") as f:
        for line in header_lines or []:
            f.write(f"# {line}\n")
        f.write(f"# mode={log.mode} seed={log.seed}\n")
        writer = csv.writer(f)
        writer.writerow(
            ["order", "context_id", "r_d", "sigma_d", "queried", "n_queries", "omega_at_entry"]
        )
        for c in log.contexts:
            writer.writerow(
                [
                    c.order_index,
                    c.context_id,
                    f"{c.r_d:.10g}",
                    f"{c.sigma_d:.10g}",
                    int(c.queried),
                    c.n_queries,
                    f"{c.omega_at_entry:.10g}",
                ]
            )
    for (order_index, attempt), rows in sorted(log.traces.items()):
        trace_path = os.path.join(out_dir, f"{prefix}_trace_ctx{order_index}_ep{attempt}.csv")
        with open(trace_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["t", "sigma_t", "smoothed", "threshold", "fired"])
            for t, sigma, smoothed, threshold, fired in rows:
                writer.writerow(
                    [t, f"{sigma:.10g}", f"{smoothed:.10g}", f"{threshold:.10g}", int(fired)]
                )
