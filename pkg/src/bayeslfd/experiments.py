"""Experiment harness: deterministic CSV-producing studies.

Each experiment is a pure function of its resolved configuration; rerunning
with the same config and seeds reproduces the output byte for byte.  The
returned mapping is {filename: (fieldnames, rows)} so the CLI (or a test)
decides where files land.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from . import bnn, envs, gp
from .active import (
    BnnPolicy,
    GpPolicy,
    RunConfig,
    evaluate_policy,
    run_active_lfd,
    run_baseline,
    spearman_rank_corr,
)
from .seeding import derive_seed
from .windows import build_windows, fit_normalizer, window_dim, windows_to_arrays

_G = "%.10g"

# Steps masked at the start of every episode before the detector may fire:
# long enough for the policy to funnel a fresh reset into the demonstrated
# region, plus the smoothing buffer must flush its warm-up contents.
WARMUP_MASK = 30


def _fmt(x) -> str:
    if isinstance(x, float):
        return _G % x
    return str(x)


def _single_thread() -> None:
    # fixed thread count keeps float reductions identical across reruns
    torch.set_num_threads(1)


def _contexts(cfg: dict) -> list[envs.Context]:
    if cfg["environment"] == "double_integrator":
        return [
            envs.make_integrator_context(m, horizon=cfg["horizon"], dt=cfg["dt"])
            for m in cfg["masses"]
        ]
    if cfg["environment"] == "pendulum":
        return [
            envs.make_pendulum_context(m, horizon=cfg["horizon"], dt=cfg["dt"])
            for m in cfg["masses"]
        ]
    raise ValueError(f"unknown environment {cfg['environment']!r}")


def _train_cfg(cfg: dict, seed: int) -> bnn.TrainConfig:
    return bnn.TrainConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"],
        train_mc_samples=cfg["train_mc_samples"],
        predict_mc_samples=cfg["predict_mc_samples"],
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Input-dimension scaling: Bayesian network vs GP


BBB_VS_GP_DEFAULTS = {
    "environment": "double_integrator",
    "masses": [0.5, 1.0, 2.0, 4.0],
    "horizon": 200,
    "dt": 0.05,
    "k_values": [1, 2, 5],
    "demo_episodes": 3,
    "holdout_episodes": 1,
    "eval_episodes": 3,
    "epochs": 200,
    "batch_size": 256,
    "learning_rate": 2e-3,
    "train_mc_samples": 2,
    "predict_mc_samples": 50,
    "gp_fit_steps": 40,
    "gp_max_points": 3000,
    "seeds": [0, 1, 2, 3, 4],
}


def run_bbb_vs_gp(cfg: dict) -> dict:
    """Train both learners on identical pooled demos for each window size and
    report held-out imitation RMSE plus mean episodic reward."""
    _single_thread()
    contexts = _contexts(cfg)
    fields = [
        "seed", "k", "input_dim", "learner", "rmse", "mean_reward", "capped",
    ]
    rows = []
    for seed in cfg["seeds"]:
        train_demos, holdout_demos = [], []
        for i, ctx in enumerate(contexts):
            rng = np.random.default_rng(derive_seed(seed, "demos", i))
            eps = envs.get_demonstrations(
                ctx, cfg["demo_episodes"] + cfg["holdout_episodes"], rng
            )
            train_demos.extend(eps[: cfg["demo_episodes"]])
            holdout_demos.extend(eps[cfg["demo_episodes"] :])
        for k in cfg["k_values"]:
            train_windows = [w for tr in train_demos for w in build_windows(tr, k)]
            holdout_windows = [w for tr in holdout_demos for w in build_windows(tr, k)]
            X, Y = windows_to_arrays(train_windows)
            Xh, Yh = windows_to_arrays(holdout_windows)
            norm = fit_normalizer(X)
            Xn, Xhn = norm.apply(X), norm.apply(Xh)
            dim = window_dim(k, contexts[0].state_dim, contexts[0].action_dim)

            arch = bnn.Architecture(input_dim=dim, output_dim=contexts[0].action_dim)
            post = bnn.init_posterior(arch, derive_seed(seed, "init", k))
            post, _ = bnn.train(post, Xn, Y, _train_cfg(cfg, derive_seed(seed, "train", k)))
            g = torch.Generator().manual_seed(derive_seed(seed, "rmse", k))
            mean_h, _, _ = bnn.predict_batch(post, Xhn, cfg["predict_mc_samples"], g)
            bbb_rmse = float(np.sqrt(np.mean((mean_h - Yh) ** 2)))
            bbb_policy = BnnPolicy(
                post, norm, cfg["predict_mc_samples"],
                torch.Generator().manual_seed(derive_seed(seed, "eval-gen", k)),
            )
            bbb_reward = _mean_family_reward(bbb_policy, contexts, cfg, seed, k)
            rows.append(
                {
                    "seed": seed, "k": k, "input_dim": dim, "learner": "bbb",
                    "rmse": _fmt(bbb_rmse), "mean_reward": _fmt(bbb_reward), "capped": 0,
                }
            )

            try:
                model = gp.fit(
                    Xn, Y, gp.default_kernel_config(dim),
                    steps=cfg["gp_fit_steps"], max_points=cfg["gp_max_points"],
                )
            except gp.GpDatasetTooLarge:
                rows.append(
                    {
                        "seed": seed, "k": k, "input_dim": dim, "learner": "gp",
                        "rmse": "nan", "mean_reward": "nan", "capped": 1,
                    }
                )
                continue
            mean_g, _, _ = gp.predict_gp_batch(model, Xhn)
            gp_rmse = float(np.sqrt(np.mean((mean_g - Yh) ** 2)))
            gp_policy = GpPolicy(model, norm)
            gp_reward = _mean_family_reward(gp_policy, contexts, cfg, seed, k)
            rows.append(
                {
                    "seed": seed, "k": k, "input_dim": dim, "learner": "gp",
                    "rmse": _fmt(gp_rmse), "mean_reward": _fmt(gp_reward), "capped": 0,
                }
            )
    return {"bbb_vs_gp.csv": (fields, rows)}


def _mean_family_reward(policy, contexts, cfg, seed, k) -> float:
    rewards = []
    for i, ctx in enumerate(contexts):
        rng = np.random.default_rng(derive_seed(seed, "eval", k, i))
        results = evaluate_policy(policy, ctx, cfg["eval_episodes"], k, rng)
        rewards.extend(r for r, _ in results)
    return float(np.mean(rewards))


# ---------------------------------------------------------------------------
# Accumulated uncertainty as a predictor of episodic reward


UNCERTAINTY_REWARD_DEFAULTS = {
    "environment": "double_integrator",
    "masses": list(envs.INTEGRATOR_MASSES),
    "horizon": 200,
    "dt": 0.05,
    "k": 2,
    "train_context_index": 5,
    "demo_episodes": 12,
    "runs_per_context": 5,
    "epochs": 200,
    "batch_size": 256,
    "learning_rate": 2e-3,
    "train_mc_samples": 2,
    "predict_mc_samples": 50,
    "seeds": [0],
}


def run_uncertainty_reward(cfg: dict) -> dict:
    """Train on one designated context, then scatter (sigma_d, r_d) across the
    whole family over several independent runs."""
    _single_thread()
    contexts = _contexts(cfg)
    k = cfg["k"]
    scatter_fields = ["seed", "context_index", "context_id", "mass", "run", "r_d", "sigma_d", "trained"]
    summary_fields = ["seed", "n_points", "spearman_rho", "trained_mean_sigma_d", "min_mean_sigma_d", "trained_is_min"]
    scatter_rows, summary_rows = [], []
    for seed in cfg["seeds"]:
        ti = cfg["train_context_index"]
        train_ctx = contexts[ti]
        rng = np.random.default_rng(derive_seed(seed, "demos"))
        demos = envs.get_demonstrations(train_ctx, cfg["demo_episodes"], rng)
        windows = [w for tr in demos for w in build_windows(tr, k)]
        X, Y = windows_to_arrays(windows)
        norm = fit_normalizer(X)
        arch = bnn.Architecture(
            input_dim=window_dim(k, train_ctx.state_dim, train_ctx.action_dim),
            output_dim=train_ctx.action_dim,
        )
        post = bnn.init_posterior(arch, derive_seed(seed, "init"))
        post, _ = bnn.train(post, norm.apply(X), Y, _train_cfg(cfg, derive_seed(seed, "train")))
        policy = BnnPolicy(
            post, norm, cfg["predict_mc_samples"],
            torch.Generator().manual_seed(derive_seed(seed, "predict")),
        )
        sigmas_all, rewards_all = [], []
        mean_sigma_by_context = []
        for i, ctx in enumerate(contexts):
            rng_i = np.random.default_rng(derive_seed(seed, "eval", i))
            results = evaluate_policy(policy, ctx, cfg["runs_per_context"], k, rng_i)
            for run, (r_d, sigma_d) in enumerate(results):
                scatter_rows.append(
                    {
                        "seed": seed, "context_index": i, "context_id": ctx.id,
                        "mass": _fmt(ctx.mass), "run": run,
                        "r_d": _fmt(r_d), "sigma_d": _fmt(sigma_d),
                        "trained": int(i == ti),
                    }
                )
                sigmas_all.append(sigma_d)
                rewards_all.append(r_d)
            mean_sigma_by_context.append(float(np.mean([s for _, s in results])))
        rho = spearman_rank_corr(sigmas_all, rewards_all)
        min_sigma = min(mean_sigma_by_context)
        summary_rows.append(
            {
                "seed": seed,
                "n_points": len(sigmas_all),
                "spearman_rho": _fmt(rho),
                "trained_mean_sigma_d": _fmt(mean_sigma_by_context[ti]),
                "min_mean_sigma_d": _fmt(min_sigma),
                "trained_is_min": int(mean_sigma_by_context[ti] == min_sigma),
            }
        )
    return {
        "uncertainty_reward.csv": (scatter_fields, scatter_rows),
        "uncertainty_reward_summary.csv": (summary_fields, summary_rows),
    }


# ---------------------------------------------------------------------------
# Query placement sanity check and budgeted comparison


SANITY_ORDER_DEFAULTS = {
    "environment": "double_integrator",
    "masses": [1.0, 1.1, 6.0],
    "horizon": 120,
    "dt": 0.05,
    "k": 2,
    "c": 1.0,
    "m": 10,
    "t_start": -1,  # -1 means WARMUP_MASK + m
    "demos_per_request": 12,
    "query_budget": 2,
    "eval_episodes": 10,
    "epochs": 200,
    "batch_size": 256,
    "learning_rate": 2e-3,
    "train_mc_samples": 2,
    "predict_mc_samples": 50,
    "seeds": [0, 1, 2, 3, 4],
}


def _run_config(cfg: dict, contexts, seed: int, budget: int | None, eval_episodes: int) -> RunConfig:
    return RunConfig(
        contexts=contexts,
        k=cfg["k"],
        c=cfg["c"],
        m=cfg["m"],
        t_start=WARMUP_MASK + cfg["m"] if cfg.get("t_start", -1) < 0 else cfg["t_start"],
        demos_per_request=cfg["demos_per_request"],
        train_cfg=_train_cfg(cfg, seed),
        eval_episodes=eval_episodes,
        seed=seed,
        max_total_queries=budget,
    )


def run_sanity_order(cfg: dict) -> dict:
    """Fixed ordering (similar, similar, different): where do the first two
    queries land, and who wins at the two-request budget?"""
    _single_thread()
    contexts = _contexts(cfg)
    detail_fields = ["seed", "learner", "order", "context_id", "queried", "r_d", "eval_mean_r"]
    summary_fields = [
        "seed", "active_query_indices", "active_eval_cum", "naive_eval_cum",
        "active_online_cum", "naive_online_cum",
    ]
    detail_rows, summary_rows = [], []
    for seed in cfg["seeds"]:
        logs = {
            "active": run_active_lfd(
                _run_config(cfg, contexts, seed, cfg["query_budget"], cfg["eval_episodes"])
            ),
            "naive": run_baseline(
                _run_config(cfg, contexts, seed, cfg["query_budget"], cfg["eval_episodes"]),
                "naive",
            ),
        }
        for learner, log in logs.items():
            for c in log.contexts:
                detail_rows.append(
                    {
                        "seed": seed, "learner": learner, "order": c.order_index,
                        "context_id": c.context_id, "queried": int(c.queried),
                        "r_d": _fmt(c.r_d), "eval_mean_r": _fmt(c.eval_mean_r),
                    }
                )
        active = logs["active"]
        queried_idx = [c.order_index for c in active.contexts if c.queried]
        summary_rows.append(
            {
                "seed": seed,
                "active_query_indices": ";".join(str(i) for i in queried_idx),
                "active_eval_cum": _fmt(active.eval_cumulative_reward),
                "naive_eval_cum": _fmt(logs["naive"].eval_cumulative_reward),
                "active_online_cum": _fmt(active.cumulative_reward),
                "naive_online_cum": _fmt(logs["naive"].cumulative_reward),
            }
        )
    return {
        "sanity_order.csv": (detail_fields, detail_rows),
        "sanity_order_summary.csv": (summary_fields, summary_rows),
    }


# ---------------------------------------------------------------------------
# Data efficiency across randomized context orderings


DATA_EFFICIENCY_DEFAULTS = {
    "environment": "double_integrator",
    "masses": list(envs.INTEGRATOR_MASSES),
    "horizon": 120,
    "dt": 0.05,
    "k": 2,
    "c": 1.0,
    "m": 10,
    "t_start": -1,
    "demos_per_request": 12,
    "eval_episodes": 3,
    "epochs": 200,
    "batch_size": 256,
    "learning_rate": 2e-3,
    "train_mc_samples": 2,
    "predict_mc_samples": 50,
    "seeds": [0, 1, 2, 3, 4],
}


def _shuffled_contexts(cfg: dict, seed: int) -> list[envs.Context]:
    contexts = _contexts(cfg)
    order = np.random.default_rng(derive_seed(seed, "order")).permutation(len(contexts))
    return [contexts[i] for i in order]


def run_data_efficiency(cfg: dict) -> dict:
    """Active vs naive vs random over shuffled context orderings."""
    _single_thread()
    fields = ["seed", "learner", "queries", "online_cum_reward", "eval_cum_reward"]
    rows = []
    for seed in cfg["seeds"]:
        ordered = _shuffled_contexts(cfg, seed)
        runs = {
            "active": run_active_lfd(_run_config(cfg, ordered, seed, None, cfg["eval_episodes"])),
            "naive": run_baseline(
                _run_config(cfg, ordered, seed, None, cfg["eval_episodes"]), "naive"
            ),
            "random": run_baseline(
                _run_config(cfg, ordered, seed, None, cfg["eval_episodes"]), "random"
            ),
        }
        for learner, log in runs.items():
            rows.append(
                {
                    "seed": seed,
                    "learner": learner,
                    "queries": log.total_queries,
                    "online_cum_reward": _fmt(log.cumulative_reward),
                    "eval_cum_reward": _fmt(log.eval_cumulative_reward),
                }
            )
    return {"data_efficiency.csv": (fields, rows)}


# ---------------------------------------------------------------------------
# Conservativeness sweep over the threshold scale and smoothing window


CM_SWEEP_DEFAULTS = {
    "environment": "double_integrator",
    "masses": list(envs.INTEGRATOR_MASSES),
    "horizon": 120,
    "dt": 0.05,
    "k": 2,
    "c_values": [0.5, 1.0, 2.0],
    "m_values": [1, 10, 50],
    "demos_per_request": 12,
    "eval_episodes": 3,
    "epochs": 200,
    "batch_size": 256,
    "learning_rate": 2e-3,
    "train_mc_samples": 2,
    "predict_mc_samples": 50,
    "seeds": [0, 1, 2, 3, 4],
}


def run_cm_sweep(cfg: dict) -> dict:
    """Grid over (c, m): how conservative does the learner get?"""
    _single_thread()
    fields = ["seed", "c", "m", "queries", "online_cum_reward", "eval_cum_reward"]
    rows = []
    for seed in cfg["seeds"]:
        for c in cfg["c_values"]:
            for m in cfg["m_values"]:
                cell = dict(cfg)
                cell["c"], cell["m"], cell["t_start"] = float(c), int(m), -1
                ordered = _shuffled_contexts(cfg, seed)
                log = run_active_lfd(
                    _run_config(cell, ordered, seed, None, cfg["eval_episodes"])
                )
                rows.append(
                    {
                        "seed": seed,
                        "c": _fmt(float(c)),
                        "m": m,
                        "queries": log.total_queries,
                        "online_cum_reward": _fmt(log.cumulative_reward),
                        "eval_cum_reward": _fmt(log.eval_cumulative_reward),
                    }
                )
    return {"cm_sweep.csv": (fields, rows)}


EXPERIMENTS = {
    "bbb_vs_gp": (run_bbb_vs_gp, BBB_VS_GP_DEFAULTS),
    "uncertainty_reward": (run_uncertainty_reward, UNCERTAINTY_REWARD_DEFAULTS),
    "sanity_order": (run_sanity_order, SANITY_ORDER_DEFAULTS),
    "data_efficiency": (run_data_efficiency, DATA_EFFICIENCY_DEFAULTS),
    "cm_sweep": (run_cm_sweep, CM_SWEEP_DEFAULTS),
}
