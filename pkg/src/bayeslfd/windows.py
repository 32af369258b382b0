"""Temporal-window feature extraction and input standardization.

A window ending at step t stacks the last k states, the k-1 actions taken
between them and the k-1 rewards observed, in that order, and is labelled
with the expert action at step t.  Windows are built with stride one and
never cross episode boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import Trajectory

STD_FLOOR = 1e-8


class TooShortTrajectory(ValueError):
    """Trajectory has fewer steps than the window size."""


def window_dim(k: int, dim_s: int, dim_a: int) -> int:
    if k < 1:
        raise ValueError("window size must be >= 1")
    return k * dim_s + (k - 1) * dim_a + (k - 1)


@dataclass
class TemporalWindow:
    features: np.ndarray
    target: np.ndarray | None  # expert action; None for windows built online
    source: tuple[str, int, int]  # (context id, episode id, end step)


def build_windows(traj: Trajectory, k: int) -> list[TemporalWindow]:
    """All stride-1 windows of a trajectory; raises if it is shorter than k."""
    T = traj.length
    if T < k:
        raise TooShortTrajectory(f"trajectory length {T} < window size {k}")
    out = []
    for t in range(k - 1, T):
        lo = t - k + 1
        feats = np.concatenate(
            [
                traj.states[lo : t + 1].reshape(-1),
                traj.actions[lo:t].reshape(-1),
                traj.rewards[lo:t],
            ]
        )
        out.append(
            TemporalWindow(
                features=feats,
                target=traj.actions[t].copy(),
                source=(traj.context_id, traj.episode_id, t),
            )
        )
    return out


def bootstrap_window(
    states,
    actions,
    rewards,
    k: int,
    source: tuple[str, int, int] = ("", 0, 0),
) -> TemporalWindow:
    """Window for a partial episode prefix, for use while acting online.

    ``states`` holds the j >= 1 states seen so far and ``actions``/``rewards``
    the j-1 transitions between them.  If j < k the earliest state is
    replicated into the missing state slots and the missing actions and
    rewards are zero-filled; once j >= k this reproduces the features of the
    last full window.  The target is unknown online, so it is None.
    """
    states = [np.asarray(s, dtype=np.float64).reshape(-1) for s in states]
    actions = [np.asarray(a, dtype=np.float64).reshape(-1) for a in actions]
    rewards = [float(r) for r in rewards]
    j = len(states)
    if j < 1:
        raise ValueError("need at least one observed state")
    if len(actions) != j - 1 or len(rewards) != j - 1:
        raise ValueError("expected exactly one action and reward per transition")
    dim_a = actions[0].shape[0] if actions else 1
    if j >= k:
        use_s = states[j - k :]
        use_a = actions[j - k :] if k > 1 else []
        use_r = rewards[j - k :] if k > 1 else []
    else:
        pad = k - j
        use_s = [states[0]] * pad + states
        use_a = [np.zeros(dim_a)] * pad + actions
        use_r = [0.0] * pad + rewards
    parts = list(use_s) + list(use_a) + [np.array(use_r)]
    return TemporalWindow(features=np.concatenate(parts), target=None, source=source)


def windows_to_arrays(windows: list[TemporalWindow]) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([w.features for w in windows])
    Y = np.stack([w.target for w in windows])
    return X, Y


@dataclass
class Normalizer:
    """Per-feature z-scoring with a floored standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def invert(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) * self.std + self.mean

    @classmethod
    def identity(cls, dim: int) -> "Normalizer":
        return cls(mean=np.zeros(dim), std=np.ones(dim))


def fit_normalizer(X_or_windows) -> Normalizer:
    if isinstance(X_or_windows, np.ndarray):
        X = X_or_windows
    else:
        X = np.stack([w.features for w in X_or_windows])
    if X.shape[0] < 2:
        raise ValueError("need at least two rows to estimate a standard deviation")
    mean = X.mean(axis=0)
    std = np.maximum(X.std(axis=0), STD_FLOOR)
    return Normalizer(mean=mean, std=std)


def feature_slot_names(k: int, dim_s: int, dim_a: int) -> list[str]:
    names = []
    for off in range(-k + 1, 1):
        names += [f"s{i + 1}@{off:+d}" for i in range(dim_s)]
    for off in range(-k + 1, 0):
        names += [f"a{i + 1}@{off:+d}" for i in range(dim_a)]
    for off in range(-k + 1, 0):
        names.append(f"r@{off:+d}")
    return names


def export_windows(windows: list[TemporalWindow], path, k: int, dim_s: int, dim_a: int) -> None:
    """Dataset dump with one named column per feature slot."""
    names = feature_slot_names(k, dim_s, dim_a) + [f"target_a{i + 1}" for i in range(dim_a)]
    with open(path, "w", newline="") as f:
        f.write(",".join(names) + "\n")
        for w in windows:
            vals = list(w.features) + list(w.target if w.target is not None else [])
            f.write(",".join(f"{v:.17g}" for v in vals) + "\n")
