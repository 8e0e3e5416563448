"""Outcome aggregation: rate partition with bootstrap uncertainty."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..sim.episode import Outcome

METRIC_OUTCOMES = {
    "TSR": Outcome.TARGET_SUCCESS,
    "TFR": Outcome.TARGET_FAILURE,
    "NTSR": Outcome.NON_TARGET_SUCCESS,
    "CR": Outcome.COLLISION,
    "TR": Outcome.TIMEOUT,
    "OOB": Outcome.OUT_OF_BOUNDS,
}


@dataclass
class MetricsReport:
    means: dict[str, float]            # percent
    stds: dict[str, float]             # percent, bootstrap
    n_episodes: int                    # valid episodes (Error excluded)
    n_error: int
    outcomes: list[str]
    fingerprint: str = ""
    extra: dict = field(default_factory=dict)

    def partition_sum(self) -> float:
        return sum(self.means.values())

    def row(self) -> dict:
        out = {}
        for name in METRIC_OUTCOMES:
            out[name] = f"{self.means[name]:.1f} +/- {self.stds[name]:.1f}"
        out["episodes"] = self.n_episodes
        return out


def compute_metrics(outcomes: list[Outcome], bootstrap_seed: int = 0,
                    n_bootstrap: int = 1000,
                    fingerprint: str = "") -> MetricsReport:
    valid = [o for o in outcomes if o is not Outcome.ERROR]
    n_error = len(outcomes) - len(valid)
    if not valid:
        raise ValueError("no valid episodes to aggregate")
    arr = np.array([list(METRIC_OUTCOMES.values()).index(o) for o in valid])
    n = len(arr)
    means = {}
    for i, name in enumerate(METRIC_OUTCOMES):
        means[name] = 100.0 * float((arr == i).mean())

    rng = np.random.default_rng(bootstrap_seed)
    samples = rng.integers(0, n, size=(n_bootstrap, n))
    stds = {}
    for i, name in enumerate(METRIC_OUTCOMES):
        rates = 100.0 * (arr[samples] == i).mean(axis=1)
        stds[name] = float(rates.std())
    return MetricsReport(means=means, stds=stds, n_episodes=n,
                         n_error=n_error,
                         outcomes=[o.value for o in valid],
                         fingerprint=fingerprint)


def scenario_fingerprint(slot_choices, seed: int, salt: str) -> str:
    blob = json.dumps({"slots": sorted(slot_choices or []),
                       "seed": seed, "salt": salt}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
