from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CSV_COLUMNS = (
    "episode",
    "agent",
    "seed",
    "eta",
    "ret",
    "cum_regret",
    "violated",
    "max_deficit",
    "meta_index",
    "meta_episode_n",
    "ucb_steps",
)


@dataclass
class EpisodeRecord:
    episode: int
    agent: str
    seed: int
    eta: float
    ret: float
    regret: float
    violated: bool
    max_deficit: float
    meta_index: int
    meta_episode_n: int
    ucb_steps: int
    max_zeta: float = 0.0


@dataclass
class MetricsLog:
    agent: str
    seed: int
    eta: float
    optimal_value: float
    records: list[EpisodeRecord] = field(default_factory=list)
    meta_lengths: list[int] = field(default_factory=list)  # N_m of each completed meta-episode
    trace: list[dict] = field(default_factory=list)
    meta_rollouts: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def regret(self) -> np.ndarray:
        return np.array([r.regret for r in self.records])

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.regret)

    @property
    def violated(self) -> np.ndarray:
        return np.array([r.violated for r in self.records], dtype=bool)

    @property
    def total_violations(self) -> int:
        return int(self.violated.sum())

    def meta_histogram(self) -> dict[int, int]:
        values, counts = np.unique(np.asarray(self.meta_lengths, dtype=int), return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    def rows(self):
        cum = 0.0
        for r in self.records:
            cum += r.regret
            yield (
                r.episode,
                r.agent,
                r.seed,
                r.eta,
                r.ret,
                cum,
                int(r.violated),
                r.max_deficit,
                r.meta_index,
                r.meta_episode_n,
                r.ucb_steps,
            )
