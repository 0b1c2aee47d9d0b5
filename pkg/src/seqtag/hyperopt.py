"""Random hyper-parameter search.

A configuration template carries ``${name}`` placeholders; each trial
samples one value per variable from its interval, renders a concrete
configuration, and trains it once per seed. Trials are ranked by the
mean development score over their seeds. A failed trial is recorded
and excluded from the ranking without aborting the experiment, and the
whole search replays bit-for-bit from the master seed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from seqtag.exceptions import ConfigError

_PLACEHOLDER = re.compile(r"\$\{(\w+)\}")


@dataclass
class ListInterval:
    values: list

    def __post_init__(self):
        if not self.values:
            raise ConfigError("list interval needs at least one value")

    def sample(self, rng: np.random.Generator):
        return self.values[int(rng.integers(0, len(self.values)))]


@dataclass
class DiscreteInterval:
    start: int
    end: int  # inclusive

    def __post_init__(self):
        if self.start > self.end:
            raise ConfigError(f"discrete interval [{self.start}..{self.end}] is empty")

    def sample(self, rng: np.random.Generator):
        return int(rng.integers(self.start, self.end + 1))


@dataclass
class ContinuousInterval:
    start: float
    end: float  # exclusive

    def __post_init__(self):
        if not self.start < self.end:
            raise ConfigError(f"continuous interval [{self.start}, {self.end}) is empty")

    def sample(self, rng: np.random.Generator):
        return float(rng.uniform(self.start, self.end))


Interval = ListInterval | DiscreteInterval | ContinuousInterval


@dataclass
class SearchSpace:
    variables: dict[str, Interval]

    def __post_init__(self):
        if not self.variables:
            raise ConfigError("empty search space")


def parse_interval(spec: Mapping) -> Interval:
    kind = spec.get("kind")
    if kind == "list":
        return ListInterval(values=list(spec["values"]))
    if kind == "discrete":
        return DiscreteInterval(start=int(spec["start"]), end=int(spec["end"]))
    if kind == "continuous":
        return ContinuousInterval(start=float(spec["start"]), end=float(spec["end"]))
    raise ConfigError(f"unknown interval kind {kind!r}")


def sample_trial(space: SearchSpace, rng: np.random.Generator) -> dict:
    """One value per variable, in declaration order."""
    return {name: interval.sample(rng) for name, interval in space.variables.items()}


# -- template rendering -------------------------------------------------------------


def find_placeholders(node) -> set[str]:
    found: set[str] = set()
    if isinstance(node, dict):
        for value in node.values():
            found |= find_placeholders(value)
    elif isinstance(node, list):
        for value in node:
            found |= find_placeholders(value)
    elif isinstance(node, str):
        found |= set(_PLACEHOLDER.findall(node))
    return found


def render_template(node, assignment: Mapping):
    """Replace ``${name}`` placeholders with sampled values.

    A string that is exactly one placeholder takes the value's own type;
    placeholders embedded in longer strings are substituted textually.
    """
    if isinstance(node, dict):
        return {key: render_template(value, assignment) for key, value in node.items()}
    if isinstance(node, list):
        return [render_template(value, assignment) for value in node]
    if isinstance(node, str):
        whole = _PLACEHOLDER.fullmatch(node)
        if whole:
            name = whole.group(1)
            if name not in assignment:
                raise ConfigError(f"unbound template variable ${{{name}}}")
            return assignment[name]

        def replace(match):
            name = match.group(1)
            if name not in assignment:
                raise ConfigError(f"unbound template variable ${{{name}}}")
            return str(assignment[name])

        return _PLACEHOLDER.sub(replace, node)
    return node


# -- the search ---------------------------------------------------------------------


def derive_seed(master_seed: int, trial_index: int, seed_index: int) -> int:
    """Deterministic per-run seed, reproducible in isolation."""
    seq = np.random.SeedSequence([int(master_seed), int(trial_index), int(seed_index)])
    return int(seq.generate_state(1)[0])


@dataclass
class TrialRecord:
    index: int
    assignment: dict
    config: dict
    seed_scores: list[float] = field(default_factory=list)
    error: str | None = None

    @property
    def mean(self) -> float | None:
        if self.error is not None or not self.seed_scores:
            return None
        return sum(self.seed_scores) / len(self.seed_scores)


@dataclass
class SearchReport:
    trials: list[TrialRecord]
    winner: int | None  # trial index
    final_scores: list[float] = field(default_factory=list)

    def ranking(self) -> list[TrialRecord]:
        scored = [t for t in self.trials if t.mean is not None]
        return sorted(scored, key=lambda t: (-t.mean, t.index))

    def to_tsv(self) -> str:
        lines = ["trial\tstatus\tmean\tseed_scores\tassignment"]
        for trial in self.trials:
            if trial.error is not None:
                status, mean, scores = "failed", "-", trial.error
            else:
                status = "ok"
                mean = f"{trial.mean:.6f}"
                scores = ",".join(f"{s:.6f}" for s in trial.seed_scores)
            assignment = ",".join(f"{k}={v}" for k, v in trial.assignment.items())
            lines.append(f"{trial.index}\t{status}\t{mean}\t{scores}\t{assignment}")
        if self.winner is not None:
            lines.append(f"winner\t{self.winner}")
            if self.final_scores:
                final_mean = sum(self.final_scores) / len(self.final_scores)
                lines.append(
                    "final\t" + f"{final_mean:.6f}\t"
                    + ",".join(f"{s:.6f}" for s in self.final_scores)
                )
        return "\n".join(lines) + "\n"


def run_search(
    template: dict,
    space: SearchSpace,
    n_trials: int,
    seeds_per_trial: int,
    master_seed: int,
    train_fn: Callable[[dict, int], float],
    final_seeds: int = 0,
) -> SearchReport:
    """Sample, train, and rank trials.

    ``train_fn(config, seed)`` returns the development score of one
    run. Any exception from a run marks the whole trial failed; the
    remaining trials still rank. When ``final_seeds`` > 0, the winning
    configuration is re-evaluated with that many fresh seeds.
    """
    if n_trials < 1:
        raise ConfigError("need at least one trial")
    if seeds_per_trial < 1:
        raise ConfigError("need at least one seed per trial")
    unbound = find_placeholders(template) - set(space.variables.keys())
    if unbound:
        raise ConfigError(f"template variables not in the search space: {sorted(unbound)}")

    sampler = np.random.default_rng(master_seed)
    trials = []
    for index in range(n_trials):
        assignment = sample_trial(space, sampler)
        config = render_template(template, assignment)
        trial = TrialRecord(index=index, assignment=assignment, config=config)
        try:
            for seed_index in range(seeds_per_trial):
                seed = derive_seed(master_seed, index, seed_index)
                trial.seed_scores.append(float(train_fn(config, seed)))
        except Exception as err:  # deliberate: one trial must not sink the rest
            trial.error = f"{type(err).__name__}: {err}"
            trial.seed_scores = []
        trials.append(trial)

    report = SearchReport(trials=trials, winner=None)
    ranking = report.ranking()
    if ranking:
        winner = ranking[0]
        report.winner = winner.index
        for j in range(final_seeds):
            seed = derive_seed(master_seed, winner.index, seeds_per_trial + j)
            report.final_scores.append(float(train_fn(winner.config, seed)))
    return report
