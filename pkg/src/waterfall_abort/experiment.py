"""Train on day 1, replay on day 2, for a sweep of auction costs."""

from __future__ import annotations

from dataclasses import dataclass, field

from .domain import AuctionLog, CostModel
from .evaluate import NeverAbort, ReplayMode, replay
from .rule_simple import train_simple
from .simulator import SimConfig, generate
from .tree import TreeConfig, grow

SWEEP_COSTS_CPM_CENTS = (0.3663, 0.7326, 1.0989)
NOMINAL_COST_CPM_CENTS = 0.7326


@dataclass
class ExperimentResult:
    seed: int
    train: AuctionLog
    test: AuctionLog
    policies: dict = field(default_factory=dict)  # (kind, cpm_cents) -> policy
    reports: dict = field(default_factory=dict)  # (kind, cpm_cents) -> NIReport

    def report(self, kind: str, cpm_cents: float):
        return self.reports[(kind, cpm_cents)]


def run_experiment(
    config: SimConfig,
    costs=SWEEP_COSTS_CPM_CENTS,
    *,
    mode: ReplayMode = ReplayMode.ORACLE,
    simple_options: dict = None,
    tree_options: dict = None,
    train: AuctionLog = None,
    test: AuctionLog = None,
) -> ExperimentResult:
    """Simple and tree policies per cost, each retrained at that cost."""
    simple_options = simple_options or {}
    tree_options = tree_options or {}
    train = generate(config, 1) if train is None else train
    test = generate(config, 2) if test is None else test
    result = ExperimentResult(seed=config.seed, train=train, test=test)
    for cc in costs:
        cost = CostModel.from_cpm_cents(cc)
        simple = train_simple(train, cost, **simple_options)
        tree = grow(train, TreeConfig(cost=cost, **tree_options))
        for policy in (simple, tree):
            result.policies[(policy.kind, cc)] = policy
            result.reports[(policy.kind, cc)] = replay(test, policy, cost, mode)
        result.reports[("none", cc)] = replay(test, NeverAbort(), cost, mode)
    return result
