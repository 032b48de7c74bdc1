"""Counterfactual replay of waterfall logs under an abort policy."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from .domain import (
    AbortFlag,
    AuctionLog,
    CostModel,
    UnsupportedLogError,
    ValidationError,
    net_income,
)


class ReplayMode(str, enum.Enum):
    CONSERVATIVE = "conservative"
    ORACLE = "oracle"


class AbortPolicy(Protocol):
    kind: str

    def abort_mask(self, log: AuctionLog) -> np.ndarray: ...

    def decide(self, context, tag_id: str) -> AbortFlag: ...


class NeverAbort:
    kind = "none"

    def abort_mask(self, log):
        return np.zeros(log.n_rows, dtype=bool)

    def decide(self, context, tag_id):
        return AbortFlag.KEEP


class AlwaysAbort:
    kind = "always"

    def abort_mask(self, log):
        return np.ones(log.n_rows, dtype=bool)

    def decide(self, context, tag_id):
        return AbortFlag.ABORT


@dataclass(frozen=True)
class PublisherRow:
    publisher_id: str
    requests: int
    avg_ni_delta_cpm_usd: float


@dataclass
class NIReport:
    policy: str
    mode: str
    cost: CostModel
    total_payoff: float
    total_played: int
    net_income: float
    baseline_net_income: float
    delta: float
    percent: Optional[float]
    publishers: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "mode": self.mode,
            "cost_usd_per_auction": self.cost.cost_per_auction,
            "cost_cpm_cents": self.cost.cpm_cents,
            "total_payoff_usd": self.total_payoff,
            "total_played_auctions": self.total_played,
            "net_income_usd": self.net_income,
            "baseline_net_income_usd": self.baseline_net_income,
            "delta_usd": self.delta,
            "percent": self.percent,
            "publishers": [
                {"publisher_id": r.publisher_id, "requests": r.requests,
                 "avg_ni_delta_cpm_usd": r.avg_ni_delta_cpm_usd}
                for r in self.publishers
            ],
            **self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NIReport":
        known = {
            "policy", "mode", "cost_usd_per_auction", "cost_cpm_cents", "total_payoff_usd",
            "total_played_auctions", "net_income_usd", "baseline_net_income_usd", "delta_usd",
            "percent", "publishers",
        }
        try:
            return cls(
                policy=d["policy"],
                mode=d["mode"],
                cost=CostModel(d["cost_usd_per_auction"]),
                total_payoff=float(d["total_payoff_usd"]),
                total_played=int(d["total_played_auctions"]),
                net_income=float(d["net_income_usd"]),
                baseline_net_income=float(d["baseline_net_income_usd"]),
                delta=float(d["delta_usd"]),
                percent=None if d["percent"] is None else float(d["percent"]),
                publishers=[PublisherRow(r["publisher_id"], int(r["requests"]), float(r["avg_ni_delta_cpm_usd"]))
                            for r in d["publishers"]],
                meta={k: v for k, v in d.items() if k not in known},
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed report: {exc}") from exc

    def publishers_csv(self) -> str:
        lines = ["publisher_id,requests,avg_ni_delta_cpm_usd"]
        lines += [f"{r.publisher_id},{r.requests},{r.avg_ni_delta_cpm_usd!r}" for r in self.publishers]
        return "\n".join(lines) + "\n"


def metrics(ni_policy: float, ni_baseline: float) -> tuple:
    """(delta, percent change); percent is None when the baseline is zero."""
    if not (math.isfinite(ni_policy) and math.isfinite(ni_baseline)):
        raise ValidationError("net incomes must be finite")
    delta = ni_policy - ni_baseline
    if ni_baseline == 0:
        return delta, None
    return delta, 100.0 * delta / ni_baseline


def replay_requests(log: AuctionLog, abort: np.ndarray, mode: ReplayMode) -> tuple:
    """Per-request (payoff, played auctions) when rows flagged in ``abort`` are skipped."""
    mode = ReplayMode(mode)
    abort = np.asarray(abort, dtype=bool)
    if abort.shape != (log.n_rows,):
        raise ValidationError("abort mask must have one entry per log row")
    keep = ~abort
    req = log.row_request
    n = log.n_requests
    if mode is ReplayMode.CONSERVATIVE:
        played_rows = log.played
        kept = played_rows & keep
        played = np.bincount(req[kept], minlength=n)
        winner_kept = np.bincount(req[log.won & keep], minlength=n) > 0
        payoff = np.where(winner_kept, log.payoff, 0.0)
        return payoff, played
    if not log.has_counterfactual:
        raise UnsupportedLogError("oracle replay needs counterfactual flags on every waterfall position")
    cand = keep & (log.cf_would_win == 1)
    if np.any(cand & np.isnan(log.cf_payoff)):
        raise UnsupportedLogError("oracle replay needs counterfactual payoffs for would-win positions")
    big = np.iinfo(np.int64).max
    pos_c = np.where(cand, log.position, big)
    first = np.minimum.reduceat(pos_c, log.row_start) if log.n_rows else np.zeros(0, np.int64)
    row_first = first[req]
    upto = keep & (log.position <= row_first)
    played = np.bincount(req[upto], minlength=n)
    hit = cand & (log.position == row_first)
    payoff = np.zeros(n)
    payoff[req[hit]] = log.cf_payoff[hit]
    return payoff, played


def replay(
    log: AuctionLog,
    policy,
    cost: CostModel,
    mode: ReplayMode = ReplayMode.ORACLE,
    *,
    abort: Optional[np.ndarray] = None,
) -> NIReport:
    """Net income of ``policy`` on ``log`` against the never-abort baseline."""
    mode = ReplayMode(mode)
    if abort is None:
        abort = policy.abort_mask(log)
    payoff, played = replay_requests(log, abort, mode)
    base_payoff, base_played = replay_requests(log, np.zeros(log.n_rows, dtype=bool), mode)
    ni = net_income(float(payoff.sum()), float(played.sum()), cost)
    ni0 = net_income(float(base_payoff.sum()), float(base_played.sum()), cost)
    delta, percent = metrics(ni, ni0)

    c = cost.cost_per_auction
    per_req = (payoff - c * played) - (base_payoff - c * base_played)
    n_pub = len(log.publishers)
    counts = np.bincount(log.publisher_code, minlength=n_pub)
    sums = np.bincount(log.publisher_code, weights=per_req, minlength=n_pub)
    rows = [
        PublisherRow(pub, int(counts[k]), float(1000.0 * sums[k] / counts[k]))
        for k, pub in enumerate(log.publishers) if counts[k] > 0
    ]
    return NIReport(
        policy=getattr(policy, "kind", "custom"),
        mode=mode.value,
        cost=cost,
        total_payoff=float(payoff.sum()),
        total_played=int(played.sum()),
        net_income=ni,
        baseline_net_income=ni0,
        delta=delta,
        percent=percent,
        publishers=rows,
    )


@dataclass(frozen=True)
class HistogramSpec:
    edges: tuple
    counts: tuple

    def rows(self):
        return [(self.edges[i], self.edges[i + 1], self.counts[i]) for i in range(len(self.counts))]


def per_publisher_histogram(report: NIReport, bins: int) -> HistogramSpec:
    """Equal-width histogram of per-publisher average NI delta (CPM dollars)."""
    if not report.publishers:
        raise ValidationError("report has no publisher rows")
    if bins < 1:
        raise ValidationError("need at least one bin")
    values = np.array([r.avg_ni_delta_cpm_usd for r in report.publishers])
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        return HistogramSpec((lo, hi), (len(values),))
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return HistogramSpec(tuple(float(e) for e in edges), tuple(int(c) for c in counts))
