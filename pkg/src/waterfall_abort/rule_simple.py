"""Per-tag abort rule.

A tag is kept when the payoff lift of holding it beats the extra cost::

    E[f|win] - E[f|lose]  >=  c * (1/Pr(win) + E[z|win] - E[z|lose])

with ``f`` the request payoff and ``z`` the number of played auctions. The
payoff/length differences can optionally be replaced by median-bid stratified
estimates (``reweighted_diffs``) to damp the correlation between a tag losing
and the request being worth less.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .domain import AbortFlag, AuctionLog, CostModel, Observations, ValidationError

# rows of the sufficient-statistics arrays returned by group_sums
N_WIN, N_LOSE, SF_WIN, SF_LOSE, SZ_WIN, SZ_LOSE = range(6)


class AdjustmentUnavailable(Exception):
    """No median-bid bin holds both a win and a loss."""


def group_sums(group: np.ndarray, n_groups: int, won: np.ndarray, f: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Counts and sums of payoff/length split by win/lose, per group. Shape (6, n_groups).

    All estimators in the package go through this one summation so that
    equal populations give bit-identical statistics.
    """
    gw, gl = group[won], group[~won]
    return np.stack([
        np.bincount(gw, minlength=n_groups).astype(np.float64),
        np.bincount(gl, minlength=n_groups).astype(np.float64),
        np.bincount(gw, weights=f[won], minlength=n_groups),
        np.bincount(gl, weights=f[~won], minlength=n_groups),
        np.bincount(gw, weights=z[won], minlength=n_groups),
        np.bincount(gl, weights=z[~won], minlength=n_groups),
    ])


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den > 0)
    return out


def diffs_from_sums(sums: np.ndarray):
    """Win probability and (win - lose) payoff/length differences.

    Undefined conditional means are taken as 0 (a side with no observations).
    """
    nw, nl = sums[N_WIN], sums[N_LOSE]
    p = _safe_div(nw, nw + nl)
    df = _safe_div(sums[SF_WIN], nw) - _safe_div(sums[SF_LOSE], nl)
    dz = _safe_div(sums[SZ_WIN], nw) - _safe_div(sums[SZ_LOSE], nl)
    return p, df, dz


def reweighted_from_bin_sums(bin_sums: np.ndarray):
    """Stratified differences from sums of shape (6, groups, bins).

    Returns (df, dz, available) per group. Bins lacking a win or a loss are
    dropped and the remaining bin proportions renormalized.
    """
    nw, nl = bin_sums[N_WIN], bin_sums[N_LOSE]
    contrib = (nw > 0) & (nl > 0)
    weight = np.where(contrib, nw + nl, 0.0)
    total = weight.sum(axis=-1)
    available = total > 0
    wn = _safe_div(weight, total[..., None])
    dfb = np.where(contrib, _safe_div(bin_sums[SF_WIN], nw) - _safe_div(bin_sums[SF_LOSE], nl), 0.0)
    dzb = np.where(contrib, _safe_div(bin_sums[SZ_WIN], nw) - _safe_div(bin_sums[SZ_LOSE], nl), 0.0)
    return (wn * dfb).sum(axis=-1), (wn * dzb).sum(axis=-1), available


@dataclass(frozen=True)
class TagStats:
    """Win/lose-conditional estimates for one conditioning population.

    Conditional means are None when their side has no observations.
    """

    n_win: int
    n_lose: int
    p_win: float
    e_f_win: Optional[float]
    e_f_lose: Optional[float]
    e_z_win: Optional[float]
    e_z_lose: Optional[float]
    delta_f_adj: Optional[float] = None
    delta_z_adj: Optional[float] = None

    @property
    def n(self) -> int:
        return self.n_win + self.n_lose

    @classmethod
    def from_sums(cls, sums, adjusted: Optional[tuple] = None) -> "TagStats":
        nw, nl = int(sums[N_WIN]), int(sums[N_LOSE])
        if nw + nl == 0:
            raise ValidationError("statistics need at least one observation")
        return cls(
            n_win=nw,
            n_lose=nl,
            p_win=nw / (nw + nl),
            e_f_win=float(sums[SF_WIN] / nw) if nw else None,
            e_f_lose=float(sums[SF_LOSE] / nl) if nl else None,
            e_z_win=float(sums[SZ_WIN] / nw) if nw else None,
            e_z_lose=float(sums[SZ_LOSE] / nl) if nl else None,
            delta_f_adj=None if adjusted is None else float(adjusted[0]),
            delta_z_adj=None if adjusted is None else float(adjusted[1]),
        )

    def differences(self) -> tuple:
        """(payoff difference, length difference) used by the rule, adjusted when available."""
        fw = self.e_f_win or 0.0
        fl = self.e_f_lose or 0.0
        zw = self.e_z_win or 0.0
        zl = self.e_z_lose or 0.0
        df = self.delta_f_adj if self.delta_f_adj is not None else fw - fl
        dz = self.delta_z_adj if self.delta_z_adj is not None else zw - zl
        return df, dz

    def to_dict(self) -> dict:
        return {
            "n_win": self.n_win,
            "n_lose": self.n_lose,
            "p_win": self.p_win,
            "e_f_win": self.e_f_win,
            "e_f_lose": self.e_f_lose,
            "e_z_win": self.e_z_win,
            "e_z_lose": self.e_z_lose,
            "delta_f_adj": self.delta_f_adj,
            "delta_z_adj": self.delta_z_adj,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TagStats":
        return cls(**{k: d.get(k) for k in (
            "n_win", "n_lose", "p_win", "e_f_win", "e_f_lose", "e_z_win", "e_z_lose",
            "delta_f_adj", "delta_z_adj",
        )})


def estimate_tag_stats(obs: Observations) -> dict:
    """TagStats for every tag present in ``obs``."""
    if len(obs) == 0:
        raise ValidationError("no observations")
    sums = group_sums(obs.tag, len(obs.tags), obs.won, obs.payoff, obs.num_played)
    return {
        tag: TagStats.from_sums(sums[:, k])
        for k, tag in enumerate(obs.tags)
        if sums[N_WIN, k] + sums[N_LOSE, k] > 0
    }


def decide_abort(stats: TagStats, cost: CostModel) -> AbortFlag:
    """Keep iff the payoff lift is at least the cost term; ties keep.

    A tag that never wins is aborted. A tag that always wins has no loss side;
    its loss-side means are taken as 0.
    """
    c = cost.cost_per_auction
    if c < 0:
        raise ValidationError("cost must be non-negative")
    if stats.n_win == 0 or stats.p_win == 0:
        return AbortFlag.ABORT
    df, dz = stats.differences()
    lhs = df
    rhs = c * (1.0 / stats.p_win + dz)
    return AbortFlag.KEEP if lhs >= rhs else AbortFlag.ABORT


@dataclass(frozen=True)
class BidBinPartition:
    """Left-closed bins over median-bid support plus one trailing no-bid bin."""

    boundaries: tuple = ()

    def __post_init__(self):
        b = tuple(float(x) for x in self.boundaries)
        if any(not math.isfinite(x) for x in b) or any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise ValidationError("bin boundaries must be finite and strictly increasing")
        object.__setattr__(self, "boundaries", b)

    @property
    def n_value_bins(self) -> int:
        return len(self.boundaries) + 1

    @property
    def n_bins(self) -> int:
        return self.n_value_bins + 1

    @property
    def no_bid_bin(self) -> int:
        return self.n_value_bins

    def assign(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        out = np.searchsorted(np.asarray(self.boundaries), v, side="right")
        out[np.isnan(v)] = self.no_bid_bin
        return out.astype(np.int64)


def bin_bid_medians(values, n_bins: int) -> BidBinPartition:
    """Equal-frequency partition of the present median bids into at most ``n_bins`` bins."""
    if n_bins < 1:
        raise ValidationError("need at least one bin")
    v = np.array([np.nan if x is None else x for x in values], dtype=np.float64)
    v = np.sort(v[~np.isnan(v)])
    n = len(v)
    cuts = []
    for j in range(1, n_bins):
        k = (j * n) // n_bins
        if 0 < k < n:
            b = 0.5 * (v[k - 1] + v[k])
            if b > v[0] and (not cuts or b > cuts[-1]):
                cuts.append(float(b))
    return BidBinPartition(tuple(cuts))


def reweighted_diffs(obs: Observations, partition: BidBinPartition) -> tuple:
    """Median-bid stratified (payoff difference, length difference) for one population.

    Raises AdjustmentUnavailable when no bin has both a win and a loss.
    """
    bins = partition.assign(obs.median_bid)
    sums = group_sums(bins, partition.n_bins, obs.won, obs.payoff, obs.num_played)
    df, dz, ok = reweighted_from_bin_sums(sums[:, None, :])
    if not ok[0]:
        raise AdjustmentUnavailable("no median-bid bin contains both a win and a loss")
    return float(df[0]), float(dz[0])


@dataclass
class SimplePolicy:
    cost: CostModel
    flags: dict
    stats: dict = field(default_factory=dict)
    default: AbortFlag = AbortFlag.KEEP
    min_support: int = 50
    partition: Optional[BidBinPartition] = None
    meta: dict = field(default_factory=dict)

    kind = "simple"

    def decide(self, context: Mapping, tag_id: str) -> AbortFlag:
        return self.flags.get(tag_id, self.default)

    def abort_mask(self, log: AuctionLog) -> np.ndarray:
        by_code = np.array([self.decide({}, t).abort for t in log.tags], dtype=bool)
        return by_code[log.row_tag] if log.n_rows else np.zeros(0, dtype=bool)

    def to_dict(self) -> dict:
        return {
            "type": "simple",
            "cost_usd_per_auction": self.cost.cost_per_auction,
            "default": "abort" if self.default.abort else "keep",
            "min_support": self.min_support,
            "reweight": None if self.partition is None else {"boundaries": list(self.partition.boundaries)},
            "tags": {
                t: {"abort": self.flags[t].abort, "stats": self.stats[t].to_dict() if t in self.stats else None}
                for t in sorted(self.flags)
            },
            **self.meta,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimplePolicy":
        if d.get("type") != "simple":
            raise ValidationError("$.type: expected 'simple'")
        try:
            tags = d["tags"]
            flags = {t: AbortFlag.ABORT if bool(v["abort"]) else AbortFlag.KEEP for t, v in tags.items()}
            stats = {t: TagStats.from_dict(v["stats"]) for t, v in tags.items() if v.get("stats")}
            rw = d.get("reweight")
            meta = {k: v for k, v in d.items() if k not in (
                "type", "cost_usd_per_auction", "default", "min_support", "reweight", "tags")}
            return cls(
                cost=CostModel(d["cost_usd_per_auction"]),
                flags=flags,
                stats=stats,
                default=AbortFlag.ABORT if d.get("default") == "abort" else AbortFlag.KEEP,
                min_support=int(d.get("min_support", 50)),
                partition=None if rw is None else BidBinPartition(tuple(rw["boundaries"])),
                meta=meta,
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise ValidationError(f"$.tags: malformed simple policy ({exc})") from exc


def train_simple(
    log: AuctionLog,
    cost: CostModel,
    *,
    reweight: bool = False,
    bins: int = 10,
    min_support: int = 50,
) -> SimplePolicy:
    """Per-tag abort policy estimated on the played auctions of ``log``."""
    obs = Observations.from_log(log)
    if len(obs) == 0:
        raise ValidationError("cannot train on an empty log")
    sums = group_sums(obs.tag, len(obs.tags), obs.won, obs.payoff, obs.num_played)
    partition = None
    adjusted = None
    if reweight:
        partition = bin_bid_medians(log.median_bid, bins)
        b = partition.assign(obs.median_bid)
        bin_sums = group_sums(obs.tag * partition.n_bins + b, len(obs.tags) * partition.n_bins,
                              obs.won, obs.payoff, obs.num_played)
        adjusted = reweighted_from_bin_sums(bin_sums.reshape(6, len(obs.tags), partition.n_bins))
    flags, stats = {}, {}
    for k, tag in enumerate(obs.tags):
        n = sums[N_WIN, k] + sums[N_LOSE, k]
        if n == 0:
            continue
        adj = None
        if adjusted is not None and adjusted[2][k]:
            adj = (adjusted[0][k], adjusted[1][k])
        st = TagStats.from_sums(sums[:, k], adj)
        stats[tag] = st
        flags[tag] = AbortFlag.KEEP if n < min_support else decide_abort(st, cost)
    return SimplePolicy(cost=cost, flags=flags, stats=stats, min_support=min_support, partition=partition)
