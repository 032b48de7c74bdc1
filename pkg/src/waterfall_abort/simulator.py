"""Synthetic waterfall logs with planted structure and counterfactual ground truth.

Each publisher owns a fixed waterfall of 3-5 tags. Structural parameters
(waterfall length, per-tag win probability and payoff distribution) depend
only on ``(seed, publisher)``; the request stream depends on
``(seed, day, publisher)`` so day 2 is a fresh draw from the same market.

Config keys (TOML or JSON, all optional)::

    seed, num_publishers, tags_per_publisher = [min, max],
    requests_per_publisher, win_prob_range = [lo, hi]  (log-uniform per tag),
    win_prob_overrides = {tag_id = p}, payoff_mu_range = [lo, hi],
    payoff_sigma, value_sigma, bid_model = "correlated" | "independent",
    bid_rate, bid_min, bid_sigma (request level), bid_spread (within request),
    strategic_buyers, strategic_withdraw_prob,
    context = [{name, cardinality, weights?}],
    interactions = [{tag, feature, value, multiplier}]

Tag ids are ``p<publisher>_t<tier>``; ``tag = "*"`` in an interaction matches
every tag. Context values are ``v0 .. v<cardinality-1>``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .domain import (
    AuctionLog,
    ContextColumn,
    RequestRecord,
    UnsupportedLogError,
    ValidationError,
)


@dataclass(frozen=True)
class ContextFeatureSpec:
    name: str
    cardinality: int
    weights: Optional[tuple] = None


@dataclass(frozen=True)
class Interaction:
    """Multiplies the win probability of ``tag`` when ``feature == value``."""

    tag: str
    feature: str
    value: str
    multiplier: float


def _default_context():
    return (
        ContextFeatureSpec("segment", 6, (0.15, 0.2, 0.2, 0.15, 0.15, 0.15)),
        ContextFeatureSpec("device", 3, (0.5, 0.35, 0.15)),
        ContextFeatureSpec("geo", 5),
    )


def _default_interactions():
    # v5 is a segment with almost no demand; device v2 is a weak tier
    return (
        Interaction("*", "segment", "v0", 2.5),
        Interaction("*", "segment", "v4", 0.25),
        Interaction("*", "segment", "v5", 0.002),
        Interaction("*", "device", "v2", 0.2),
        Interaction("*", "geo", "v0", 1.6),
    )


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    num_publishers: int = 50
    tags_per_publisher: tuple = (3, 5)
    requests_per_publisher: int = 20_000
    win_prob_range: tuple = (0.0055, 0.3)
    win_prob_overrides: dict = field(default_factory=dict)
    payoff_mu_range: tuple = (-7.5, -6.5)
    payoff_sigma: float = 0.6
    value_sigma: float = 0.4
    bid_model: str = "correlated"
    bid_rate: float = 1.5
    bid_min: int = 0
    bid_sigma: float = 0.5
    bid_spread: float = 0.3
    strategic_buyers: bool = False
    strategic_withdraw_prob: float = 0.5
    context: tuple = field(default_factory=_default_context)
    interactions: tuple = field(default_factory=_default_interactions)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        lo, hi = self.tags_per_publisher
        if self.num_publishers < 0 or self.requests_per_publisher < 0:
            raise ValidationError("publisher and request counts must be non-negative")
        if not (1 <= lo <= hi):
            raise ValidationError(f"tags_per_publisher must be a non-empty range, got {self.tags_per_publisher}")
        plo, phi = self.win_prob_range
        if not (0 < plo <= phi <= 1):
            raise ValidationError(f"win_prob_range must satisfy 0 < lo <= hi <= 1, got {self.win_prob_range}")
        for tag, p in self.win_prob_overrides.items():
            if not (0 <= p <= 1):
                raise ValidationError(f"win probability for {tag} outside [0, 1]")
        mlo, mhi = self.payoff_mu_range
        if not mlo <= mhi:
            raise ValidationError("payoff_mu_range must be non-empty")
        if min(self.payoff_sigma, self.value_sigma, self.bid_sigma, self.bid_spread) < 0:
            raise ValidationError("sigmas must be non-negative")
        if self.bid_model not in ("correlated", "independent"):
            raise ValidationError(f"unknown bid_model {self.bid_model!r}")
        if self.bid_rate < 0 or self.bid_min < 0:
            raise ValidationError("bid_rate and bid_min must be non-negative")
        if not 0 <= self.strategic_withdraw_prob <= 1:
            raise ValidationError("strategic_withdraw_prob must be in [0, 1]")
        names = set()
        for spec in self.context:
            if spec.name in names:
                raise ValidationError(f"duplicate context feature {spec.name!r}")
            names.add(spec.name)
            if spec.cardinality < 1:
                raise ValidationError(f"context feature {spec.name!r} needs cardinality >= 1")
            if spec.weights is not None and (
                len(spec.weights) != spec.cardinality or min(spec.weights) < 0 or sum(spec.weights) <= 0
            ):
                raise ValidationError(f"bad weights for context feature {spec.name!r}")
        for it in self.interactions:
            if it.feature not in names:
                raise ValidationError(f"interaction on unknown feature {it.feature!r}")
            if it.multiplier < 0:
                raise ValidationError("interaction multipliers must be non-negative")

    # -- (de)serialization -------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tags_per_publisher"] = list(self.tags_per_publisher)
        d["win_prob_range"] = list(self.win_prob_range)
        d["payoff_mu_range"] = list(self.payoff_mu_range)
        d["context"] = [
            {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(c).items() if v is not None}
            for c in self.context
        ]
        d["interactions"] = [asdict(i) for i in self.interactions]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kw = dict(data)
        for key in ("tags_per_publisher", "win_prob_range", "payoff_mu_range"):
            if key in kw:
                kw[key] = tuple(kw[key])
        if "context" in kw:
            kw["context"] = tuple(
                ContextFeatureSpec(
                    name=c["name"],
                    cardinality=int(c["cardinality"]),
                    weights=tuple(c["weights"]) if c.get("weights") is not None else None,
                )
                for c in kw["context"]
            )
        if "interactions" in kw:
            kw["interactions"] = tuple(
                Interaction(i["tag"], i["feature"], str(i["value"]), float(i["multiplier"]))
                for i in kw["interactions"]
            )
        if "win_prob_overrides" in kw:
            kw["win_prob_overrides"] = {str(k): float(v) for k, v in kw["win_prob_overrides"].items()}
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ValidationError(str(exc)) from exc


def load_config(path) -> SimConfig:
    """Read a SimConfig from a ``.toml`` or ``.json`` file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() == ".toml":
            data = tomllib.loads(text)
        else:
            data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: invalid TOML: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: config must be a table/object")
    try:
        return SimConfig.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def publisher_id(index: int) -> str:
    return f"p{index:03d}"


def tag_id(publisher: int, tier: int) -> str:
    return f"{publisher_id(publisher)}_t{tier}"


@dataclass(frozen=True)
class PublisherStructure:
    publisher: str
    tags: tuple
    win_prob: np.ndarray
    payoff_mu: np.ndarray


def publisher_structure(config: SimConfig, index: int) -> PublisherStructure:
    """Day-independent waterfall of one publisher.

    Win probability rises and payoff falls down the waterfall, as in a
    waterfall ordered from premium to remnant demand.
    """
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0, index)))
    lo, hi = config.tags_per_publisher
    n = int(rng.integers(lo, hi + 1))
    plo, phi = config.win_prob_range
    p = np.sort(np.exp(rng.uniform(np.log(plo), np.log(phi), size=n)))
    mu = np.sort(rng.uniform(*config.payoff_mu_range, size=n))[::-1].copy()
    tags = tuple(tag_id(index, k + 1) for k in range(n))
    for k, t in enumerate(tags):
        if t in config.win_prob_overrides:
            p[k] = config.win_prob_overrides[t]
    return PublisherStructure(publisher_id(index), tags, p, mu)


def _generate_publisher(config: SimConfig, day: int, index: int):
    st = publisher_structure(config, index)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(day, index)))
    n = config.requests_per_publisher
    N = len(st.tags)

    ctx_codes = {}
    for spec in config.context:
        w = np.ones(spec.cardinality) if spec.weights is None else np.asarray(spec.weights, float)
        ctx_codes[spec.name] = rng.choice(spec.cardinality, size=n, p=w / w.sum()).astype(np.int32)

    p = np.broadcast_to(st.win_prob, (n, N)).copy()
    for it in config.interactions:
        cols = [k for k, t in enumerate(st.tags) if it.tag in ("*", t)]
        if not cols:
            continue
        code = _value_code(it.value)
        hit = ctx_codes[it.feature] == code
        p[np.ix_(hit, cols)] *= it.multiplier
    np.clip(p, 0.0, 1.0, out=p)

    would_win = rng.random((n, N)) < p
    if config.strategic_buyers and N > 2:
        # a buyer active in tier k+2 holds back in tier k
        withdraw = would_win[:, 2:] & (rng.random((n, N - 2)) < config.strategic_withdraw_prob)
        would_win[:, :-2] &= ~withdraw

    value = rng.normal(0.0, config.value_sigma, size=n)
    payoff_draw = np.exp(
        st.payoff_mu[None, :] + value[:, None] + rng.normal(0.0, config.payoff_sigma, size=(n, N))
    )

    any_win = would_win.any(axis=1)
    first = np.where(any_win, would_win.argmax(axis=1), N - 1)
    num_played = first + 1
    payoff = np.where(any_win, payoff_draw[np.arange(n), first], 0.0)

    # bids received on played auctions; a winning auction always has one
    counts = rng.poisson(config.bid_rate, size=(n, N)) + config.bid_min
    counts = np.where(would_win, np.maximum(counts, 1), counts)
    counts[np.arange(N)[None, :] >= num_played[:, None]] = 0
    total = counts.sum(axis=1)
    bid_req = np.repeat(np.arange(n), total)
    bid_pos = np.repeat(np.tile(np.arange(N), n), counts.ravel())
    level = rng.normal(0.0, config.bid_sigma, size=n)
    if config.bid_model == "correlated":
        centre = st.payoff_mu[bid_pos] + value[bid_req] + level[bid_req] - 0.5
    else:
        centre = float(np.mean(config.payoff_mu_range)) + level[bid_req]
    bids = np.exp(centre + rng.normal(0.0, config.bid_spread, size=len(bid_req)))
    median_bid = _grouped_median(bid_req, bids, total)

    return st, ctx_codes, would_win, payoff_draw, num_played, payoff, median_bid


def _value_code(value: str) -> int:
    if not value.startswith("v") or not value[1:].isdigit():
        raise ValidationError(f"context values are v0..vK, got {value!r}")
    return int(value[1:])


def _grouped_median(group: np.ndarray, values: np.ndarray, counts: np.ndarray) -> np.ndarray:
    order = np.lexsort((values, group))
    v = values[order]
    start = np.cumsum(counts) - counts
    out = np.full(len(counts), np.nan)
    has = counts > 0
    lo = start[has] + (counts[has] - 1) // 2
    hi = start[has] + counts[has] // 2
    out[has] = 0.5 * (v[lo] + v[hi])
    return out


def generate(config: SimConfig, day: int) -> AuctionLog:
    """Oracle log for one day: every waterfall position, with counterfactual flags.

    Rows beyond a request's ``num_played`` were not played; they carry only
    ground truth (``cf_would_win`` and, if it would win, ``cf_payoff``).
    """
    config.validate()
    if day < 1:
        raise ValidationError(f"day must be >= 1, got {day}")
    parts = [_generate_publisher(config, day, i) for i in range(config.num_publishers)]
    parts = [pt for pt in parts if len(pt[4])]

    all_tags = sorted(t for pt in parts for t in pt[0].tags)
    tag_code = {t: i for i, t in enumerate(all_tags)}
    pubs = tuple(pt[0].publisher for pt in parts)

    req_ids, pub_codes, payoffs, played, lengths, medians = [], [], [], [], [], []
    row_tag, position, won, cf, cfp, row_req = [], [], [], [], [], []
    ctx = {spec.name: [] for spec in config.context}
    offset = 0
    for pcode, (st, codes, would_win, payoff_draw, num_played, payoff, median_bid) in enumerate(parts):
        n, N = would_win.shape
        req_ids.append(np.char.add(f"{st.publisher}-d{day}-", np.char.zfill(np.arange(n).astype(str), 7)))
        pub_codes.append(np.full(n, pcode, dtype=np.int32))
        payoffs.append(payoff)
        played.append(num_played)
        lengths.append(np.full(n, N, dtype=np.int64))
        medians.append(median_bid)
        for name in ctx:
            ctx[name].append(codes[name])
        tcodes = np.array([tag_code[t] for t in st.tags], dtype=np.int32)
        row_tag.append(np.tile(tcodes, n))
        pos = np.tile(np.arange(1, N + 1), n)
        position.append(pos)
        first = np.repeat(num_played, N)
        won_rows = (pos == first) & np.repeat(payoff > 0, N)
        won.append(won_rows)
        cf.append(would_win.ravel().astype(np.int8))
        cfp.append(np.where(would_win, payoff_draw, np.nan).ravel())
        row_req.append(np.repeat(np.arange(n), N) + offset)
        offset += n

    def cat(chunks, dtype):
        return np.concatenate(chunks).astype(dtype) if chunks else np.zeros(0, dtype=dtype)

    context = {}
    for spec in config.context:
        tokens = [f"v{k}" for k in range(spec.cardinality)]
        cats = tuple(sorted(tokens))
        remap = np.array([cats.index(t) for t in tokens], dtype=np.int32)
        context[spec.name] = ContextColumn(spec.name, "categorical", codes=remap[cat(ctx[spec.name], np.int32)],
                                           categories=cats)
    log = AuctionLog(
        request_ids=cat(req_ids, object).astype(str) if req_ids else np.zeros(0, dtype=str),
        publishers=pubs,
        publisher_code=cat(pub_codes, np.int32),
        payoff=cat(payoffs, np.float64),
        num_played=cat(played, np.int64),
        waterfall_length=cat(lengths, np.int64),
        median_bid=cat(medians, np.float64),
        context=context,
        tags=tuple(all_tags),
        row_request=cat(row_req, np.int64),
        row_tag=cat(row_tag, np.int32),
        position=cat(position, np.int64),
        won=cat(won, bool),
        cf_would_win=cat(cf, np.int8),
        cf_payoff=cat(cfp, np.float64),
    )
    return log


def counterfactual_winner(request: RequestRecord, abort_mask: Sequence) -> Optional[int]:
    """First kept position whose tag would have won, or None.

    ``abort_mask[k]`` is truthy (or ``AbortFlag.ABORT``) when position k+1 is skipped.
    """
    if not request.has_counterfactual:
        raise UnsupportedLogError(f"request {request.request_id} has no counterfactual flags")
    if len(abort_mask) != request.waterfall_length:
        raise ValidationError("abort_mask must cover every waterfall position")
    for a, flag in zip(request.auctions, abort_mask):
        if not bool(flag) and a.counterfactual_would_win:
            return a.position
    return None


def with_overrides(config: SimConfig, **kw) -> SimConfig:
    return replace(config, **kw)
