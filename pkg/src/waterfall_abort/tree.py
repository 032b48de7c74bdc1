"""Binary abort decision tree grown with the ADENI purity measure.

ADENI of a population S is the absolute gap between the expected net income
of holding and of skipping the auction::

    ADENI(S) = | Pr(win) * ((E[f|win] - E[f|lose]) - c * (E[z|win] - E[z|lose])) - c |

A split is scored by how much purer its children are than the parent,
``sum_j |S_j|/|S| * ADENI(S_j) - ADENI(S)``; larger is better.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .domain import AbortFlag, AuctionLog, ContextColumn, CostModel, Observations, ValidationError
from .rule_simple import (
    N_LOSE,
    N_WIN,
    BidBinPartition,
    TagStats,
    bin_bid_medians,
    decide_abort,
    diffs_from_sums,
    group_sums,
    reweighted_from_bin_sums,
)

GAIN_ORIENTATION = "children_minus_parent"
_TIE_RTOL = 1e-12


class ModelParseError(ValidationError):
    """Invalid model document; ``path`` points at the offending element."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class TreeConfig:
    cost: CostModel
    t_node: int = 1000
    t_adeni: float = 1e-7
    max_depth: int = 12
    max_thresholds: int = 32
    reweight: bool = False
    bins: int = 10

    def __post_init__(self):
        if self.t_node < 2:
            raise ValidationError("t_node must be >= 2")
        if not self.t_adeni >= 0:
            raise ValidationError("t_adeni must be >= 0")
        if self.max_thresholds < 1:
            raise ValidationError("max_thresholds must be >= 1")
        if self.max_depth < 0:
            raise ValidationError("max_depth must be >= 0")
        if self.bins < 1:
            raise ValidationError("bins must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cost"] = self.cost.cost_per_auction
        d["t_adeni"] = None if math.isinf(self.t_adeni) else self.t_adeni
        return d


# -- purity ---------------------------------------------------------------


def _adeni_sums(sums: np.ndarray, c: float, adjusted=None) -> np.ndarray:
    p, df, dz = diffs_from_sums(sums)
    if adjusted is not None:
        df_a, dz_a, ok = adjusted
        df = np.where(ok, df_a, df)
        dz = np.where(ok, dz_a, dz)
    return np.abs(p * (df - c * dz) - c)


def _sums(obs: Observations, idx=None) -> np.ndarray:
    if idx is None:
        idx = slice(None)
    won = obs.won[idx]
    return group_sums(np.zeros(len(won), dtype=np.int64), 1, won, obs.payoff[idx], obs.num_played[idx])[:, 0]


def _bin_sums(obs: Observations, bins: np.ndarray, n_bins: int, idx=None) -> np.ndarray:
    if idx is None:
        idx = slice(None)
    return group_sums(bins[idx], n_bins, obs.won[idx], obs.payoff[idx], obs.num_played[idx])


def adeni(obs: Observations, cost: CostModel, partition: Optional[BidBinPartition] = None) -> float:
    """ADENI of the whole observation set (tags pooled)."""
    if len(obs) == 0:
        raise ValidationError("ADENI needs at least one observation")
    sums = _sums(obs)
    adjusted = None
    if partition is not None:
        bs = _bin_sums(obs, partition.assign(obs.median_bid), partition.n_bins)
        adjusted = reweighted_from_bin_sums(bs)
    return float(_adeni_sums(sums, cost.cost_per_auction, adjusted))


def split_gain(
    obs: Observations,
    children: Sequence[np.ndarray],
    cost: CostModel,
    partition: Optional[BidBinPartition] = None,
) -> float:
    """Size-weighted child ADENI minus parent ADENI; ``children`` are index arrays partitioning ``obs``."""
    n = len(obs)
    parts = [np.asarray(ch, dtype=np.int64) for ch in children]
    flat = np.sort(np.concatenate(parts)) if parts else np.zeros(0, np.int64)
    if n == 0 or not np.array_equal(flat, np.arange(n)) or any(len(p) == 0 for p in parts):
        raise ValidationError("children must be non-empty and partition the parent")
    weighted = sum(len(p) / n * adeni(obs.take(p), cost, partition) for p in parts)
    return weighted - adeni(obs, cost, partition)


# -- splits ---------------------------------------------------------------


@dataclass(frozen=True)
class SplitCandidate:
    """Binary predicate; rows satisfying it go left.

    ``op`` is ``"eq"`` (categorical ``feature == value``) or ``"le"``
    (numeric ``feature <= value``). Missing values follow ``missing``.
    """

    feature: str
    op: str
    value: Union[str, float]
    missing: str
    gain: float
    n_left: int
    n_right: int

    @property
    def weights(self) -> tuple:
        n = self.n_left + self.n_right
        return self.n_left / n, self.n_right / n

    def left_mask(self, column: ContextColumn) -> np.ndarray:
        if self.op == "eq":
            code = column.categories.index(self.value) if self.value in column.categories else -2
            missing = column.codes < 0
            left = column.codes == code
        else:
            missing = np.isnan(column.values)
            with np.errstate(invalid="ignore"):
                left = column.values <= self.value
        return np.where(missing, self.missing == "left", left)

    def children(self, obs: Observations) -> tuple:
        mask = self.left_mask(obs.features[self.feature])
        return np.flatnonzero(mask), np.flatnonzero(~mask)


def _running_total(a: np.ndarray) -> np.ndarray:
    # sequential sum over axis 1, so binned and plain sums round identically
    return np.cumsum(a, axis=1)[:, -1]


class _Scorer:
    """Vectorized candidate scoring over one node's rows."""

    def __init__(self, obs: Observations, config: TreeConfig, bins: Optional[np.ndarray], n_bins: int):
        self.obs = obs
        self.config = config
        self.c = config.cost.cost_per_auction
        self.bins = bins
        self.n_bins = n_bins

    def _stats(self, group, n_groups, idx):
        o = self.obs
        won, f, z = o.won[idx], o.payoff[idx], o.num_played[idx]
        sums = group_sums(group, n_groups, won, f, z)
        if self.bins is None:
            return sums, None
        b = self.bins[idx]
        bs = group_sums(group * self.n_bins + b, n_groups * self.n_bins, won, f, z)
        return sums, bs.reshape(6, n_groups, self.n_bins)

    def _adeni(self, sums, bin_sums):
        adjusted = None if bin_sums is None else reweighted_from_bin_sums(bin_sums)
        return _adeni_sums(sums, self.c, adjusted)

    def node(self, idx):
        sums, bs = self._stats(np.zeros(len(idx), dtype=np.int64), 1, idx)
        return sums[:, 0], (None if bs is None else bs[:, 0, :])

    def _score(self, left, left_b, total, total_b, miss, miss_b, parent_adeni):
        """Gains for candidate left-sides given as columns of ``left``."""
        right = total[:, None] - left
        right_b = None if left_b is None else total_b[:, None, :] - left_b
        n_l = left[N_WIN] + left[N_LOSE]
        n_r = right[N_WIN] + right[N_LOSE]
        miss_left = n_l >= n_r
        if miss is not None:
            left = left + np.where(miss_left, 1.0, 0.0)[None, :] * miss[:, None]
            right = right + np.where(miss_left, 0.0, 1.0)[None, :] * miss[:, None]
            if left_b is not None:
                left_b = left_b + np.where(miss_left, 1.0, 0.0)[None, :, None] * miss_b[:, None, :]
                right_b = right_b + np.where(miss_left, 0.0, 1.0)[None, :, None] * miss_b[:, None, :]
            n_l = left[N_WIN] + left[N_LOSE]
            n_r = right[N_WIN] + right[N_LOSE]
        n = n_l + n_r
        gain = (n_l * self._adeni(left, left_b) + n_r * self._adeni(right, right_b)) / np.maximum(n, 1) - parent_adeni
        valid = (n_l > 0) & (n_r > 0)
        return gain, valid, miss_left, n_l, n_r

    def candidates(self, idx, name: str, column: ContextColumn, parent_adeni: float):
        if column.kind == "categorical":
            codes = column.codes[idx]
            ok = codes >= 0
            k = len(column.categories)
            if k == 0:
                return []
            left, left_b = self._stats(codes[ok], k, idx[ok])
            present = (left[N_WIN] + left[N_LOSE]) > 0
            values = list(column.categories)
            op = "eq"
        else:
            vals = column.values[idx]
            ok = ~np.isnan(vals)
            u = np.unique(vals[ok])
            if len(u) < 2:
                return []
            if len(u) - 1 <= self.config.max_thresholds:
                ks = np.arange(len(u) - 1)
            else:
                q = np.arange(1, self.config.max_thresholds + 1) / (self.config.max_thresholds + 1)
                qv = np.quantile(vals[ok], q)
                ks = np.unique(np.clip(np.searchsorted(u, qv, side="left"), 0, len(u) - 2))
            thr = 0.5 * (u[ks] + u[ks + 1])
            bucket = np.searchsorted(thr, vals[ok], side="left")
            bsums, bbins = self._stats(bucket, len(thr) + 1, idx[ok])
            left = np.cumsum(bsums, axis=1)[:, : len(thr)]
            left_b = None if bbins is None else np.cumsum(bbins, axis=1)[:, : len(thr), :]
            present = np.ones(len(thr), dtype=bool)
            values = [float(t) for t in thr]
            op = "le"
        parts, parts_b = (left, left_b) if op == "eq" else (bsums, bbins)
        total = _running_total(parts)
        total_b = None if parts_b is None else _running_total(parts_b)
        miss = miss_b = None
        if not np.all(ok):
            miss, miss_b = self.node(idx[~ok])
        gain, valid, miss_left, n_l, n_r = self._score(left, left_b, total, total_b, miss, miss_b, parent_adeni)
        valid &= present
        out = []
        for j in np.flatnonzero(valid):
            out.append(SplitCandidate(
                feature=name,
                op=op,
                value=values[j],
                missing="left" if miss_left[j] else "right",
                gain=float(gain[j]),
                n_left=int(n_l[j]),
                n_right=int(n_r[j]),
            ))
        return out


def _pick(cands: list) -> Optional[SplitCandidate]:
    if not cands:
        return None
    top = max(c.gain for c in cands)
    tol = _TIE_RTOL * max(abs(top), 1e-300)
    tied = [c for c in cands if c.gain >= top - tol]
    return min(tied, key=lambda c: (c.feature, c.value))


def best_split(
    obs: Observations,
    config: TreeConfig,
    *,
    idx: Optional[np.ndarray] = None,
    bins: Optional[np.ndarray] = None,
    n_bins: int = 0,
) -> Optional[SplitCandidate]:
    """Highest-gain binary split of the rows ``idx`` (default all), or None.

    Categorical features are split one value against the rest; numeric
    features at midpoints between up to ``max_thresholds`` quantile-spaced
    distinct values. Exact gain ties go to the smallest (feature, value).
    """
    if idx is None:
        idx = np.arange(len(obs))
    if len(idx) < config.t_node:
        raise ValidationError("best_split called on a node smaller than t_node")
    if bins is None and config.reweight:
        partition = bin_bid_medians(obs.median_bid, config.bins)
        bins, n_bins = partition.assign(obs.median_bid), partition.n_bins
    scorer = _Scorer(obs, config, bins, n_bins)
    sums, bs = scorer.node(idx)
    parent = float(scorer._adeni(sums[:, None], None if bs is None else bs[:, None, :])[0])
    cands = []
    for name in sorted(obs.features):
        cands.extend(scorer.candidates(idx, name, obs.features[name], parent))
    best = _pick(cands)
    if best is None or not best.gain >= config.t_adeni:
        return None
    return best


# -- tree structure -------------------------------------------------------


@dataclass
class Leaf:
    flag: AbortFlag
    stats: TagStats
    count: int


@dataclass
class Split:
    feature: str
    op: str
    value: Union[str, float]
    missing: str
    gain: float
    count: int
    left: "Node"
    right: "Node"


Node = Union[Leaf, Split]


def iter_nodes(node: Node, depth: int = 0):
    """Pre-order (node, depth) pairs."""
    yield node, depth
    if isinstance(node, Split):
        yield from iter_nodes(node.left, depth + 1)
        yield from iter_nodes(node.right, depth + 1)


@dataclass
class AbortTree:
    root: Node
    cost: CostModel
    features: dict  # name -> {"kind": ..., "categories": [...]}
    config: Optional[TreeConfig] = None
    partition: Optional[BidBinPartition] = None
    meta: dict = field(default_factory=dict)

    kind = "tree"

    @property
    def depth(self) -> int:
        return max(d for _, d in iter_nodes(self.root))

    @property
    def leaves(self) -> list:
        return [n for n, _ in iter_nodes(self.root) if isinstance(n, Leaf)]

    def decide(self, context: Mapping, tag_id: str) -> AbortFlag:
        return classify(self, (context, tag_id))

    def abort_mask(self, log: AuctionLog) -> np.ndarray:
        return predict_abort(self, log)

    def to_dict(self) -> dict:
        return serialize(self)


def grow(log_or_obs: Union[AuctionLog, Observations], config: TreeConfig) -> AbortTree:
    """Greedy top-down growth; see TreeConfig for the stopping thresholds."""
    if isinstance(log_or_obs, AuctionLog):
        obs = Observations.from_log(log_or_obs)
        bid_source = log_or_obs.median_bid
    else:
        obs = log_or_obs
        bid_source = obs.median_bid
    if len(obs) == 0:
        raise ValidationError("cannot grow a tree on an empty log")
    partition = bins = None
    n_bins = 0
    if config.reweight:
        partition = bin_bid_medians(bid_source, config.bins)
        bins, n_bins = partition.assign(obs.median_bid), partition.n_bins
    scorer = _Scorer(obs, config, bins, n_bins)
    cost = config.cost

    def make_leaf(idx):
        sums, bs = scorer.node(idx)
        adj = None
        if bs is not None:
            df, dz, ok = reweighted_from_bin_sums(bs[:, None, :])
            if ok[0]:
                adj = (df[0], dz[0])
        stats = TagStats.from_sums(sums, adj)
        return Leaf(decide_abort(stats, cost), stats, len(idx))

    def build(idx, depth):
        if len(idx) < config.t_node or depth >= config.max_depth:
            return make_leaf(idx)
        cand = best_split(obs, config, idx=idx, bins=bins, n_bins=n_bins)
        if cand is None:
            return make_leaf(idx)
        mask = cand.left_mask(obs.features[cand.feature].take(idx))
        left, right = idx[mask], idx[~mask]
        return Split(
            feature=cand.feature, op=cand.op, value=cand.value, missing=cand.missing,
            gain=cand.gain, count=len(idx),
            left=build(left, depth + 1), right=build(right, depth + 1),
        )

    root = build(np.arange(len(obs)), 0)
    features = {}
    for name, col in sorted(obs.features.items()):
        features[name] = (
            {"kind": "categorical", "categories": list(col.categories)}
            if col.kind == "categorical" else {"kind": "numeric"}
        )
    return AbortTree(root=root, cost=cost, features=features, config=config, partition=partition)


# -- prediction -----------------------------------------------------------


def _feature_value(context: Mapping, tag_id: str, name: str):
    if name == "tag_id":
        return tag_id
    short = name[4:] if name.startswith("ctx_") else name
    if short in context:
        return context[short]
    return context.get(name)


def _goes_left(node: Split, value, schema: dict) -> bool:
    if node.op == "eq":
        if not isinstance(value, str) or value not in schema.get("categories", ()):
            return node.missing == "left"
        return value == node.value
    if value is None or isinstance(value, str) or isinstance(value, bool):
        return node.missing == "left"
    value = float(value)
    if math.isnan(value):
        return node.missing == "left"
    return value <= node.value


def classify(tree: AbortTree, features) -> AbortFlag:
    """Abort flag for one ``(context, tag_id)`` pair.

    Unseen categories and missing values follow each split's stored
    missing-value direction.
    """
    context, tag_id = features
    node = tree.root
    while isinstance(node, Split):
        schema = tree.features.get(node.feature)
        if schema is None:
            raise ValidationError(f"tree splits on unknown feature {node.feature!r}")
        value = _feature_value(context, tag_id, node.feature)
        node = node.left if _goes_left(node, value, schema) else node.right
    if not isinstance(node, Leaf):
        raise ValidationError("malformed tree")
    return node.flag


def _row_columns(tree: AbortTree, log: AuctionLog) -> dict:
    """Feature columns at row level, categorical codes remapped to the model's vocabulary."""
    req = log.row_request
    out = {}
    for name, schema in tree.features.items():
        if name == "tag_id":
            src_codes, src_cats = log.row_tag, log.tags
        else:
            col = log.context.get(name[4:] if name.startswith("ctx_") else name)
            if col is None:
                src_codes, src_cats = None, ()
            elif col.kind == "categorical":
                src_codes, src_cats = col.codes[req], col.categories
            else:
                src_codes, src_cats = col.values[req], None
        if schema["kind"] == "categorical":
            cats = schema["categories"]
            lookup = {c: i for i, c in enumerate(cats)}
            if src_codes is None or src_cats is None:
                codes = np.full(log.n_rows, -1, dtype=np.int64)
            else:
                remap = np.array([lookup.get(c, -1) for c in src_cats] + [-1], dtype=np.int64)
                codes = remap[np.where(src_codes < 0, len(src_cats), src_codes)]
            out[name] = ContextColumn(name, "categorical", codes=codes, categories=tuple(cats))
        else:
            vals = np.full(log.n_rows, np.nan) if src_codes is None or src_cats is not None else src_codes
            out[name] = ContextColumn(name, "numeric", values=np.asarray(vals, dtype=np.float64))
    return out


def predict_abort(tree: AbortTree, log: AuctionLog) -> np.ndarray:
    """Vectorized abort flags for every row of ``log``."""
    cols = _row_columns(tree, log)
    out = np.zeros(log.n_rows, dtype=bool)

    def route(node, idx):
        if isinstance(node, Leaf):
            out[idx] = node.flag.abort
            return
        cand = SplitCandidate(node.feature, node.op, node.value, node.missing, node.gain, 0, 0)
        mask = cand.left_mask(cols[node.feature].take(idx))
        route(node.left, idx[mask])
        route(node.right, idx[~mask])

    route(tree.root, np.arange(log.n_rows))
    return out


# -- audit ----------------------------------------------------------------


def audit(tree: AbortTree, config: Optional[TreeConfig] = None) -> list:
    """Stopping-rule and labelling violations (empty when the tree is sound)."""
    config = config or tree.config
    problems = []
    for i, (node, depth) in enumerate(iter_nodes(tree.root)):
        if isinstance(node, Split):
            if config is not None and node.count < config.t_node:
                problems.append(f"node {i}: split on {node.count} < t_node={config.t_node} observations")
            if config is not None and not node.gain >= config.t_adeni:
                problems.append(f"node {i}: gain {node.gain} < t_adeni={config.t_adeni}")
            if config is not None and depth >= config.max_depth:
                problems.append(f"node {i}: split at depth {depth} >= max_depth")
            if node.left.count + node.right.count != node.count:
                problems.append(f"node {i}: children do not partition the parent")
        else:
            if node.count < 1:
                problems.append(f"node {i}: empty leaf")
            if node.flag != decide_abort(node.stats, tree.cost):
                problems.append(f"node {i}: leaf label disagrees with its statistics")
    return problems


# -- serialization --------------------------------------------------------


def serialize(tree: AbortTree) -> dict:
    nodes = []

    def emit(node) -> int:
        i = len(nodes)
        nodes.append(None)
        if isinstance(node, Leaf):
            nodes[i] = {"kind": "leaf", "abort": node.flag.abort, "count": node.count,
                        "stats": node.stats.to_dict()}
        else:
            pred = {"op": "eq", "value": node.value} if node.op == "eq" else {"op": "le", "threshold": node.value}
            entry = {"kind": "split", "feature": node.feature, "predicate": pred, "missing": node.missing,
                     "children": None, "gain": node.gain, "count": node.count}
            nodes[i] = entry
            left = emit(node.left)
            right = emit(node.right)
            entry["children"] = [left, right]
        return i

    emit(tree.root)
    doc = {
        "type": "tree",
        "cost_usd_per_auction": tree.cost.cost_per_auction,
        "gain_orientation": GAIN_ORIENTATION,
        "features": tree.features,
        "tree_config": None if tree.config is None else tree.config.to_dict(),
        "reweight": None if tree.partition is None else {"boundaries": list(tree.partition.boundaries)},
        "nodes": nodes,
        "root": 0,
    }
    doc.update(tree.meta)
    return doc


def _expect(cond, path, message):
    if not cond:
        raise ModelParseError(path, message)


def deserialize(doc: Mapping) -> AbortTree:
    """Inverse of ``serialize``; raises ModelParseError naming the offending path."""
    _expect(isinstance(doc, Mapping), "$", "model document must be an object")
    _expect(doc.get("type") == "tree", "$.type", f"expected 'tree', got {doc.get('type')!r}")
    _expect(doc.get("gain_orientation", GAIN_ORIENTATION) == GAIN_ORIENTATION, "$.gain_orientation", "unsupported split-gain orientation")
    cost = doc.get("cost_usd_per_auction")
    _expect(isinstance(cost, (int, float)) and not isinstance(cost, bool) and cost >= 0,
            "$.cost_usd_per_auction", "must be a non-negative number")
    features = doc.get("features")
    _expect(isinstance(features, Mapping), "$.features", "must be an object")
    for name, schema in features.items():
        p = f"$.features.{name}"
        _expect(isinstance(schema, Mapping) and schema.get("kind") in ("categorical", "numeric"), p,
                "kind must be 'categorical' or 'numeric'")
        if schema["kind"] == "categorical":
            _expect(isinstance(schema.get("categories"), list), p + ".categories", "must be a list")
    nodes = doc.get("nodes")
    _expect(isinstance(nodes, list) and nodes, "$.nodes", "must be a non-empty list")
    root = doc.get("root", 0)
    _expect(isinstance(root, int) and 0 <= root < len(nodes), "$.root", "index out of range")
    visited = set()

    def build(i: int, path: str):
        _expect(i not in visited, path, f"node {i} referenced twice")
        visited.add(i)
        nd = nodes[i]
        p = f"$.nodes[{i}]"
        _expect(isinstance(nd, Mapping), p, "node must be an object")
        kind = nd.get("kind")
        if kind == "leaf":
            _expect(isinstance(nd.get("abort"), bool), p + ".abort", "must be a boolean")
            _expect(isinstance(nd.get("count"), int) and nd["count"] >= 1, p + ".count", "must be a positive integer")
            try:
                stats = TagStats.from_dict(nd.get("stats") or {})
            except TypeError as exc:
                raise ModelParseError(p + ".stats", str(exc)) from exc
            return Leaf(AbortFlag.ABORT if nd["abort"] else AbortFlag.KEEP, stats, nd["count"])
        if kind == "split":
            feat = nd.get("feature")
            _expect(feat in features, p + ".feature", f"unknown feature {feat!r}")
            pred = nd.get("predicate")
            _expect(isinstance(pred, Mapping), p + ".predicate", "must be an object")
            if pred.get("op") == "eq":
                _expect(features[feat]["kind"] == "categorical", p + ".predicate.op", "eq needs a categorical feature")
                _expect(isinstance(pred.get("value"), str), p + ".predicate.value", "must be a string")
                op, value = "eq", pred["value"]
            elif pred.get("op") == "le":
                _expect(features[feat]["kind"] == "numeric", p + ".predicate.op", "le needs a numeric feature")
                thr = pred.get("threshold")
                _expect(isinstance(thr, (int, float)) and not isinstance(thr, bool), p + ".predicate.threshold",
                        "must be a number")
                op, value = "le", float(thr)
            else:
                raise ModelParseError(p + ".predicate.op", f"unknown predicate {pred.get('op')!r}")
            _expect(nd.get("missing") in ("left", "right"), p + ".missing", "must be 'left' or 'right'")
            ch = nd.get("children")
            _expect(isinstance(ch, list) and len(ch) == 2 and all(isinstance(c, int) for c in ch),
                    p + ".children", "must be two node indices")
            for k, c in enumerate(ch):
                _expect(0 <= c < len(nodes), f"{p}.children[{k}]", "index out of range")
            gain = nd.get("gain")
            _expect(isinstance(gain, (int, float)), p + ".gain", "must be a number")
            left = build(ch[0], f"{p}.children[0]")
            right = build(ch[1], f"{p}.children[1]")
            count = nd.get("count", left.count + right.count)
            return Split(feat, op, value, nd["missing"], float(gain), int(count), left, right)
        raise ModelParseError(p + ".kind", f"unknown node kind {kind!r}")

    root_node = build(root, "$.root")
    cfg = doc.get("tree_config")
    config = None
    if cfg:
        config = TreeConfig(
            cost=CostModel(cfg["cost"]), t_node=cfg["t_node"],
            t_adeni=math.inf if cfg["t_adeni"] is None else cfg["t_adeni"],
            max_depth=cfg["max_depth"], max_thresholds=cfg["max_thresholds"],
            reweight=cfg["reweight"], bins=cfg["bins"],
        )
    rw = doc.get("reweight")
    known = {"type", "cost_usd_per_auction", "gain_orientation", "features", "tree_config", "reweight", "nodes", "root"}
    return AbortTree(
        root=root_node,
        cost=CostModel(float(cost)),
        features={k: dict(v) for k, v in features.items()},
        config=config,
        partition=None if not rw else BidBinPartition(tuple(rw["boundaries"])),
        meta={k: v for k, v in doc.items() if k not in known},
    )
