import copy
import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

import oracle
from conftest import make_request
from waterfall_abort.domain import AbortFlag, AuctionLog, CostModel, Observations, ValidationError
from waterfall_abort.evaluate import ReplayMode, replay
from waterfall_abort.rule_simple import TagStats, decide_abort, estimate_tag_stats, train_simple
from waterfall_abort.simulator import SimConfig, generate
from waterfall_abort.tree import (
    AbortTree,
    Leaf,
    ModelParseError,
    Split,
    TreeConfig,
    adeni,
    audit,
    best_split,
    classify,
    deserialize,
    grow,
    iter_nodes,
    predict_abort,
    serialize,
    split_gain,
)

C = CostModel(0.001)


def three_obs(**kw):
    return Observations.from_arrays(won=[True, False, False], payoff=[0.010, 0.004, 0.0],
                                    num_played=[2, 3, 3], **kw)


def random_obs(rng, n, p=0.3, n_tags=3, context=None):
    won = rng.random(n) < p
    f = np.where(won, rng.lognormal(-5, 0.5, n), rng.lognormal(-6, 1.0, n) * (rng.random(n) < 0.6))
    z = rng.integers(1, 6, n).astype(float)
    tags = [f"t{k}" for k in rng.integers(0, n_tags, n)]
    return Observations.from_arrays(won=won, payoff=f, num_played=z, tag_id=tags, context=context)


def rows_of(obs, idx=None):
    idx = range(len(obs)) if idx is None else idx
    return [(bool(obs.won[i]), float(obs.payoff[i]), float(obs.num_played[i])) for i in idx]


def segment_tree(missing="right"):
    """ctx_segment == "A" -> Keep, otherwise Abort."""
    stats = TagStats(1, 1, 0.5, 0.01, 0.0, 1.0, 2.0)
    return AbortTree(
        root=Split("ctx_segment", "eq", "A", missing, 1.0, 2,
                   Leaf(AbortFlag.KEEP, stats, 1), Leaf(AbortFlag.ABORT, stats, 1)),
        cost=C,
        features={"ctx_segment": {"kind": "categorical", "categories": ["A", "B"]},
                  "tag_id": {"kind": "categorical", "categories": ["t"]}},
    )


class TestAdeni:
    def test_all_losses_give_cost(self):
        obs = Observations.from_arrays(won=[False] * 5, payoff=[0.0, 0.1, 0.0, 0.2, 0.0], num_played=[3] * 5)
        assert adeni(obs, C) == 0.001

    def test_three_observation_example(self):
        # [DERIVED] |1/3 * (0.008 - 0.001 * (2 - 3)) - 0.001| = 0.002
        assert adeni(three_obs(), C) == pytest.approx(0.002, abs=1e-15)

    def test_zero_cost_equal_payoffs(self):
        obs = Observations.from_arrays(won=[True, False], payoff=[0.5, 0.5], num_played=[1, 3])
        assert adeni(obs, CostModel(0.0)) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            adeni(Observations.from_arrays(won=[], payoff=[], num_played=[]), C)

    @settings(max_examples=200)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 30), st.floats(0.05, 0.95), st.floats(0, 0.02))
    def test_equals_net_income_gap(self, seed, n, p, c):
        obs = random_obs(np.random.default_rng(seed), n, p)
        rows = rows_of(obs)
        assume(any(r[0] for r in rows) and not all(r[0] for r in rows))
        assert adeni(obs, CostModel(c)) == pytest.approx(oracle.adeni(rows, c), abs=1e-9)

    def test_decision_sign_matches_rule(self):
        # keep exactly when the signed quantity inside the absolute value is non-negative
        rng = np.random.default_rng(1)
        for _ in range(200):
            obs = random_obs(rng, 20, 0.3, n_tags=1)
            rows = rows_of(obs)
            if not any(r[0] for r in rows) or all(r[0] for r in rows):
                continue
            gap = oracle.ni_keep(rows, 0.001) - oracle.ni_abort(rows, 0.001)
            flag = decide_abort(estimate_tag_stats(obs)["t0"], C)
            assert (flag is AbortFlag.KEEP) == (gap >= 0) or abs(gap) < 1e-15


class TestSplitGain:
    def test_no_op_partition(self):
        obs = three_obs()
        assert split_gain(obs, [np.arange(3)], C) == 0.0

    def test_identical_halves(self):
        base = random_obs(np.random.default_rng(2), 50)
        doubled = Observations.from_arrays(
            won=np.tile(base.won, 2), payoff=np.tile(base.payoff, 2), num_played=np.tile(base.num_played, 2))
        gain = split_gain(doubled, [np.arange(50), np.arange(50, 100)], C)
        assert gain == pytest.approx(0.0, abs=1e-15)

    def test_three_observation_example(self):
        # [DERIVED] 1/3 * 0.007 + 2/3 * 0.001 - 0.002 = 0.001
        gain = split_gain(three_obs(), [np.array([0]), np.array([1, 2])], C)
        assert gain == pytest.approx(0.001, abs=1e-15)

    @pytest.mark.parametrize("children", [
        [np.array([0]), np.array([1])],
        [np.array([0, 1]), np.array([1, 2])],
        [np.array([0, 1, 2]), np.array([], dtype=int)],
    ])
    def test_invalid_partition(self, children):
        with pytest.raises(ValidationError):
            split_gain(three_obs(), children, C)


class TestBestSplit:
    def config(self, **kw):
        return TreeConfig(cost=C, t_node=kw.pop("t_node", 2), t_adeni=kw.pop("t_adeni", 0.0), **kw)

    def test_identical_rows_have_no_split(self):
        obs = Observations.from_arrays(won=[True, False] * 5, payoff=[0.01, 0.0] * 5, num_played=[1, 2] * 5,
                                       context={"segment": ["A"] * 10})
        assert best_split(obs, self.config()) is None

    def test_separating_feature(self):
        # tag W always wins (segment A), tag L always loses (segment B)
        obs = Observations.from_arrays(
            won=[True] * 4 + [False] * 4, payoff=[0.01] * 4 + [0.0] * 4, num_played=[1] * 4 + [2] * 4,
            tag_id=["W"] * 4 + ["L"] * 4, context={"segment": ["A"] * 4 + ["B"] * 4},
        )
        best = best_split(obs, self.config())
        assert best is not None
        assert (best.feature, best.value) in {("ctx_segment", "A"), ("ctx_segment", "B"),
                                              ("tag_id", "L"), ("tag_id", "W")}
        # [DERIVED] children: always-win |0.01 - 0.001*1 - 0.001| = 0.008, always-lose 0.001;
        # parent p=1/2: |0.5 * (0.01 - 0.001 * (1 - 2)) - 0.001| = 0.0045
        assert best.gain == pytest.approx(0.5 * 0.008 + 0.5 * 0.001 - 0.0045, abs=1e-15)
        # the four candidates tie exactly; the smallest (feature, value) wins
        assert (best.feature, best.value) == ("ctx_segment", "A")

    def test_unreachable_threshold(self):
        obs = random_obs(np.random.default_rng(3), 100, context={"segment": list("ABCD" * 25)})
        assert best_split(obs, self.config(t_adeni=math.inf)) is None

    def test_node_below_t_node_is_an_error(self):
        with pytest.raises(ValidationError):
            best_split(three_obs(), self.config(t_node=10))

    def test_numeric_threshold_at_midpoint(self):
        obs = Observations.from_arrays(
            won=[True, True, False, False], payoff=[0.02, 0.02, 0.0, 0.0], num_played=[1, 1, 3, 3],
            context={"score": [1.0, 2.0, 3.0, 4.0]},
        )
        best = best_split(obs, self.config())
        # [DERIVED] parent |1/2 * 0.022 - 0.001| = 0.010; weighted children at the midpoints
        # 1.5 -> 0.00925, 2.5 -> 0.0095, 3.5 -> 0.75 * |2/3 * 0.022 - 0.001| + 0.25 * 0.001 = 0.0105
        assert (best.feature, best.op, best.value) == ("ctx_score", "le", 3.5)
        assert best.gain == pytest.approx(0.0005, abs=1e-15)

    def test_missing_values_follow_the_majority(self):
        obs = Observations.from_arrays(
            won=[True, True, True, False, False, False], payoff=[0.02] * 3 + [0.0] * 3, num_played=[1] * 3 + [3] * 3,
            context={"score": [1.0, 2.0, None, 8.0, 9.0, 10.0]},
        )
        best = best_split(obs, self.config())
        assert best.feature == "ctx_score"
        assert best.n_left + best.n_right == 6
        assert best.missing == ("left" if best.n_left - 1 >= best.n_right else "right")

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_gain_matches_explicit_children(self, seed):
        rng = np.random.default_rng(seed)
        n = 60
        score = [None if rng.random() < 0.1 else float(rng.integers(0, 8)) for _ in range(n)]
        obs = random_obs(rng, n, context={"segment": [str(v) for v in rng.choice(list("ABC"), n)],
                                          "score": score})
        best = best_split(obs, self.config())
        if best is None:
            return
        left, right = best.children(obs)
        assert (len(left), len(right)) == (best.n_left, best.n_right)
        assert best.gain == pytest.approx(split_gain(obs, [left, right], C), abs=1e-12)
        # nothing in the candidate set beats the winner
        for name, col in obs.features.items():
            values = col.categories if col.kind == "categorical" else []
            for v in values:
                mask = col.codes == col.categories.index(v)
                if mask.all() or not mask.any():
                    continue
                g = split_gain(obs, [np.flatnonzero(mask), np.flatnonzero(~mask)], C)
                assert g <= best.gain + 1e-12


class TestGrow:
    def test_large_t_node_gives_root_leaf(self, small_log):
        cost = CostModel.from_cpm_cents(0.7326)
        tree = grow(small_log, TreeConfig(cost=cost, t_node=10**9))
        assert isinstance(tree.root, Leaf)
        root_stats = estimate_tag_stats(Observations.from_arrays(
            won=Observations.from_log(small_log).won,
            payoff=Observations.from_log(small_log).payoff,
            num_played=Observations.from_log(small_log).num_played))["t"]
        assert tree.root.flag == decide_abort(root_stats, cost)
        assert tree.root.count == int(small_log.played.sum())

    def test_planted_interaction(self):
        # one tag: profitable in segment A, never wins in segment B
        rng = np.random.default_rng(4)
        records = []
        for i in range(400):
            seg = "A" if i % 2 == 0 else "B"
            wins = seg == "A" and rng.random() < 0.5
            records.append(make_request(f"r{i:04d}", tags=("T",), would_win=(wins,),
                                        payoffs=[0.01], context={"segment": seg}))
        log = AuctionLog.from_records(records)
        cost = CostModel(0.001)
        tree = grow(log, TreeConfig(cost=cost, t_node=50, t_adeni=0.0))
        root = tree.root
        assert isinstance(root, Split) and root.feature == "ctx_segment"
        assert isinstance(root.left, Leaf) and isinstance(root.right, Leaf)
        # [DERIVED] per-segment simple rule on tag T
        seg_a = AuctionLog.from_records([r for r in records if r.context["segment"] == "A"])
        seg_b = AuctionLog.from_records([r for r in records if r.context["segment"] == "B"])
        flag_a = train_simple(seg_a, cost, min_support=1).flags["T"]
        flag_b = train_simple(seg_b, cost, min_support=1).flags["T"]
        assert (flag_a, flag_b) == (AbortFlag.KEEP, AbortFlag.ABORT)
        assert classify(tree, ({"segment": "A"}, "T")) is flag_a
        assert classify(tree, ({"segment": "B"}, "T")) is flag_b

    def test_deterministic(self, small_log):
        config = TreeConfig(cost=CostModel.from_cpm_cents(1.0989), t_node=200)
        assert serialize(grow(small_log, config)) == serialize(grow(small_log, config))

    def test_row_order_does_not_matter(self, small_log):
        records = list(small_log.records())
        shuffled = [records[i] for i in np.random.default_rng(0).permutation(len(records))]
        config = TreeConfig(cost=CostModel.from_cpm_cents(1.0989), t_node=200)
        a = serialize(grow(small_log, config))
        b = serialize(grow(AuctionLog.from_records(shuffled), config))
        assert a == b

    @pytest.mark.parametrize("cpm", [0.3663, 0.7326, 1.0989])
    def test_audit_is_clean(self, small_log, cpm):
        config = TreeConfig(cost=CostModel.from_cpm_cents(cpm), t_node=300, t_adeni=1e-8)
        tree = grow(small_log, config)
        assert audit(tree) == []
        for node, depth in iter_nodes(tree.root):
            if isinstance(node, Split):
                assert node.count >= config.t_node and node.gain >= config.t_adeni
                assert depth < config.max_depth

    def test_max_depth(self, small_log):
        tree = grow(small_log, TreeConfig(cost=CostModel.from_cpm_cents(1.0989), t_node=50, t_adeni=0.0, max_depth=2))
        assert tree.depth <= 2

    def test_audit_flags_tampering(self, small_log):
        config = TreeConfig(cost=CostModel.from_cpm_cents(1.0989), t_node=300, t_adeni=1e-8)
        tree = grow(small_log, config)
        assert isinstance(tree.root, Split)
        tree.root.gain = 0.0
        leaf = tree.leaves[0]
        leaf.flag = AbortFlag(1 - leaf.flag)
        problems = audit(tree)
        assert any("gain" in p for p in problems) and any("label" in p for p in problems)

    def test_dominates_root_leaf_in_sample(self, small_log):
        for cpm in (0.3663, 0.7326, 1.0989):
            cost = CostModel.from_cpm_cents(cpm)
            tree = grow(small_log, TreeConfig(cost=cost, t_node=200, t_adeni=0.0))
            root = grow(small_log, TreeConfig(cost=cost, t_node=10**9))
            ni_tree = replay(small_log, tree, cost, ReplayMode.ORACLE).net_income
            ni_root = replay(small_log, root, cost, ReplayMode.ORACLE).net_income
            assert ni_tree >= ni_root - 1e-9

    def test_reweighting_with_one_bin_matches_plain(self):
        log = generate(SimConfig(seed=2, num_publishers=3, requests_per_publisher=3000, bid_min=1), 1)
        cost = CostModel.from_cpm_cents(1.0989)
        plain = grow(log, TreeConfig(cost=cost, t_node=300))
        one = grow(log, TreeConfig(cost=cost, t_node=300, reweight=True, bins=1))
        a, b = serialize(plain), serialize(one)
        for doc in (a, b):
            doc.pop("tree_config"), doc.pop("reweight")
            for node in doc["nodes"]:
                if node["kind"] == "leaf":
                    node["stats"].pop("delta_f_adj"), node["stats"].pop("delta_z_adj")
        assert a == b

    def test_empty_log_rejected(self):
        with pytest.raises(ValidationError):
            grow(AuctionLog.from_records([]), TreeConfig(cost=C))

    @pytest.mark.parametrize("kw", [{"t_node": 1}, {"t_adeni": -1.0}, {"max_thresholds": 0}])
    def test_config_validation(self, kw):
        with pytest.raises(ValidationError):
            TreeConfig(cost=C, **kw)


class TestClassify:
    def test_single_leaf(self):
        tree = AbortTree(Leaf(AbortFlag.KEEP, TagStats(1, 0, 1.0, 0.1, None, 1.0, None), 1), C, {})
        assert classify(tree, ({"anything": "x"}, "any")) is AbortFlag.KEEP

    def test_direct_routing(self):
        assert classify(segment_tree(), ({"segment": "A"}, "t")) is AbortFlag.KEEP
        assert classify(segment_tree(), ({"segment": "B"}, "t")) is AbortFlag.ABORT

    def test_unseen_value_follows_missing_direction(self):
        # [DERIVED] "C" is not in the model vocabulary, so the stored direction (right) applies
        assert classify(segment_tree("right"), ({"segment": "C"}, "t")) is AbortFlag.ABORT
        assert classify(segment_tree("left"), ({"segment": "C"}, "t")) is AbortFlag.KEEP
        assert classify(segment_tree("right"), ({}, "t")) is AbortFlag.ABORT

    def test_prefixed_context_keys(self):
        assert classify(segment_tree(), ({"ctx_segment": "A"}, "t")) is AbortFlag.KEEP

    def test_vectorized_matches_scalar(self, small_log):
        tree = grow(small_log, TreeConfig(cost=CostModel.from_cpm_cents(1.0989), t_node=100, t_adeni=0.0))
        assert tree.depth >= 2
        mask = predict_abort(tree, small_log)
        rng = np.random.default_rng(0)
        for row in rng.choice(small_log.n_rows, 400, replace=False):
            i = small_log.row_request[row]
            ctx = {name: col.value_at(i) for name, col in small_log.context.items()}
            tag = small_log.tags[small_log.row_tag[row]]
            assert classify(tree, (ctx, tag)).abort == mask[row]

    def test_leaf_labels_match_leaf_stats(self, small_log):
        tree = grow(small_log, TreeConfig(cost=CostModel.from_cpm_cents(0.7326), t_node=100, t_adeni=0.0))
        for leaf in tree.leaves:
            assert leaf.flag == decide_abort(leaf.stats, tree.cost)


def _random_probe(rng, tree):
    ctx = {}
    for name, schema in tree.features.items():
        if name == "tag_id":
            continue
        short = name[4:]
        if schema["kind"] == "categorical":
            pool = schema["categories"] + ["unseen", None]
            ctx[short] = pool[rng.integers(len(pool))]
        else:
            ctx[short] = None if rng.random() < 0.1 else float(rng.normal())
    tags = tree.features["tag_id"]["categories"] + ["unseen-tag"]
    return ctx, tags[rng.integers(len(tags))]


class TestSerialization:
    def test_single_leaf_round_trip(self):
        tree = AbortTree(Leaf(AbortFlag.ABORT, TagStats(0, 3, 0.0, None, 0.0, None, 2.0), 3), C,
                         {"tag_id": {"kind": "categorical", "categories": ["a"]}})
        doc = serialize(tree)
        assert doc["gain_orientation"] == "children_minus_parent" and doc["root"] == 0
        again = serialize(deserialize(json.loads(json.dumps(doc))))
        assert again == doc

    def test_deep_tree_classifies_identically(self):
        rng = np.random.default_rng(8)
        n = 3000
        context = {
            "segment": [str(v) for v in rng.choice(list("ABCDE"), n)],
            "score": [None if rng.random() < 0.05 else float(x) for x in rng.normal(size=n)],
        }
        obs = random_obs(rng, n, context=context)
        tree = grow(obs, TreeConfig(cost=CostModel(0.0005), t_node=100, t_adeni=0.0, max_depth=5))
        assert tree.depth >= 3
        back = deserialize(json.loads(json.dumps(serialize(tree))))
        probe_rng = np.random.default_rng(9)
        for _ in range(1000):
            probe = _random_probe(probe_rng, tree)
            assert classify(back, probe) == classify(tree, probe)

    def test_unknown_node_kind(self, small_log):
        doc = serialize(grow(small_log, TreeConfig(cost=CostModel.from_cpm_cents(1.0989), t_node=300)))
        assert len(doc["nodes"]) > 1
        doc["nodes"][1]["kind"] = "branch"
        with pytest.raises(ModelParseError) as err:
            deserialize(doc)
        assert err.value.path == "$.nodes[1].kind"

    @pytest.mark.parametrize("mutate, path", [
        (lambda d: d.update(type="forest"), "$.type"),
        (lambda d: d.update(gain_orientation="parent_minus_children"), "$.gain_orientation"),
        (lambda d: d.update(nodes=[]), "$.nodes"),
        (lambda d: d["nodes"][0].update(children=[0, 99]), "$.nodes[0].children[1]"),
        (lambda d: d["nodes"][0].update(feature="nope"), "$.nodes[0].feature"),
        (lambda d: d["nodes"][0]["predicate"].update(op="lt"), "$.nodes[0].predicate.op"),
    ])
    def test_schema_violations_name_the_path(self, mutate, path):
        doc = copy.deepcopy(serialize(segment_tree()))
        mutate(doc)
        with pytest.raises(ModelParseError) as err:
            deserialize(doc)
        assert err.value.path == path
