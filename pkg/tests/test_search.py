from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import seeded_archive
from sail.feedback import FeedbackMode
from sail.policy import ScriptedPolicy
from sail.scorer import OracleScorer
from sail.search import (
    NoChildren,
    SearchConfig,
    SearchNode,
    pucb_select,
    recompute_stats,
    run_mcts,
    run_strategy,
    verify_backup,
)
from sail.simulator import SimEnv
from sail.tasks import get_task
from sail.trajectory import EndEffectorState, Trajectory


def _node(nid, parent=None, mean=0.0, prior=0.5, visits=1, children=()):
    traj = Trajectory((EndEffectorState(position=(0, 0, 0.1)),))
    node = SearchNode(
        id=nid, parent=parent, trajectory=traj, annotated=None, reward=mean,
        prior=prior, verified_success=False, depth=0, visits=visits, mean=mean,
        children=list(children),
    )
    return node


def _tree(parent_visits, specs):
    """specs: list of (mean, prior, visits) for children of node 0."""
    tree = {0: _node(0, visits=parent_visits, children=range(1, len(specs) + 1))}
    for i, (mean, prior, visits) in enumerate(specs, start=1):
        tree[i] = _node(i, parent=0, mean=mean, prior=prior, visits=visits)
    return tree


def test_pucb_hand_computed_fixture():
    # N(n)=10, c=1: scores 0.5+0.5*sqrt(ln10/5)=0.8393, 0.3+0.9*sqrt(ln10/2)=1.2658
    tree = _tree(10, [(0.5, 0.5, 5), (0.3, 0.9, 2)])
    s1 = 0.5 + 0.5 * math.sqrt(math.log(10) / 5)
    s2 = 0.3 + 0.9 * math.sqrt(math.log(10) / 2)
    assert s1 == pytest.approx(0.83931, abs=5e-6)
    assert s2 == pytest.approx(1.26568, abs=5e-6)
    assert pucb_select(tree, tree[0], 1.0) == 2


def test_pucb_singleton_and_unvisited_first():
    tree = _tree(10, [(0.9, 0.9, 5)])
    assert pucb_select(tree, tree[0], 1.0) == 1
    tree = _tree(10, [(0.9, 0.9, 5), (0.0, 0.1, 0)])
    assert pucb_select(tree, tree[0], 1.0) == 2
    with pytest.raises(NoChildren):
        pucb_select({0: _node(0)}, _node(0), 1.0)


def _brute_force_pucb(parent_visits, specs, c):
    for i, (_, _, visits) in enumerate(specs, start=1):
        if visits == 0:
            return i
    best, best_idx = -math.inf, None
    for i, (mean, prior, visits) in enumerate(specs, start=1):
        s = mean + c * prior * math.sqrt(math.log(parent_visits) / visits)
        if s > best:
            best, best_idx = s, i
    return best_idx


@settings(max_examples=200, deadline=None)
@given(
    specs=st.lists(
        st.tuples(
            st.floats(0, 1, allow_nan=False),
            st.floats(0.05, 1, allow_nan=False),
            st.integers(0, 50),
        ),
        min_size=1,
        max_size=20,
    ),
    c=st.floats(0.1, 3.0, allow_nan=False),
)
def test_pucb_matches_brute_force(specs, c):
    parent_visits = sum(max(v, 1) for _, _, v in specs) + 1
    tree = _tree(parent_visits, specs)
    assert pucb_select(tree, tree[0], c) == _brute_force_pucb(parent_visits, specs, c)


def _run(task_name, strategy, seed, budget, early_stop=True, feedback=FeedbackMode.STEP_LEVEL):
    spec = get_task(task_name)
    env = SimEnv(spec)
    archive = seeded_archive(task_name)
    cfg = SearchConfig(budget=budget, early_stop=early_stop, feedback=feedback)
    policy = ScriptedPolicy(spec, seed)
    return run_strategy(strategy, env, policy, OracleScorer(spec), archive, spec, seed, cfg, {})


def test_budget_one_is_single_rollout(task_name):
    for strategy in ("mcts", "breadth", "depth"):
        result = _run(task_name, strategy, seed=0, budget=1)
        assert result.nodes_expanded == 1
        assert len(result.tree) == 1


def test_budget_honesty_and_truncation(task_name):
    for budget in (1, 2, 6, 15):
        result = _run(task_name, "mcts", seed=1, budget=budget, early_stop=False)
        assert result.nodes_expanded == budget
        assert len(result.tree) == budget
        assert len(result.log) == budget


def test_backup_consistency_over_runs(task_name):
    for seed in range(8):
        result = _run(task_name, "mcts", seed=seed, budget=15, early_stop=False)
        assert verify_backup(result)


def test_backup_matches_manual_recompute():
    result = _run("pick_place", "mcts", seed=3, budget=10, early_stop=False)
    replayed = recompute_stats(result.log)
    for node in result.tree.values():
        visits, mean = replayed[node.id]
        assert node.visits == visits
        assert node.mean == pytest.approx(mean, abs=1e-9)
        assert node.visits >= sum(result.tree[c].visits for c in node.children)


def test_early_stop_no_nodes_after_success(task_name):
    result = _run(task_name, "mcts", seed=2, budget=45)
    if result.success:
        success_ids = [n.id for n in result.tree.values() if n.verified_success]
        assert max(n.id for n in result.tree.values()) == min(success_ids)


def test_depth_tree_is_a_path():
    result = _run("pick_place", "depth", seed=5, budget=15, early_stop=False)
    assert all(len(n.children) <= 1 for n in result.tree.values())
    depths = [n.depth for n in result.tree.values()]
    assert sorted(depths) == list(range(result.nodes_expanded))


def test_breadth_never_sees_feedback():
    result = _run("pick_place", "breadth", seed=5, budget=15, early_stop=False)
    assert all(r.feedback_source is None for r in result.log)
    assert all(r.depth == 0 for r in result.log)


def test_mcts_children_conditioned_on_parent():
    result = _run("pick_place", "mcts", seed=7, budget=15, early_stop=False)
    for rec in result.log:
        if rec.parent is not None:
            assert rec.feedback_source == rec.parent
        assert rec.demo_refs  # every node retrieved demonstrations


def test_one_execute_and_score_per_node(task_name):
    spec = get_task(task_name)
    env = SimEnv(spec)
    archive = seeded_archive(task_name)
    counters = {"execute": 0, "score": 0}

    class CountingEnv(SimEnv):
        def execute(self, state, traj):
            counters["execute"] += 1
            return super().execute(state, traj)

    class CountingScorer(OracleScorer):
        def completion_pct(self, label, start, current):
            return super().completion_pct(label, start, current)

        def decompose(self, goal, demo):
            return super().decompose(goal, demo)

    import sail.search as search_mod

    orig_score = search_mod.score

    def counting_score(*args, **kwargs):
        counters["score"] += 1
        return orig_score(*args, **kwargs)

    search_mod.score = counting_score
    try:
        env2 = CountingEnv(spec)
        cfg = SearchConfig(budget=9, early_stop=False)
        result = run_mcts(env2, ScriptedPolicy(spec, 0), CountingScorer(spec), archive, spec, 0, cfg, {})
    finally:
        search_mod.score = orig_score
    # one decomposition demo rollout plus one execution per node
    assert counters["execute"] == result.nodes_expanded + 1
    assert counters["score"] == result.nodes_expanded


def test_success_inserts_into_archive(task_name):
    spec = get_task(task_name)
    archive = seeded_archive(task_name)
    before = archive.size(task_name)
    result = _run_with_archive(task_name, archive, seed=2, budget=45)
    if result.success:
        assert archive.size(task_name) == before + 1
        newest = max(archive.entries(task_name), key=lambda e: e.inserted_at)
        assert newest.seed == 2 and not newest.is_demo
        redo = SimEnv(spec)
        state, _, _ = redo.reset(2)
        assert redo.execute(state, newest.trajectory).verified_success


def _run_with_archive(task_name, archive, seed, budget):
    spec = get_task(task_name)
    env = SimEnv(spec)
    cfg = SearchConfig(budget=budget)
    return run_mcts(env, ScriptedPolicy(spec, seed), OracleScorer(spec), archive, spec, seed, cfg, {})


def test_node_record_json_round_trip():
    result = _run("pick_place", "mcts", seed=1, budget=4, early_stop=False)
    import json

    for rec in result.log:
        data = json.loads(rec.to_json())
        assert data["type"] == "node"
        assert data["id"] == rec.id


def test_search_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(budget=0)
    with pytest.raises(ValueError):
        SearchConfig(branching=0)
    with pytest.raises(ValueError):
        SearchConfig(c_pucb=0.0)
    with pytest.raises(ValueError):
        run_strategy("annealing", None, None, None, None, None, 0, SearchConfig())
