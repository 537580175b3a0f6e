"""Test-time trajectory search: PUCB MCTS plus breadth and depth baselines.

Every node is a complete proposed trajectory that has been executed and
scored; edges are refinement operations. Selection descends from the root by

    argmax over children of  mean(c) + c_pucb * prior(c) * sqrt(ln N(n) / N(c))

(unvisited children first, ties by insertion order), expansion proposes B
children of the selected leaf conditioned on freshly retrieved demos and the
parent's rendered feedback, and each child's reward is backed up along its
root path. The budget counts proposed-and-executed trajectories, root
included; the final expansion truncates to fit. Success is decided by the
environment verifier, never by the scorer, and a verified trajectory is
written back to the archive.

The tree has a single writer. Sibling evaluations within one expansion are
independent (cloned environments would allow running them concurrently) but
execute, back up, and log sequentially in child order so runs are
deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

from .archive import Archive, EmptyArchiveForTask, RetrievalMode
from .feedback import AnnotatedTrajectory, FeedbackBlock, FeedbackMode, annotate, render_feedback
from .policy import PolicyBackend, ProposalRequest
from .scorer import ScorerBackend, SubtaskList, decompose_once, score
from .simulator import Rollout, SimEnv
from .tasks import TaskSpec
from .trajectory import Trajectory, encode_initial_state_text, encode_trajectory_text, parse_trajectory_text

PRIOR_FLOOR = 0.05


class NoChildren(ValueError):
    """PUCB selection on a childless node."""


@dataclass(slots=True)
class SearchNode:
    id: int
    parent: int | None
    trajectory: Trajectory
    annotated: AnnotatedTrajectory
    reward: float
    prior: float
    verified_success: bool
    depth: int
    visits: int = 0
    mean: float = 0.0
    children: list[int] = field(default_factory=list)


@dataclass(frozen=True, slots=True)
class SearchConfig:
    budget: int = 15
    branching: int = 3
    c_pucb: float = 1.0
    k_retrieval: int = 1
    retrieval: RetrievalMode = field(default_factory=RetrievalMode.similarity)
    feedback: FeedbackMode = FeedbackMode.STEP_LEVEL
    early_stop: bool = True
    scorer_frames: int = 50
    feedback_from_best_ancestor: bool = False

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.branching < 1:
            raise ValueError("branching factor must be >= 1")
        if self.c_pucb <= 0:
            raise ValueError("c_pucb must be > 0")
        if self.k_retrieval < 1:
            raise ValueError("k_retrieval must be >= 1")


@dataclass(frozen=True, slots=True)
class NodeRecord:
    """Append-only tree-log entry, written when the node is evaluated."""

    id: int
    parent: int | None
    depth: int
    reward: float
    prior: float
    verified_success: bool
    demo_refs: tuple[int, ...]
    feedback_source: int | None
    trajectory_text: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "type": "node",
                "id": self.id,
                "parent": self.parent,
                "depth": self.depth,
                "reward": self.reward,
                "prior": self.prior,
                "verified_success": self.verified_success,
                "demo_refs": list(self.demo_refs),
                "feedback_source": self.feedback_source,
                "trajectory_text": self.trajectory_text,
            },
            sort_keys=True,
        )


@dataclass(frozen=True, slots=True)
class SearchResult:
    best: SearchNode
    success: bool
    nodes_expanded: int
    tree: Mapping[int, SearchNode]
    log: tuple[NodeRecord, ...]


def pucb_select(tree: Mapping[int, SearchNode], node: SearchNode, c_pucb: float) -> int:
    """Child id maximizing the prior-weighted UCB; unvisited children first."""
    if not node.children:
        raise NoChildren(f"node {node.id} has no children")
    for cid in node.children:
        if tree[cid].visits == 0:
            return cid
    best_id = node.children[0]
    best_score = -math.inf
    for cid in node.children:
        child = tree[cid]
        s = child.mean + c_pucb * child.prior * math.sqrt(math.log(node.visits) / child.visits)
        if s > best_score:
            best_score = s
            best_id = cid
    return best_id


class _Run:
    """Shared machinery for one search over a fixed (task, seed)."""

    def __init__(
        self,
        env: SimEnv,
        policy: PolicyBackend,
        scorer: ScorerBackend,
        archive: Archive,
        task: TaskSpec,
        seed: int,
        cfg: SearchConfig,
        subtask_cache: dict[str, SubtaskList] | None = None,
    ):
        self.env = env
        self.policy = policy
        self.scorer = scorer
        self.archive = archive
        self.task = task
        self.seed = seed
        self.cfg = cfg
        self.state0, self.obs, self.initial = env.reset(seed)
        self.subtasks = self._decompose(subtask_cache)
        self.tree: dict[int, SearchNode] = {}
        self.log: list[NodeRecord] = []
        self.rollouts: dict[int, Rollout] = {}
        self._feedback_cache: dict[int, FeedbackBlock] = {}
        self._init_texts: dict[int, str] = {}
        self.stopped = False

    def _decompose(self, cache: dict[str, SubtaskList] | None) -> SubtaskList:
        if cache is not None and self.task.task in cache:
            return cache[self.task.task]
        demos = [e for e in self.archive.entries(self.task.task) if e.is_demo]
        source = demos[0] if demos else None
        if source is None:
            entries = self.archive.entries(self.task.task)
            if not entries:
                raise EmptyArchiveForTask(self.task.task)
            source = entries[0]
        demo_state, _, _ = self.env.reset(source.seed)
        demo_rollout = self.env.execute(demo_state, source.trajectory)
        return decompose_once(self.task, demo_rollout, self.scorer, cache)

    def _initial_text(self, seed: int) -> str:
        text = self._init_texts.get(seed)
        if text is None:
            _, _, initial = self.env.reset(seed)
            text = encode_initial_state_text(initial)
            self._init_texts[seed] = text
        return text

    def _feedback_for(self, parent: SearchNode | None) -> tuple[FeedbackBlock | None, int | None]:
        if parent is None:
            return None, None
        block = self._feedback_cache.get(parent.id)
        if block is None:
            block = render_feedback(parent.annotated, self.rollouts[parent.id], self.cfg.feedback)
            if self.cfg.feedback_from_best_ancestor:
                best_anc = self._best_ancestor(parent)
                if best_anc is not None and best_anc.id != parent.id:
                    anc_block = render_feedback(
                        best_anc.annotated, self.rollouts[best_anc.id], self.cfg.feedback
                    )
                    block = FeedbackBlock(
                        text=anc_block.text + "\n" + block.text,
                        images=anc_block.images + block.images,
                    )
            self._feedback_cache[parent.id] = block
        return block, parent.id

    def _best_ancestor(self, node: SearchNode) -> SearchNode | None:
        best = None
        cur: SearchNode | None = node
        while cur is not None:
            if best is None or cur.reward > best.reward:
                best = cur
            cur = self.tree[cur.parent] if cur.parent is not None else None
        return best

    def evaluate(self, parent: SearchNode | None) -> SearchNode:
        """Propose, execute, score, back up, and log one node."""
        node_id = len(self.tree)
        depth = 0 if parent is None else parent.depth + 1
        demos = self.archive.retrieve(
            self.obs, self.cfg.k_retrieval, self.cfg.retrieval, self.task.task
        )
        demo_pairs = tuple(
            (encode_trajectory_text(e.trajectory), self._initial_text(e.seed)) for e in demos
        )
        feedback, feedback_source = self._feedback_for(parent)
        req = ProposalRequest(
            initial=self.initial,
            demos=demo_pairs,
            feedback=feedback,
            task_goal=self.task.goal_text,
            attempt_index=depth,
            child_index=node_id,
        )
        traj = self.policy.propose(req)
        rollout = self.env.execute(self.state0, traj)
        report = score(rollout, self.subtasks, self.scorer, self.cfg.scorer_frames)
        annotated = annotate(traj, report, rollout, self.subtasks)
        node = SearchNode(
            id=node_id,
            parent=parent.id if parent is not None else None,
            trajectory=traj,
            annotated=annotated,
            reward=report.reward,
            prior=min(max(report.reward, PRIOR_FLOOR), 1.0),
            verified_success=rollout.verified_success,
            depth=depth,
        )
        self.tree[node_id] = node
        self.rollouts[node_id] = rollout
        if parent is not None:
            parent.children.append(node_id)
        cur: SearchNode | None = node
        while cur is not None:
            cur.visits += 1
            cur.mean += (report.reward - cur.mean) / cur.visits
            cur = self.tree[cur.parent] if cur.parent is not None else None
        self.log.append(
            NodeRecord(
                id=node_id,
                parent=node.parent,
                depth=depth,
                reward=node.reward,
                prior=node.prior,
                verified_success=node.verified_success,
                demo_refs=tuple(e.inserted_at for e in demos),
                feedback_source=feedback_source,
                trajectory_text=encode_trajectory_text(traj),
            )
        )
        if self.cfg.early_stop and node.verified_success:
            self.stopped = True
        return node

    def finish(self) -> SearchResult:
        best = max(
            self.tree.values(), key=lambda n: (n.verified_success, n.reward, -n.id)
        )
        success = best.verified_success
        if success:
            self.archive.add(self.obs, best.trajectory, self.task.task, self.seed)
        return SearchResult(
            best=best,
            success=success,
            nodes_expanded=len(self.tree),
            tree=dict(self.tree),
            log=tuple(self.log),
        )


def run_mcts(
    env: SimEnv,
    policy: PolicyBackend,
    scorer: ScorerBackend,
    archive: Archive,
    task: TaskSpec,
    seed: int,
    cfg: SearchConfig,
    subtask_cache: dict[str, SubtaskList] | None = None,
) -> SearchResult:
    run = _Run(env, policy, scorer, archive, task, seed, cfg, subtask_cache)
    root = run.evaluate(parent=None)
    while len(run.tree) < cfg.budget and not run.stopped:
        node = root
        while node.children:
            node = run.tree[pucb_select(run.tree, node, cfg.c_pucb)]
        remaining = cfg.budget - len(run.tree)
        for _ in range(min(cfg.branching, remaining)):
            run.evaluate(parent=node)
            if run.stopped:
                break
    return run.finish()


def run_breadth(
    env: SimEnv,
    policy: PolicyBackend,
    scorer: ScorerBackend,
    archive: Archive,
    task: TaskSpec,
    seed: int,
    cfg: SearchConfig,
    subtask_cache: dict[str, SubtaskList] | None = None,
) -> SearchResult:
    """Budget independent proposals from the root context, no feedback loop."""
    run = _Run(env, policy, scorer, archive, task, seed, cfg, subtask_cache)
    for _ in range(cfg.budget):
        run.evaluate(parent=None)
        if run.stopped:
            break
    return run.finish()


def run_depth(
    env: SimEnv,
    policy: PolicyBackend,
    scorer: ScorerBackend,
    archive: Archive,
    task: TaskSpec,
    seed: int,
    cfg: SearchConfig,
    subtask_cache: dict[str, SubtaskList] | None = None,
) -> SearchResult:
    """One chain of sequential refinements, each fed by its predecessor."""
    run = _Run(env, policy, scorer, archive, task, seed, cfg, subtask_cache)
    node = run.evaluate(parent=None)
    while len(run.tree) < cfg.budget and not run.stopped:
        node = run.evaluate(parent=node)
    return run.finish()


STRATEGIES = {
    "mcts": run_mcts,
    "breadth": run_breadth,
    "depth": run_depth,
}


def run_strategy(name: str, *args, **kwargs) -> SearchResult:
    if name == "single":
        cfg = kwargs.get("cfg") or args[6]
        cfg = replace(cfg, budget=1)
        if "cfg" in kwargs:
            kwargs["cfg"] = cfg
        else:
            args = args[:6] + (cfg,) + args[7:]
        return run_breadth(*args, **kwargs)
    try:
        return STRATEGIES[name](*args, **kwargs)
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}") from None


# --- tree-log replay ------------------------------------------------------

def recompute_stats(records: tuple[NodeRecord, ...] | list[NodeRecord]) -> dict[int, tuple[int, float]]:
    """From-scratch (visits, mean) per node, replayed from the log."""
    parents = {r.id: r.parent for r in records}
    counts: dict[int, int] = {r.id: 0 for r in records}
    sums: dict[int, float] = {r.id: 0.0 for r in records}
    for rec in sorted(records, key=lambda r: r.id):
        cur: int | None = rec.id
        while cur is not None:
            counts[cur] += 1
            sums[cur] += rec.reward
            cur = parents[cur]
    return {i: (counts[i], sums[i] / counts[i]) for i in counts}


def verify_backup(result: SearchResult, tol: float = 1e-9) -> bool:
    """Incremental (N, mean) must match the replayed tree log exactly."""
    replayed = recompute_stats(result.log)
    for node in result.tree.values():
        n, mean = replayed[node.id]
        if node.visits != n or abs(node.mean - mean) > tol:
            return False
        child_visits = sum(result.tree[c].visits for c in node.children)
        if node.visits < child_visits:
            return False
    return True


def parse_trajectory_from_record(record: NodeRecord) -> Trajectory:
    return parse_trajectory_text(record.trajectory_text)
