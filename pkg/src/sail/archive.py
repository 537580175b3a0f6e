"""Growing store of successful (observation, trajectory) pairs with
perceptual nearest-neighbor retrieval.

The image metric is a deterministic stand-in for a learned perceptual
distance: bilinear-resize to 64x64 grayscale, split into an 8x8 grid of
8x8-pixel cells, take (mean intensity, mean forward-difference gradient
magnitude) per cell, and compare the resulting 128-d features by Euclidean
norm. It sits behind `image_distance` so a learned metric can be swapped in.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as _rng
from .trajectory import Trajectory, encode_trajectory_text, parse_trajectory_text

logger = logging.getLogger(__name__)


class DimensionMismatch(ValueError):
    """Images compared by `image_distance` must share a shape."""


class EmptyArchiveForTask(KeyError):
    """Retrieval asked for a task with no archive entries."""


@dataclass(frozen=True, slots=True)
class ArchiveEntry:
    observation: np.ndarray = field(repr=False)
    trajectory: Trajectory = field(repr=False)
    task: str
    seed: int
    inserted_at: int
    is_demo: bool = False

    def __post_init__(self) -> None:
        obs = np.ascontiguousarray(self.observation)
        obs.setflags(write=False)
        object.__setattr__(self, "observation", obs)


@dataclass(frozen=True, slots=True)
class RetrievalMode:
    """How in-context demonstrations are chosen from the archive."""

    kind: str  # "similarity" | "random" | "fixed"
    rng_seed: int = 0

    _KINDS = ("similarity", "random", "fixed")

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown retrieval mode {self.kind!r}")

    @classmethod
    def similarity(cls) -> "RetrievalMode":
        return cls("similarity")

    @classmethod
    def random(cls, rng_seed: int = 0) -> "RetrievalMode":
        return cls("random", rng_seed=rng_seed)

    @classmethod
    def fixed(cls) -> "RetrievalMode":
        return cls("fixed")

    @classmethod
    def parse(cls, name: str, rng_seed: int = 0) -> "RetrievalMode":
        return cls("random", rng_seed=rng_seed) if name == "random" else cls(name)


def _to_gray(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[..., 0] * 0.299 + arr[..., 1] * 0.587 + arr[..., 2] * 0.114
    return arr / 255.0


def _resize_bilinear(gray: np.ndarray, size: int = 64) -> np.ndarray:
    h, w = gray.shape
    ys = np.clip((np.arange(size) + 0.5) * h / size - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(size) + 0.5) * w / size - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = gray[np.ix_(y0, x0)] * (1 - wx) + gray[np.ix_(y0, x1)] * wx
    bot = gray[np.ix_(y1, x0)] * (1 - wx) + gray[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def grid_features(img: np.ndarray) -> np.ndarray:
    """128-d cell features: per 8x8 cell, mean intensity and mean gradient."""
    small = _resize_bilinear(_to_gray(img), 64)
    gx = np.diff(small, axis=1, append=small[:, -1:])
    gy = np.diff(small, axis=0, append=small[-1:, :])
    grad = np.hypot(gx, gy)
    cells_i = small.reshape(8, 8, 8, 8).mean(axis=(1, 3))
    cells_g = grad.reshape(8, 8, 8, 8).mean(axis=(1, 3))
    return np.concatenate([cells_i.ravel(), cells_g.ravel()])


def image_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric perceptual distance; zero iff the grid features agree."""
    if np.shape(a) != np.shape(b):
        raise DimensionMismatch(f"{np.shape(a)} vs {np.shape(b)}")
    return float(np.linalg.norm(grid_features(a) - grid_features(b)))


class Archive:
    """Per-task entry lists; at most one entry per (task, seed), newest wins.

    Entries are immutable once inserted, so concurrent readers are safe as
    long as writes are serialized by the caller; a retrieval scans one
    consistent snapshot of the entry list.
    """

    def __init__(self, run_key: int = 0):
        self.run_key = run_key
        self._by_task: dict[str, list[ArchiveEntry]] = {}
        self._counter = 0
        self._features: dict[int, np.ndarray] = {}
        self._query_features: dict[bytes, np.ndarray] = {}
        self._random_draws = 0

    def add(
        self,
        observation: np.ndarray,
        trajectory: Trajectory,
        task: str,
        seed: int,
        is_demo: bool = False,
    ) -> ArchiveEntry:
        entry = ArchiveEntry(
            observation=observation,
            trajectory=trajectory,
            task=task,
            seed=seed,
            inserted_at=self._counter,
            is_demo=is_demo,
        )
        self._counter += 1
        entries = self._by_task.setdefault(task, [])
        for i, old in enumerate(entries):
            if old.seed == seed:
                self._features.pop(old.inserted_at, None)
                entries[i] = entry
                return entry
        entries.append(entry)
        return entry

    def insert(self, entry: ArchiveEntry) -> ArchiveEntry:
        return self.add(
            entry.observation, entry.trajectory, entry.task, entry.seed, is_demo=entry.is_demo
        )

    def entries(self, task: str) -> tuple[ArchiveEntry, ...]:
        return tuple(self._by_task.get(task, ()))

    def size(self, task: str | None = None) -> int:
        if task is not None:
            return len(self._by_task.get(task, ()))
        return sum(len(v) for v in self._by_task.values())

    def _feature(self, entry: ArchiveEntry) -> np.ndarray:
        feat = self._features.get(entry.inserted_at)
        if feat is None:
            feat = grid_features(entry.observation)
            self._features[entry.inserted_at] = feat
        return feat

    def _query_feature(self, obs: np.ndarray) -> np.ndarray:
        key = hashlib.sha1(np.ascontiguousarray(obs).tobytes()).digest()
        feat = self._query_features.get(key)
        if feat is None:
            feat = grid_features(obs)
            if len(self._query_features) > 4096:
                self._query_features.clear()
            self._query_features[key] = feat
        return feat

    def retrieve(
        self, obs: np.ndarray, k: int, mode: RetrievalMode, task: str
    ) -> list[ArchiveEntry]:
        """K demonstrations for `obs`, ordered per the retrieval mode.

        similarity: the k smallest individual distances (the subset objective
        decomposes), ties broken by insertion order, ascending distance.
        random: k uniform draws without replacement from the mode's stream.
        fixed: the first min(k, #demos) initial-demonstration entries.
        """
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        entries = self._by_task.get(task)
        if not entries:
            raise EmptyArchiveForTask(task)
        if mode.kind == "similarity":
            qf = self._query_feature(obs)
            scored = [
                (float(np.linalg.norm(self._feature(e) - qf)), e.inserted_at, e)
                for e in entries
            ]
            scored.sort(key=lambda t: (t[0], t[1]))
            return [e for _, _, e in scored[: min(k, len(scored))]]
        if mode.kind == "random":
            gen = _rng.stream(self.run_key, "retrieve", mode.rng_seed, task, self._random_draws)
            self._random_draws += 1
            picks = gen.choice(len(entries), size=min(k, len(entries)), replace=False)
            return [entries[int(i)] for i in picks]
        demos = [e for e in entries if e.is_demo]
        return demos[: min(k, len(demos))]

    # --- persistence ------------------------------------------------------

    def save(self, dirpath) -> None:
        from .rendering import save_png

        root = Path(dirpath)
        root.mkdir(parents=True, exist_ok=True)
        for task_entries in self._by_task.values():
            for entry in task_entries:
                stem = root / f"entry_{entry.inserted_at:06d}"
                save_png(entry.observation, stem.with_suffix(".png"))
                stem.with_suffix(".txt").write_text(
                    encode_trajectory_text(entry.trajectory) + "\n"
                )
                stem.with_suffix(".json").write_text(
                    json.dumps(
                        {
                            "task": entry.task,
                            "seed": entry.seed,
                            "inserted_at": entry.inserted_at,
                            "is_demo": entry.is_demo,
                        },
                        sort_keys=True,
                    )
                )

    @classmethod
    def load(cls, dirpath, run_key: int = 0) -> "Archive":
        from .rendering import load_png

        archive = cls(run_key=run_key)
        root = Path(dirpath)
        metas = sorted(root.glob("entry_*.json"))
        for meta_path in metas:
            meta = json.loads(meta_path.read_text())
            stem = meta_path.with_suffix("")
            obs = load_png(stem.with_suffix(".png"))
            traj = parse_trajectory_text(stem.with_suffix(".txt").read_text())
            entry = ArchiveEntry(
                observation=obs,
                trajectory=traj,
                task=meta["task"],
                seed=meta["seed"],
                inserted_at=meta["inserted_at"],
                is_demo=meta["is_demo"],
            )
            archive._by_task.setdefault(entry.task, []).append(entry)
            archive._counter = max(archive._counter, entry.inserted_at + 1)
        for entries in archive._by_task.values():
            entries.sort(key=lambda e: e.inserted_at)
        return archive
