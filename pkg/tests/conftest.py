from __future__ import annotations

import pytest

from sail.archive import Archive
from sail.simulator import SimEnv
from sail.tasks import TASKS, get_task, template_trajectory

DEMO_SEEDS = (10007, 10013, 10039)


def make_env(task_name: str, **kwargs) -> SimEnv:
    return SimEnv(get_task(task_name), **kwargs)


def golden_trajectory(task_name: str, seed: int):
    """Noise-free template for the true object positions of (task, seed)."""
    spec = get_task(task_name)
    env = SimEnv(spec)
    state, obs, _ = env.reset(seed)
    truth = {label: obj.position for label, obj in state.objects.items()}
    return template_trajectory(spec, truth), state, obs


def seeded_archive(task_name: str, demo_seeds=DEMO_SEEDS) -> Archive:
    spec = get_task(task_name)
    env = SimEnv(spec)
    archive = Archive()
    for ds in demo_seeds:
        traj, state, obs = golden_trajectory(task_name, ds)
        rollout = env.execute(state, traj)
        assert rollout.verified_success
        archive.add(obs, traj, spec.task, ds, is_demo=True)
    return archive


@pytest.fixture(params=sorted(TASKS))
def task_name(request) -> str:
    return request.param
