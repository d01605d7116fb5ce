import pytest

from reward_ensemble.dataset import CorruptionConfig, build_qa_dataset, forge_dataset
from reward_ensemble.env import load_world
from reward_ensemble.estimator import ScriptedEstimator, default_personas


@pytest.fixture(scope="session")
def world():
    return load_world()


@pytest.fixture(scope="session")
def small_trajs(world):
    return forge_dataset(world, world.tasks, CorruptionConfig(per_task=6), seed=3)


@pytest.fixture(scope="session")
def qa_pairs(world, small_trajs):
    return build_qa_dataset(small_trajs, world)


@pytest.fixture
def clean_hub(world):
    return ScriptedEstimator(world, default_personas(5))


def task(world, tid):
    return world.task_by_id[tid]


def keys(world, ids):
    return [world.actions[a].key for a in ids]


def ids(world, *ks):
    return [world.action_id(k) for k in ks]


@pytest.fixture(scope="session")
def annotated_small(world, small_trajs, qa_pairs):
    from reward_ensemble.consistency import annotate_dataset
    hub = ScriptedEstimator(world, default_personas(5, flip_rate=0.2, qa_error_rate=0.1, verify_error_rate=0.1, seed=2))
    return annotate_dataset(small_trajs, hub, qa_pairs).trajectories


def sampled_gradcheck(f, params, grads, rng, n_coords=12, eps=1e-6):
    """Relative error between analytic and central-difference derivatives.

    Compares the vector of derivatives at a random subset of coordinates, and separately
    the derivative along one random direction through all parameters; returns the worse.
    """
    import numpy as np
    from reward_ensemble.nn import relative_error
    nums, anas = [], []
    live = [(k, idx) for k, g in enumerate(grads) for idx in zip(*np.nonzero(g))]
    for i in range(n_coords):
        # half the probes hit coordinates with a nonzero analytic derivative, half are uniform
        if i % 2 == 0 and live:
            k, idx = live[int(rng.integers(len(live)))]
            idx = tuple(int(j) for j in idx)
        else:
            k = int(rng.integers(len(params)))
            idx = tuple(int(rng.integers(s)) for s in params[k].shape)
        p, g = params[k], grads[k]
        old = p[idx]
        p[idx] = old + eps
        hi = f()
        p[idx] = old - eps
        lo = f()
        p[idx] = old
        nums.append((hi - lo) / (2 * eps))
        anas.append(g[idx])
    dirs = [rng.standard_normal(p.shape) for p in params]
    for p, d in zip(params, dirs):
        p += eps * d
    hi = f()
    for p, d in zip(params, dirs):
        p -= 2 * eps * d
    lo = f()
    for p, d in zip(params, dirs):
        p += eps * d
    num = (hi - lo) / (2 * eps)
    ana = sum(float(np.sum(g * d)) for g, d in zip(grads, dirs))
    return max(relative_error(np.array(anas), np.array(nums)), relative_error(np.array([ana]), np.array([num])))


def channel_dataset(trajs, channel, seed):
    """Triples where only ``channel`` (index into C, S, T) tracks the success label; the others are noise."""
    import random
    from dataclasses import replace
    from reward_ensemble.dataset import RewardAnnotation
    rng = random.Random(seed)
    out = []
    for t in trajs:
        rw = []
        for _ in t.steps:
            tri = [rng.choice((-2, -1, 0, 1, 2)) for _ in range(3)]
            tri[channel] = 2 if t.f_s else -2
            rw.append(RewardAnnotation(*tri))
        out.append(replace(t, rewards=tuple(rw)))
    return out


# deterministic 3-state / 2-action MDP: (state, action) -> (next state, or None when terminal; reward)
SMALL_MDP = {(0, 0): (1, 0.0), (0, 1): (2, 0.5), (1, 0): (None, 1.0), (1, 1): (0, 0.0),
             (2, 0): (None, 0.0), (2, 1): (1, 0.2)}


def value_iteration(mdp, gamma, n_states=3, n_actions=2, iters=2000):
    import numpy as np
    Q = np.zeros((n_states, n_actions))
    for _ in range(iters):
        nxt = np.zeros_like(Q)
        for (s, a), (n, r) in mdp.items():
            nxt[s, a] = r + (0.0 if n is None else gamma * Q[n].max())
        Q = nxt
    return Q


def mdp_transitions(mdp, n_states=3):
    """Every (s, a) pair exactly once, states one-hot encoded."""
    import numpy as np
    from reward_ensemble.offline_rl import Transitions
    eye = np.eye(n_states)
    ks = sorted(mdp)
    return Transitions(eye[[s for s, _ in ks]], np.array([a for _, a in ks]), np.array([mdp[k][1] for k in ks]),
                       eye[[0 if mdp[k][0] is None else mdp[k][0] for k in ks]],
                       np.array([mdp[k][0] is None for k in ks]))
