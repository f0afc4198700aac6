"""Randomised invariants across modules."""
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import ref_step
from orbitfuse import dynamics
from orbitfuse.camera import CameraConfig, observe_arrays, project_arrays
from orbitfuse.codec import SymbolicState, loss_obs
from orbitfuse.dynamics import SceneConfig
from orbitfuse.estimator import fuse, rollout

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def coords(n):
    return arrays(np.float64, (n, 3), elements=finite)


@st.composite
def state_pairs(draw):
    n = draw(st.integers(1, 5))
    a = SymbolicState(draw(coords(n)), draw(coords(n)))
    b = SymbolicState(draw(coords(n)), draw(coords(n)))
    k = draw(arrays(np.float64, (n, 6), elements=st.floats(0, 1)))
    return a, b, k


@settings(max_examples=200, deadline=None)
@given(state_pairs())
def test_fuse_identities_and_convexity(pair):
    a, b, k = pair
    assert np.array_equal(fuse(a, b, 0.0).flat(), a.flat())
    assert np.array_equal(fuse(a, b, 1.0).flat(), b.flat())
    f = fuse(a, b, k).flat()
    assert np.all(f >= np.minimum(a.flat(), b.flat())) and np.all(f <= np.maximum(a.flat(), b.flat()))


@settings(max_examples=100, deadline=None)
@given(state_pairs())
def test_loss_obs_symmetric_nonnegative(pair):
    a, b, _ = pair
    x, y = float(loss_obs(a, b).data), float(loss_obs(b, a).data)
    assert x == y and x >= 0


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: st.tuples(coords(n), coords(n))), st.sampled_from(["2d", "3d"]))
def test_step_matches_oracle_and_conserves_pair_forces(pv, mode):
    p, v = pv
    cfg = SceneConfig(num_objects=len(p), mode=mode)
    if mode == "2d":
        p[:, 2] = 3.0
        v[:, 2] = 0.0
    np_p, np_v = dynamics.step_arrays(p, v, cfg)
    rp, rv = ref_step(p.tolist(), v.tolist(), 7.0, 1.5, 2.0, (0, 0, 0), cfg.dt, mode, eps=cfg.softening_epsilon)
    scale = 1 + np.abs(np.array(rv)).max()
    assert np.abs(np_v - np.array(rv)).max() <= 1e-12 * scale
    fm = dynamics.mutual_force_arrays(p, cfg)
    assert np.abs(fm.sum(axis=0)).max() <= 1e-12 * (1 + np.abs(fm).max())
    if mode == "2d":
        assert np.all(np_p[:, 2] == 3.0) and np.all(np_v[:, 2] == 0.0)


@settings(max_examples=50, deadline=None)
@given(coords(3), coords(3), st.integers(1, 8))
def test_rollout_equals_simulation(p, v, m):
    cfg = SceneConfig(num_objects=3, mode="3d")
    preds = rollout(SymbolicState(p, v), m, cfg)
    pos, _ = dynamics.simulate_arrays(p, v, cfg, m + 1)
    assert np.stack([s.position for s in preds]).tobytes() == pos[1:].tobytes()


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-3, 3)), st.integers(0, 2**32 - 1))
def test_noiseless_observation_is_projection(offsets, seed):
    cam = CameraConfig()
    pos = offsets + [0, 0, 6.0]
    obs = observe_arrays(pos, cam, 0.0, np.random.default_rng(seed))
    uv, _, vis = project_arrays(pos, cam)
    assert np.array_equal(obs.visibility, vis)
    assert np.array_equal(obs.screen_coords[vis], uv[vis])
