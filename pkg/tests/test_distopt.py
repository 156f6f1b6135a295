import numpy as np
import pytest

from byzfed.datagen import FleetConfig, WorkerShard, generate_fleet
from byzfed.distopt import AttackSpec, OptConfig, fed_avg_robust, pooled_auto_step, robust_gd
from byzfed.errors import ConfigError
from byzfed.localsolve import LossSpec, batch_objective, local_erm, local_gradient
from byzfed.robust_stats import AggregatorSpec

SQ = LossSpec("squared_error")


def _honest_cluster(rng, m=6, n=25, d=4, sigma=0.0, theta=None):
    theta = rng.standard_normal(d) if theta is None else theta
    shards = []
    for i in range(m):
        X = rng.standard_normal((n, d))
        y = X @ theta + sigma * rng.standard_normal(n)
        shards.append(WorkerShard(machine_id=i, X=X, y=y, true_cluster=0))
    return shards, theta


def _with_byzantine(rng, shards, n_byz, offset=25.0):
    """Append machines whose shards answer to a far-away model."""
    d = shards[0].X.shape[1]
    bad = []
    for j in range(n_byz):
        X = rng.standard_normal((shards[0].n, d))
        y = X @ (offset * np.ones(d))
        bad.append(WorkerShard(machine_id=len(shards) + j, X=X, y=y, true_cluster=None))
    return shards + bad


# ---------------------------------------------------------------------------
# convergence on clean data


def test_single_machine_reaches_its_erm(rng):
    shards, _ = _honest_cluster(rng, m=1, n=40, d=5, sigma=0.7)
    w, traj = robust_gd(shards, SQ, OptConfig(max_rounds=500))
    erm = local_erm(shards[0], SQ)
    assert np.linalg.norm(w - erm) < 1e-6
    assert traj.shape[1] == 5


@pytest.mark.parametrize(
    "agg",
    [
        AggregatorSpec.sample_mean(),
        AggregatorSpec.trimmed(0.2),
        AggregatorSpec.median(),
        AggregatorSpec.geomedian(),
        AggregatorSpec.filtering(),
    ],
)
def test_noiseless_cluster_recovers_truth_under_any_aggregator(rng, agg):
    shards, theta = _honest_cluster(rng, m=7, n=30, d=4, sigma=0.0)
    w, _ = robust_gd(shards, SQ, OptConfig(max_rounds=400, aggregator=agg))
    assert np.linalg.norm(w - theta) < 1e-6


def test_mean_aggregation_equals_pooled_gradient_descent(rng):
    shards, _ = _honest_cluster(rng, m=5, n=20, d=3, sigma=0.5)
    step = pooled_auto_step(shards, SQ)
    _, traj = robust_gd(shards, SQ, OptConfig(step_size=step, max_rounds=40, stop_tol=0.0))
    # reference: plain descent on the average of per-machine gradients
    w = np.zeros(3)
    for t in range(40):
        g = np.mean([local_gradient(s, SQ, w) for s in shards], axis=0)
        w = w - step * g
        np.testing.assert_allclose(traj[t + 1], w, atol=1e-9)


def test_descent_is_monotone_at_auto_step(rng):
    shards, _ = _honest_cluster(rng, m=6, n=15, d=6, sigma=0.4)
    _, traj = robust_gd(shards, SQ, OptConfig(max_rounds=60, stop_tol=0.0))
    objs = [np.mean([batch_objective(s, SQ, w) for s in shards]) for w in traj]
    assert all(b <= a + 1e-12 for a, b in zip(objs, objs[1:]))


def test_pooled_auto_step_matches_eigenvalue(rng):
    shards, _ = _honest_cluster(rng, m=3, n=30, d=4)
    H = sum(s.X.T @ s.X for s in shards) / sum(s.n for s in shards)
    lam = np.linalg.eigvalsh(H)[-1]
    assert pooled_auto_step(shards, SQ) == pytest.approx(1.0 / lam, rel=1e-5)
    assert pooled_auto_step(shards, LossSpec("location")) == 1.0


# ---------------------------------------------------------------------------
# robustness


def test_trimmed_mean_beats_plain_mean_under_corruption():
    wins = 0
    for seed in range(20):
        shards, truth = generate_fleet(
            FleetConfig(m=20, n=30, d=5, K=1, alpha=0.3, sigma=0.5, seed=seed)
        )
        theta = truth.centers[0]
        errs = {}
        for name, agg in [("sm", AggregatorSpec.sample_mean()), ("tm", AggregatorSpec.trimmed(0.3))]:
            w, _ = robust_gd(shards, SQ, OptConfig(max_rounds=150, aggregator=agg))
            errs[name] = np.linalg.norm(w - theta)
        wins += errs["tm"] < errs["sm"]
    assert wins >= 19


def test_filtering_aggregator_is_also_robust(rng):
    shards, theta = _honest_cluster(rng, m=14, n=30, d=5, sigma=0.3)
    shards = _with_byzantine(rng, shards, n_byz=4)
    w_f, _ = robust_gd(
        shards, SQ, OptConfig(max_rounds=150, aggregator=AggregatorSpec.filtering())
    )
    w_m, _ = robust_gd(shards, SQ, OptConfig(max_rounds=150))
    assert np.linalg.norm(w_f - theta) < 0.5 * np.linalg.norm(w_m - theta)


# ---------------------------------------------------------------------------
# federated averaging


def test_fed_avg_one_local_step_matches_robust_gd(rng):
    shards, _ = _honest_cluster(rng, m=8, n=20, d=4, sigma=0.6)
    shards = _with_byzantine(rng, shards, n_byz=2)
    for agg in [AggregatorSpec.sample_mean(), AggregatorSpec.trimmed(0.2)]:
        cfg = OptConfig(max_rounds=30, aggregator=agg, stop_tol=0.0)
        cfg_e1 = OptConfig(max_rounds=30, aggregator=agg, local_steps=1, stop_tol=0.0)
        _, t_gd = robust_gd(shards, SQ, cfg)
        _, t_fa = fed_avg_robust(shards, SQ, cfg_e1)
        np.testing.assert_allclose(t_fa, t_gd, atol=1e-9)


def test_fed_avg_multiple_local_steps_still_converges_clean(rng):
    shards, theta = _honest_cluster(rng, m=5, n=40, d=3, sigma=0.0)
    w, _ = fed_avg_robust(
        shards, SQ, OptConfig(max_rounds=200, local_steps=5, aggregator=AggregatorSpec.trimmed(0.2))
    )
    assert np.linalg.norm(w - theta) < 1e-6


# ---------------------------------------------------------------------------
# attack plumbing


def _one_byz_setup(rng):
    shards, _ = _honest_cluster(rng, m=2, n=15, d=3, sigma=0.2)
    shards = _with_byzantine(rng, shards, n_byz=1)
    return shards


def test_sign_flip_report_enters_the_mean(rng):
    shards = _one_byz_setup(rng)
    step = pooled_auto_step(shards, SQ)
    w, _ = robust_gd(
        shards, SQ, OptConfig(max_rounds=1), attack=AttackSpec.sign_flip(scale=3.0)
    )
    z = np.zeros(3)
    grads = [local_gradient(s, SQ, z) for s in shards]
    expected = -step * np.mean([grads[0], grads[1], -3.0 * grads[2]], axis=0)
    np.testing.assert_allclose(w, expected, atol=1e-12)


def test_constant_attack_sends_fixed_vector(rng):
    shards = _one_byz_setup(rng)
    step = pooled_auto_step(shards, SQ)
    v = np.array([5.0, -5.0, 5.0])
    w, _ = robust_gd(shards, SQ, OptConfig(max_rounds=1), attack=AttackSpec.constant(v))
    z = np.zeros(3)
    grads = [local_gradient(s, SQ, z) for s in shards]
    expected = -step * np.mean([grads[0], grads[1], v], axis=0)
    np.testing.assert_allclose(w, expected, atol=1e-12)


def test_none_attack_means_honest_protocol(rng):
    shards = _one_byz_setup(rng)
    w_none, _ = robust_gd(shards, SQ, OptConfig(max_rounds=20), attack=AttackSpec.none())
    w_own, _ = robust_gd(shards, SQ, OptConfig(max_rounds=20), attack=AttackSpec.own_corrupt_data())
    np.testing.assert_array_equal(w_none, w_own)


def test_random_gauss_attack_is_reproducible(rng):
    shards = _one_byz_setup(rng)
    atk = AttackSpec.random_gauss(scale=2.0, seed=13)
    w1, t1 = robust_gd(shards, SQ, OptConfig(max_rounds=15), attack=atk)
    w2, t2 = robust_gd(shards, SQ, OptConfig(max_rounds=15), attack=atk)
    np.testing.assert_array_equal(t1, t2)
    w3, _ = robust_gd(
        shards, SQ, OptConfig(max_rounds=15), attack=AttackSpec.random_gauss(scale=2.0, seed=14)
    )
    assert not np.array_equal(w1, w3)


def test_attacks_do_not_touch_honest_reports(rng):
    shards, theta = _honest_cluster(rng, m=5, n=30, d=3, sigma=0.0)
    w, _ = robust_gd(
        shards, SQ, OptConfig(max_rounds=300), attack=AttackSpec.sign_flip(scale=10.0)
    )
    assert np.linalg.norm(w - theta) < 1e-6


# ---------------------------------------------------------------------------
# stopping behavior


def test_stop_tol_ends_early(rng):
    shards, _ = _honest_cluster(rng, m=3, n=30, d=3, sigma=0.0)
    _, traj = robust_gd(shards, SQ, OptConfig(max_rounds=500, stop_tol=1e-10))
    assert traj.shape[0] - 1 < 500


def test_divergent_step_halts_at_bounded_iterate(rng):
    shards, _ = _honest_cluster(rng, m=3, n=10, d=3, sigma=0.5)
    big = 50.0 * pooled_auto_step(shards, SQ)
    w, traj = robust_gd(shards, SQ, OptConfig(step_size=big, max_rounds=400, stop_tol=0.0))
    assert traj.shape[0] - 1 < 400
    assert not np.all(np.isfinite(w)) or np.linalg.norm(w) > 1e12


def test_fed_avg_divergence_also_halts(rng):
    shards, _ = _honest_cluster(rng, m=3, n=10, d=3, sigma=0.5)
    big = 50.0 * pooled_auto_step(shards, SQ)
    w, traj = fed_avg_robust(
        shards, SQ, OptConfig(step_size=big, max_rounds=400, local_steps=3, stop_tol=0.0)
    )
    assert traj.shape[0] - 1 < 400


# ---------------------------------------------------------------------------
# validation


def test_opt_config_validation():
    for kwargs in [
        dict(step_size=0.0),
        dict(step_size=np.inf),
        dict(max_rounds=0),
        dict(local_steps=0),
        dict(stop_tol=-1.0),
    ]:
        with pytest.raises(ConfigError):
            OptConfig(**kwargs)


def test_attack_spec_validation():
    with pytest.raises(ConfigError):
        AttackSpec(kind="meteor")
    with pytest.raises(ConfigError):
        AttackSpec(kind="constant")
    with pytest.raises(ConfigError):
        AttackSpec(kind="sign_flip", scale=np.nan)


def test_robust_gd_validation(rng):
    with pytest.raises(ConfigError):
        robust_gd([], SQ, OptConfig())
    a = WorkerShard(0, rng.standard_normal((5, 2)), np.zeros(5), 0)
    b = WorkerShard(1, rng.standard_normal((5, 3)), np.zeros(5), 0)
    with pytest.raises(ConfigError):
        robust_gd([a, b], SQ, OptConfig())
    with pytest.raises(ConfigError):
        robust_gd([a], SQ, OptConfig(init=np.zeros(3)))
