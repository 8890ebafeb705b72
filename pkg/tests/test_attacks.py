import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import constant_net, linear_net
from drq.attacks import (PGD_ATTACK, PGD_NOISE, AttackConfig, CalibrationError, EotConfig,
                         fmn_calibrate, fmn_calibrate_batch, pgd_eot, pgd_targeted, pgd_untargeted,
                         random_noise_attack)
from drq.geometry import NormBall, norm
from drq.network import confidences, init_network, predict

ONE_STEP = AttackConfig(iterations=1, step_size=0.1)


def test_targeted_one_step_on_linear_net(lin):
    ball = NormBall("linf", [0.0, 0.0], 0.1)
    assert np.allclose(pgd_targeted(lin, np.zeros(2), 0, ball, ONE_STEP), [0.1, 0.0])


def test_untargeted_one_step_on_linear_net(lin):
    ball = NormBall("linf", [0.0, 0.0], 0.1)
    assert np.allclose(pgd_untargeted(lin, np.zeros(2), 0, ball, ONE_STEP), [-0.1, 0.0])


def test_zero_radius_returns_center(lin):
    x = np.array([0.3, -0.2])
    assert np.array_equal(pgd_targeted(lin, x, 1, NormBall("l2", x, 0.0)), x)


def test_constant_network_stalls():
    x = np.array([0.3, -0.2])
    assert np.array_equal(pgd_untargeted(constant_net(), x, 0, NormBall("l2", x, 1.0)), x)


def test_targeted_confidence_is_monotone_on_linear_net(lin):
    x = np.array([0.2, 0.0])
    ball = NormBall("linf", x, 0.5)
    values = [confidences(lin, pgd_targeted(lin, x, 0, ball, AttackConfig(iterations=k)))[0]
              for k in range(1, 8)]
    assert all(a <= b + 1e-15 for a, b in zip(values, values[1:]))


def test_linf_optimum_on_linear_classifier():
    net = linear_net(((0.5, -2.0), (0.0, 0.0)))
    ball = NormBall("linf", [0.0, 0.0], 0.3)
    out = pgd_targeted(net, np.zeros(2), 0, ball, AttackConfig(iterations=1, step_size=0.3))
    assert np.allclose(out, 0.3 * np.sign([0.5, -2.0]))


@given(st.integers(0, 500), st.sampled_from(["l2", "linf"]), st.floats(0.01, 2.0), st.booleans())
def test_attack_outputs_stay_in_ball_and_beat_the_start(seed, p, r, targeted):
    net = init_network((3, 8, 3), "tanh", seed=seed)
    x = np.random.default_rng(seed).normal(size=3)
    ball = NormBall(p, x, r)
    cls = int(predict(net, x))
    if targeted:
        cls = (cls + 1) % 3
        out = pgd_targeted(net, x, cls, ball, AttackConfig(iterations=10))
        assert confidences(net, out)[cls] >= confidences(net, x)[cls]
    else:
        out = pgd_untargeted(net, x, cls, ball, AttackConfig(iterations=10))
        assert confidences(net, out)[cls] <= confidences(net, x)[cls]
    assert norm(out - x, p) <= r + 1e-9


def test_attacks_are_reproducible(small_relu):
    x = np.array([0.5, -0.5, 1.0])
    ball = NormBall("linf", x, 0.4)
    cfg = AttackConfig(iterations=15, deterministic_start=False, seed=9)
    a = pgd_untargeted(small_relu, x, 0, ball, cfg)
    b = pgd_untargeted(small_relu, x, 0, ball, cfg)
    assert a.tobytes() == b.tobytes()
    e1 = pgd_eot(small_relu, x, 0, ball, AttackConfig(10), PGD_ATTACK)
    e2 = pgd_eot(small_relu, x, 0, ball, AttackConfig(10), PGD_ATTACK)
    assert e1.tobytes() == e2.tobytes()


def test_batch_rows_match_single_calls(small_relu):
    X = np.random.default_rng(2).normal(size=(4, 3))
    ball = NormBall("l2", X, 0.7)
    batch = pgd_eot(small_relu, X, np.array([0, 1, 2, 0]), ball, AttackConfig(10), PGD_NOISE,
                    sample_ids=np.arange(4))
    for k in range(4):
        one = pgd_eot(small_relu, X[k], [0, 1, 2, 0][k], NormBall("l2", X[k], 0.7), AttackConfig(10),
                      PGD_NOISE, sample_ids=k)
        assert np.allclose(batch[k], one, atol=1e-14)


def test_eot_without_noise_equals_plain_pgd(small_relu):
    x = np.array([0.2, 0.1, -0.3])
    ball = NormBall("linf", x, 0.3)
    plain = pgd_untargeted(small_relu, x, 1, ball, AttackConfig(12))
    eot = pgd_eot(small_relu, x, 1, ball, AttackConfig(12), EotConfig(1, 0, noise_radius=0.0))
    assert np.array_equal(plain, eot)


def test_eot_on_linear_net_equals_plain_pgd():
    net = linear_net(((1.0, 2.0), (-0.5, 0.0)))
    x = np.array([0.1, 0.1])
    ball = NormBall("l2", x, 0.5)
    plain = pgd_untargeted(net, x, 0, ball, AttackConfig(20))
    assert np.allclose(pgd_eot(net, x, 0, ball, AttackConfig(20), PGD_NOISE), plain, atol=1e-12)


def test_paper_eot_presets():
    assert (PGD_NOISE.noise_samples, PGD_NOISE.inner_iterations) == (10, 0)
    assert (PGD_ATTACK.noise_samples, PGD_ATTACK.inner_iterations) == (4, 7)


def test_random_noise_on_constant_net():
    net = constant_net()
    x = np.array([0.5, 0.5])
    ball = NormBall("l2", x, 1.0)
    ok, worst = random_noise_attack(net, x, ball, 1000, seed=3)
    from drq.attacks import _RANDOM, keyed_rng
    from drq.geometry import sample_ball
    first = sample_ball(ball, 1000, keyed_rng(3, 0, _RANDOM))[0]
    assert not ok and np.array_equal(worst, first)


def test_random_noise_zero_radius(lin):
    x = np.array([0.5, 0.0])
    ok, worst = random_noise_attack(lin, x, NormBall("linf", x, 0.0))
    assert not ok and np.array_equal(worst, x)


def test_random_noise_finds_nearby_boundary(lin):
    x = np.array([0.05, 0.0])
    ok, worst = random_noise_attack(lin, x, NormBall("linf", x, 0.5), 1000)
    assert ok and predict(lin, worst) == 1


@pytest.mark.parametrize("p", ["l2", "linf"])
@pytest.mark.parametrize("c", [0.5, 0.9, 0.99])
def test_fmn_matches_level_set_distance(lin, p, c):
    # z0 - z1 = 2 x0, so f_1 >= c exactly when x0 <= -ln(c / (1 - c)) / 2
    expected = 0.3 + np.log(c / (1 - c)) / 2
    _, eps = fmn_calibrate(lin, np.array([0.3, 0.0]), c, p)
    assert eps == pytest.approx(expected, rel=0.05)
    assert eps >= expected - 1e-9


def test_fmn_radius_grows_with_confidence(lin):
    x = np.array([[0.3, 0.0]])
    eps = [fmn_calibrate_batch(lin, x, c, "l2")[1][0] for c in (0.5, 0.9)]
    assert eps[1] > eps[0] > 0


def test_fmn_failure_raises():
    with pytest.raises(CalibrationError):
        fmn_calibrate(constant_net(), np.zeros(2), 0.5, "l2", max_radius=1.0)


def test_fmn_points_qualify(small_relu):
    X = np.random.default_rng(4).normal(size=(6, 3))
    pts, eps, found = fmn_calibrate_batch(small_relu, X, 0.6, "linf")
    assert found.any()
    assert np.all(np.isinf(eps[~found]))
    pts, X, eps = pts[found], X[found], eps[found]
    assert np.all(predict(small_relu, pts) != predict(small_relu, X))
    assert np.all(confidences(small_relu, pts).max(axis=1) >= 0.6)
    assert np.allclose(norm(pts - X, "linf"), eps)
