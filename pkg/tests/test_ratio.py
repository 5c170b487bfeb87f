import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiwlab.errors import InputError
from tiwlab.mixture import GaussianMixture, pooled_mixture
from tiwlab.net import Mlp
from tiwlab.ratio import (
    DatasetSplit,
    DiscTrainConfig,
    RatioModel,
    dre_mse,
    integrated_dre_error,
    load_ratio_model,
    oracle_ratio_model,
    save_ratio_model,
    train_discriminator,
)


@pytest.fixture(scope="module")
def oracle(sched_module, p_data_module, p_bias_module):
    return oracle_ratio_model(p_data_module, p_bias_module, sched_module)


# session fixtures are defined in conftest; re-expose at module scope
@pytest.fixture(scope="module")
def sched_module(request):
    return request.getfixturevalue("sched")


@pytest.fixture(scope="module")
def p_data_module(request):
    return request.getfixturevalue("p_data")


@pytest.fixture(scope="module")
def p_bias_module(request):
    return request.getfixturevalue("p_bias")


@pytest.fixture(scope="module")
def random_disc(sched_module):
    net = Mlp(2, [16, 16], 1, seed=33)
    return RatioModel(sched=sched_module, kind="learned", net=net)


# ---------------------------------------------------------------------------
# accessors
# ---------------------------------------------------------------------------

def test_zero_logit_gives_unit_ratio(sched_module):
    net = Mlp(2, [8], 1, params=np.zeros(Mlp(2, [8], 1).n_params))
    rm = RatioModel(sched=sched_module, kind="learned", net=net)
    x = np.array([0.4, -0.1])
    assert rm.ratio_w(x, 0.5) == 1.0
    assert rm.ratio_tilde(x, 0.5) == 1.0


def test_oracle_identical_mixtures_unit_ratio(sched_module, p_data_module):
    rm = oracle_ratio_model(p_data_module, p_data_module, sched_module)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 2))
    for t in (0.0, 0.3, 0.9):
        np.testing.assert_array_equal(rm.ratio_w(X, t), np.ones(30))
        np.testing.assert_array_equal(rm.grad_log_w(X, t), np.zeros((30, 2)))


def test_oracle_two_mode_ratio_near_zero_time(oracle):
    assert oracle.ratio_w(np.array([2.0, 2.0]), 0.0) == pytest.approx(5.0, rel=1e-5)


def test_tilde_against_direct_pooled_density(oracle, p_data_module, p_bias_module):
    # independent oracle: p_data / (half p_bias + half p_data), evaluated directly
    pool = pooled_mixture(p_bias_module, p_data_module)
    x = np.array([2.0, 2.0])
    direct = p_data_module.density(x) / pool.density(x)
    assert direct == pytest.approx(2.0 * 5.0 / 6.0, rel=1e-4)
    assert oracle.ratio_tilde(x, 0.0) == pytest.approx(direct, rel=1e-12)


def test_tilde_alpha_values(oracle):
    x = np.array([2.0, 2.0])
    assert oracle.ratio_tilde_alpha(x, 0.0, 0.0) == 1.0
    assert oracle.ratio_tilde_alpha(x, 0.0, 1.0) == oracle.ratio_tilde(x, 0.0)
    w = oracle.ratio_w(x, 0.0)
    assert oracle.ratio_tilde_alpha(x, 0.0, 0.5) == pytest.approx(
        2.0 * np.sqrt(w) / (1.0 + np.sqrt(w)), rel=1e-12
    )
    assert 2.0 * np.sqrt(5.0) / (1.0 + np.sqrt(5.0)) == pytest.approx(1.38197, rel=1e-5)


@settings(max_examples=40, deadline=None)
@given(st.floats(-40.0, 40.0))
def test_tilde_range_open_interval(logit_value):
    # 2*sigmoid of a clamped finite logit stays strictly inside (0, 2)
    clamped = np.clip(logit_value, -np.log(1000.0), np.log(1000.0))
    tilde = 2.0 / (1.0 + np.exp(-clamped))
    assert 0.0 < tilde < 2.0


def test_learned_log_ratio_is_logit_bitwise(random_disc):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 2))
    h = random_disc.logit(X, 0.4)
    assert np.all(np.abs(h) < random_disc.logit_clamp)  # random nets are mild
    np.testing.assert_array_equal(random_disc.log_ratio_w(X, 0.4), h)
    # the exp/log round trip only costs rounding, never a stability chain
    np.testing.assert_allclose(np.log(random_disc.ratio_w(X, 0.4)), h,
                               rtol=0, atol=1e-15)


@pytest.mark.parametrize("fixture_name", ["random_disc", "oracle"])
def test_tilde_algebraic_identity(fixture_name, request):
    rm = request.getfixturevalue(fixture_name)
    rng = np.random.default_rng(2)
    X = rng.normal(scale=2.0, size=(50, 2))
    for t in (0.05, 0.5, 0.95):
        w = rm.ratio_w(X, t)
        np.testing.assert_allclose(rm.ratio_tilde(X, t), 2.0 * w / (1.0 + w),
                                   rtol=1e-12)


def test_clamp_caps_learned_ratio(sched_module):
    net = Mlp(2, [4], 1, seed=3)
    net.params[:] = 0.0
    net.params[-1] = 50.0  # output bias pins the logit to 50
    rm = RatioModel(sched=sched_module, kind="learned", net=net)
    x = np.zeros(2)
    assert rm.logit(x, 0.5) == pytest.approx(50.0)
    assert rm.ratio_w(x, 0.5) == pytest.approx(1000.0)
    assert rm.ratio_tilde(x, 0.5) == pytest.approx(2000.0 / 1001.0, rel=1e-12)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def test_oracle_grad_is_score_difference(oracle, p_data_module, p_bias_module, sched_module):
    rng = np.random.default_rng(3)
    X = rng.normal(scale=2.0, size=(20, 2))
    t = 0.3
    expected = p_data_module.perturb(sched_module, t).score(X) - \
        p_bias_module.perturb(sched_module, t).score(X)
    np.testing.assert_array_equal(oracle.grad_log_w(X, t), expected)


def test_oracle_grad_matches_finite_difference(oracle):
    rng = np.random.default_rng(4)
    h = 1e-6
    for _ in range(20):
        x = rng.normal(scale=2.0, size=2)
        t = rng.uniform(0.05, 0.95)
        g = oracle.grad_log_w(x, t)
        fd = np.empty(2)
        for c in range(2):
            e = np.zeros(2)
            e[c] = h
            fd[c] = (np.log(oracle.ratio_w(x + e, t)) -
                     np.log(oracle.ratio_w(x - e, t))) / (2 * h)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_learned_grad_tilde_matches_finite_difference(random_disc):
    rng = np.random.default_rng(5)
    h = 1e-6
    for _ in range(20):
        x = rng.normal(size=2)
        t = rng.uniform(0.05, 0.95)
        g = random_disc.grad_log_tilde(x, t, alpha=1.0)
        fd = np.empty(2)
        for c in range(2):
            e = np.zeros(2)
            e[c] = h
            fd[c] = (np.log(random_disc.ratio_tilde(x + e, t)) -
                     np.log(random_disc.ratio_tilde(x - e, t))) / (2 * h)
        np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-10)


def test_grad_tilde_alpha_zero_is_zero(random_disc, oracle):
    x = np.array([0.7, -1.1])
    for rm in (random_disc, oracle):
        np.testing.assert_array_equal(rm.grad_log_tilde(x, 0.4, alpha=0.0), np.zeros(2))
        assert rm.ratio_tilde_alpha(x, 0.4, 0.0) == 1.0


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def test_indistinguishable_sources_drive_logits_to_zero(sched_module, p_data_module):
    split = DatasetSplit(bias_points=p_data_module.sample(600, seed=1),
                         ref_points=p_data_module.sample(600, seed=2))
    rm = train_discriminator(split, sched_module, DiscTrainConfig(steps=1200, seed=3))
    rng = np.random.default_rng(6)
    x0 = p_data_module.sample(400, seed=7)
    t = rng.uniform(sched_module.t_eps, 1.0, 400)
    x_t = sched_module.forward_sample(x0, t, rng.standard_normal(x0.shape))
    assert np.mean(np.abs(rm.logit(x_t, t))) < 0.5


def test_training_deterministic(tmp_path, sched_module, p_data_module, p_bias_module):
    split = DatasetSplit(bias_points=p_bias_module.sample(200, seed=1),
                         ref_points=p_data_module.sample(50, seed=2))
    cfg = DiscTrainConfig(steps=150, seed=9)
    a = train_discriminator(split, sched_module, cfg)
    b = train_discriminator(split, sched_module, cfg)
    save_ratio_model(a, tmp_path / "a.ckpt")
    save_ratio_model(b, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_empty_split_rejected():
    with pytest.raises(InputError):
        DatasetSplit(bias_points=np.zeros((0, 2)), ref_points=np.zeros((3, 2)))


def test_checkpoint_role_round_trip(tmp_path, sched_module, p_data_module, p_bias_module):
    split = DatasetSplit(bias_points=p_bias_module.sample(100, seed=1),
                         ref_points=p_data_module.sample(40, seed=2))
    rm = train_discriminator(split, sched_module,
                             DiscTrainConfig(steps=50, seed=4, time_dependent=False))
    path = tmp_path / "disc.ckpt"
    save_ratio_model(rm, path)
    clone = load_ratio_model(path, sched_module)
    assert clone.time_independent is True
    x = np.array([0.1, 0.2])
    assert clone.ratio_w(x, 0.7) == rm.ratio_w(x, 0.7)


def test_load_rejects_non_discriminator(tmp_path, sched_module):
    from tiwlab.net import save_net

    net = Mlp(2, [4], 1, seed=0)
    save_net(net, tmp_path / "plain.ckpt")
    with pytest.raises(InputError, match="role"):
        load_ratio_model(tmp_path / "plain.ckpt", sched_module)


# ---------------------------------------------------------------------------
# ratio-quality metrics
# ---------------------------------------------------------------------------

def test_dre_mse_zero_against_itself(oracle, p_data_module, p_bias_module):
    pool = pooled_mixture(p_data_module, p_bias_module)
    assert dre_mse(oracle, oracle, pool, 0.4, 2000, seed=1) == 0.0


def test_integrated_error_oracle_vs_oracle_convention(oracle):
    scan = integrated_dre_error(oracle, oracle, oracle, np.linspace(0, 1, 5), n=500)
    assert scan.ratio == 1.0
    assert all(a >= 0.0 and b >= 0.0 for _, a, b in scan.per_t)
    assert len(scan.per_t) == 5


def test_integrated_error_grid_validation(oracle):
    with pytest.raises(InputError):
        integrated_dre_error(oracle, oracle, oracle, [0.5, 0.5], n=100)


def test_time_independent_model_ignores_query_time(sched_module, p_data_module, p_bias_module):
    rm = oracle_ratio_model(p_data_module, p_bias_module, sched_module,
                            time_independent=True)
    x = np.array([1.0, 1.0])
    assert rm.ratio_w(x, 0.9) == rm.ratio_w(x, 0.0)
    np.testing.assert_array_equal(rm.grad_log_w(x, 0.9), rm.grad_log_w(x, 0.0))


def test_dre_curve_decreases_up_to_one_inversion(sched_module, p_data_module,
                                                 p_bias_module, oracle):
    split = DatasetSplit(bias_points=p_bias_module.sample(1000, seed=50),
                         ref_points=p_data_module.sample(100, seed=51))
    rm = train_discriminator(split, sched_module,
                             DiscTrainConfig(steps=1500, seed=52))
    pool = pooled_mixture(p_data_module, p_bias_module)
    curve = [dre_mse(rm, oracle, pool, t, 10_000, seed=53)
             for t in (0.0, 0.2, 0.4, 0.6, 0.8)]
    inversions = sum(1 for a, b in zip(curve, curve[1:]) if b > a)
    assert inversions <= 1, curve
