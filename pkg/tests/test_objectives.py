import math

import numpy as np
import pytest

import _gradsuite
from isoreg import objectives as O
from isoreg.errors import ConfigError, ContractViolation, DegenerateInputError
from isoreg.geometry import isotropy
from isoreg.model import ModelConfig, encode, init_params, log_probs
from isoreg.numcore import Tensor, grad, make_rng
from isoreg.training import AdamState, adam_step


# -- config ------------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        O.ObjectiveConfig(tau=0.0)
    with pytest.raises(ConfigError):
        O.ObjectiveConfig(lam=-1.0)
    with pytest.raises(ConfigError):
        O.ObjectiveConfig(use_cor=True, cov_variant="target-1")
    with pytest.raises(ConfigError):
        O.ObjectiveConfig(cov_variant="target-2")
    with pytest.raises(ConfigError):
        O.ObjectiveConfig.from_dict({"use_cl": True, "lambda": 1.0})


def test_weights_single_and_combined():
    assert O.ObjectiveConfig().weights() == (0.0, 0.0)
    assert O.ObjectiveConfig(use_cl=True, lam=1.7).weights() == (1.7, 0.0)
    assert O.ObjectiveConfig(use_cor=True, lam=0.04).weights() == (0.0, 0.04)
    assert O.ObjectiveConfig(cov_variant="target-1", lam=0.5).weights() == (0.0, 0.5)
    both = O.ObjectiveConfig(use_cl=True, use_cor=True, lam1=1.7, lam2=0.04)
    assert both.weights() == (1.7, 0.04)


def test_presets_hold_default_weights():
    assert O.PRESETS["cl"].lam == 1.7 and O.PRESETS["cl"].tau == 0.05
    assert O.PRESETS["cor"].lam == 0.04
    assert O.PRESETS["cl+cor"].weights() == (1.7, 0.04)


def test_config_round_trip():
    cfg = O.ObjectiveConfig(use_cl=True, lam=0.3, tau=0.1, l2_weight=1e-3)
    assert O.ObjectiveConfig.from_dict(cfg.to_dict()) == cfg


# -- cross entropy -------------------------------------------------------------------

def test_ce_examples():
    assert O.cross_entropy(np.full((3, 4), 0.25), [0, 1, 2]) == pytest.approx(math.log(4))
    assert O.cross_entropy([[0.0, 1.0, 0.0]], [1]) == 0.0
    assert O.cross_entropy([[0.7, 0.2, 0.1]], [0]) == pytest.approx(-math.log(0.7), abs=1e-12)
    assert O.cross_entropy([[0.7, 0.2, 0.1]], [0]) == pytest.approx(0.3567, abs=1e-4)


def test_ce_label_out_of_range():
    with pytest.raises(ContractViolation):
        O.cross_entropy([[0.5, 0.5]], [2])
    with pytest.raises(ContractViolation):
        O.cross_entropy_from_logits(Tensor(np.zeros((1, 2))), [-1])


def test_ce_from_logits_is_stable():
    val = O.cross_entropy_from_logits(Tensor(np.array([[1000.0, 0.0]])), [1]).item()
    assert val == pytest.approx(1000.0)


# -- CL-Reg --------------------------------------------------------------------------

def test_cl_single_row_is_zero():
    h = make_rng(0).normal(size=(1, 5))
    assert O.cl_reg(h, h * 2.0, 0.05).item() == 0.0


def test_cl_orthogonal_closed_forms():
    H = np.eye(2)
    assert O.cl_reg(H, H, 1.0).item() == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
    assert O.cl_reg(H, H, 1.0).item() == pytest.approx(0.3133, abs=1e-4)
    assert O.cl_reg(H, H, 0.05).item() == pytest.approx(math.log1p(math.exp(-20)), rel=1e-6)


def test_cl_matches_naive_oracle():
    rng = make_rng(1)
    H, Hp = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    tau = 0.2

    def cos(a, b):
        return a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    total = 0.0
    for i in range(6):
        num = math.exp(cos(H[i], Hp[i]) / tau)
        den = sum(math.exp(cos(H[i], Hp[j]) / tau) for j in range(6))
        total -= math.log(num / den)
    assert O.cl_reg(H, Hp, tau).item() == pytest.approx(total / 6, abs=1e-10)


def test_cl_row_scale_invariant():
    rng = make_rng(2)
    H, Hp = rng.normal(size=(8, 5)), rng.normal(size=(8, 5))
    a, b = rng.uniform(0.1, 10, size=(8, 1)), rng.uniform(0.1, 10, size=(8, 1))
    base = O.cl_reg(H, Hp, 0.05).item()
    assert O.cl_reg(H * a, Hp * b, 0.05).item() == pytest.approx(base, abs=1e-9)


def test_cl_zero_row_is_guarded():
    H = np.array([[0.0, 0.0], [1.0, 0.0]])
    g = grad(lambda P: O.cl_reg(P["h"], P["h"], 0.5), {"h": H})["h"]
    assert np.all(np.isfinite(g))


def test_cl_shape_mismatch():
    with pytest.raises(ContractViolation):
        O.cl_reg(np.ones((2, 3)), np.ones((3, 3)), 1.0)


def _unit_rows(H):
    return H / np.linalg.norm(H, axis=1, keepdims=True)


def test_cl_descent_raises_isotropy_of_rank_one_start():
    # CL-Reg only sees directions, so isotropy is measured on unit rows
    rng = make_rng(3)
    u = _unit_rows(rng.normal(size=(1, 8)))[0]
    H0 = np.outer(rng.choice([-1.0, 1.0], size=64), u) + 1e-3 * rng.normal(size=(64, 8))
    H = H0.copy()
    for _ in range(300):
        H = H - 0.1 * grad(lambda P: O.cl_reg(P["h"], P["h"], 0.1), {"h": H})["h"]
    assert isotropy(_unit_rows(H)) > isotropy(_unit_rows(H0)) + 0.1


# -- Cor-Reg -------------------------------------------------------------------------

def test_cor_zero_correlation():
    H = np.array([[1.0, 5], [-1, 5], [1, -5], [-1, -5]])
    assert O.cor_reg(H).item() == pytest.approx(0.0, abs=1e-5)


def test_cor_perfectly_correlated():
    x = make_rng(4).normal(size=10)
    H = np.stack([x, 3 * x + 1], axis=1)
    assert O.cor_reg(H).item() == pytest.approx(math.sqrt(2), abs=1e-6)


def test_cor_matches_entrywise_oracle():
    H = make_rng(5).normal(size=(16, 4))
    n = 16
    s = 0.0
    for a in range(4):
        for b in range(4):
            x, y = H[:, a] - H[:, a].mean(), H[:, b] - H[:, b].mean()
            cov = sum(x * y) / (n - 1)
            r = cov / math.sqrt((sum(x * x) / (n - 1) + 1e-8) * (sum(y * y) / (n - 1) + 1e-8))
            s += (r - (a == b)) ** 2
    assert O.cor_reg(H).item() == pytest.approx(math.sqrt(s + 1e-12), abs=1e-10)


def test_cor_squared_option():
    H = make_rng(6).normal(size=(16, 4))
    assert O.cor_reg(H, squared=True).item() == pytest.approx(O.cor_reg(H).item() ** 2, abs=1e-10)


def test_cor_affine_invariant_and_nonnegative():
    rng = make_rng(7)
    for _ in range(10):
        H = rng.normal(size=(12, 5))
        a, c = rng.uniform(0.2, 5, size=5), rng.normal(size=5) * 3
        assert O.cor_reg(H).item() >= 0
        assert O.cor_reg(H * a + c).item() == pytest.approx(O.cor_reg(H).item(), abs=1e-6)


def test_cor_needs_two_rows():
    with pytest.raises(DegenerateInputError):
        O.cor_reg(np.ones((1, 3)))


def test_cor_descent_on_free_matrix():
    P = {"h": make_rng(8).normal(size=(64, 8)) @ make_rng(9).normal(size=(8, 8))}
    start = O.cor_reg(P["h"]).item()
    state = AdamState.zeros_like(P)
    for _ in range(500):
        P, state = adam_step(P, grad(lambda Q: O.cor_reg(Q["h"]), P), state, 0.01)
    assert start > 1.0 and O.cor_reg(P["h"]).item() < 0.05


# -- Cov-Reg -------------------------------------------------------------------------

def _with_cov(C, n=64, seed=0):
    """Rows whose sample covariance is exactly ``C``."""
    Z = make_rng(seed).normal(size=(n, len(C)))
    Z = Z - Z.mean(axis=0)
    L = np.linalg.cholesky(np.cov(Z, rowvar=False))
    Z = Z @ np.linalg.inv(L).T
    w, Q = np.linalg.eigh(C)
    return Z @ (Q * np.sqrt(np.clip(w, 0, None))).T


def test_cov_examples():
    assert O.cov_reg(_with_cov(np.eye(3)), "target-1").item() == pytest.approx(0, abs=1e-5)
    assert O.cov_reg(_with_cov(2 * np.eye(2)), "target-mean").item() == pytest.approx(0, abs=1e-5)
    got = O.cov_reg(_with_cov(np.diag([2.0, 0.0])), "target-1").item()
    assert got == pytest.approx(math.sqrt(2), abs=1e-6)
    assert O.cov_reg(_with_cov(np.eye(2) * 0.5), "target-0.5").item() == pytest.approx(0, abs=1e-5)


def test_cov_target_mean_is_detached():
    H = make_rng(10).normal(size=(16, 3)) * [1.0, 2.0, 3.0]
    g = grad(lambda P: O.cov_reg(P["h"], "target-mean"), {"h": H})["h"]
    C = np.cov(H, rowvar=False)
    D = C - np.trace(C) / 3 * np.eye(3)
    Hc = H - H.mean(axis=0)
    ref = (2.0 / 15) * Hc @ D / np.linalg.norm(D)
    np.testing.assert_allclose(g, ref, atol=1e-8)


def test_cov_unknown_variant():
    with pytest.raises(ConfigError):
        O.cov_reg(np.ones((3, 2)), "target-2")


# -- L2 ----------------------------------------------------------------------------

def test_l2_examples():
    assert O.l2_penalty({"w": np.ones(3)}, 0.0).item() == 0.0
    assert O.l2_penalty({"w": np.array([3.0])}, 1.0).item() == 9.0


def test_l2_excludes_biases():
    p = init_params(ModelConfig(n_classes=3, vocab_size=16, d_emb=4, d_hidden=5, d_out=3,
                                batchnorm=True), 0)
    flat = sum(float(x) ** 2 for k in ("embedding", "w1", "w2", "head_w")
               for x in p.arrays[k].ravel())
    assert O.l2_penalty(p, 0.5).item() == pytest.approx(0.5 * flat, abs=1e-12)


def test_l2_negative_weight():
    with pytest.raises(ConfigError):
        O.l2_penalty({"w": np.ones(2)}, -1.0)


# -- joint loss --------------------------------------------------------------------

@pytest.fixture
def batch():
    cfg = ModelConfig(n_classes=3, vocab_size=32, d_emb=4, d_hidden=6, d_out=4)
    p = init_params(cfg, 1)
    rng = make_rng(2)
    seqs = [rng.integers(0, 32, size=3) for _ in range(8)]
    return p, seqs, rng.integers(0, 3, size=8)


def test_joint_ce_only(batch):
    p, seqs, y = batch
    res = O.joint_loss(p, seqs, y, O.ObjectiveConfig(), make_rng(0))
    h = encode(p, seqs, train=True, rng=make_rng(0))
    ce = -(log_probs(p, h)[np.arange(8), y]).mean().item()
    assert res.breakdown.total == res.breakdown.ce == pytest.approx(ce, abs=1e-12)


def test_joint_cor_matches_components(batch):
    p, seqs, y = batch
    res = O.joint_loss(p, seqs, y, O.PRESETS["cor"], make_rng(0))
    h = encode(p, seqs, train=True, rng=make_rng(0))
    b = res.breakdown
    assert b.cor == pytest.approx(O.cor_reg(h).item(), abs=1e-12)
    assert b.total == pytest.approx(b.ce + 0.04 * b.cor, abs=1e-12)


def test_joint_sum_invariant(batch):
    p, seqs, y = batch
    b = O.joint_loss(p, seqs, y, O.PRESETS["cl+cor"], make_rng(0)).breakdown
    assert b.total == pytest.approx(b.ce + 1.7 * b.cl + 0.04 * b.cor, abs=1e-12)
    assert set(b.times) == {"ce", "cl", "cor"} and all(t >= 0 for t in b.times.values())


def test_joint_single_cl_uses_lam(batch):
    p, seqs, y = batch
    cfg = O.ObjectiveConfig(use_cl=True, lam=0.3, tau=0.1)
    b = O.joint_loss(p, seqs, y, cfg, make_rng(0)).breakdown
    assert b.total == pytest.approx(b.ce + 0.3 * b.cl, abs=1e-12)


def test_joint_cov_and_l2(batch):
    p, seqs, y = batch
    cfg = O.ObjectiveConfig(cov_variant="target-0.5", lam=0.2, l2_weight=1e-3)
    b = O.joint_loss(p, seqs, y, cfg, make_rng(0)).breakdown
    assert b.l2 == pytest.approx(O.l2_penalty(p, 1e-3).item())
    assert b.total == pytest.approx(b.ce + 0.2 * b.cov + b.l2, abs=1e-12)


def test_joint_regularizer_needs_two_rows(batch):
    p, seqs, y = batch
    with pytest.raises(DegenerateInputError):
        O.joint_loss(p, seqs[:1], y[:1], O.PRESETS["cor"], make_rng(0))
    with pytest.raises(ContractViolation):
        O.joint_loss(p, [], [], O.ObjectiveConfig(), make_rng(0))


def test_breakdown_json_fields(batch):
    import json
    p, seqs, y = batch
    b = O.joint_loss(p, seqs, y, O.PRESETS["cl+cor"], make_rng(0)).breakdown
    rec = json.loads(b.to_json(7))
    assert list(rec)[:8] == ["step", "ce", "cl", "cor", "cov", "l2", "total", "t_ce"]
    assert rec["step"] == 7


# -- gradients through the encoder ---------------------------------------------------

@pytest.mark.parametrize("name", _gradsuite.LOSSES)
def test_gradients_through_encoder(name):
    worst = max(_gradsuite.check(name, s) for s in range(20))
    assert worst <= 1e-4
