import math

import numpy as np
import pytest

from locotron import autodiff as ad
from locotron.models import (
    ActionDistribution,
    Critic,
    ObsPolicy,
    PolicySpec,
    StatePolicy,
    TokenSequence,
    kl_divergence,
    positional_encoding,
)


def tiny_spec(**kw):
    base = dict(
        obs_dim=3, state_dim=5, action_dim=2, n_blocks=1, embed_dim=8,
        n_heads=2, context_len=4, obs_embed_hidden=(4,),
        action_head_hidden=(6,), state_mlp_hidden=(7,),
    )
    base.update(kw)
    return PolicySpec(**base)


def rand_sequence(rng, spec, n_valid=None):
    l = spec.context_len
    obs = rng.normal(size=(l, spec.obs_dim))
    act = rng.normal(size=(l, spec.action_dim))
    valid = np.ones(l, dtype=bool)
    if n_valid is not None:
        obs[: l - n_valid] = 0.0
        act[: l - n_valid] = 0.0
        valid[: l - n_valid] = False
    return obs, act, valid


# ---------------------------------------------------------------------------
# spec

def test_spec_validates_dims():
    with pytest.raises(ValueError):
        tiny_spec(embed_dim=9)  # not divisible by heads
    with pytest.raises(ValueError):
        tiny_spec(context_len=0)
    with pytest.raises(ValueError):
        tiny_spec(action_dim=0)


def test_paper_profile_dims():
    spec = PolicySpec.paper()
    assert spec.embed_dim == 192
    assert spec.n_blocks == 4
    assert spec.n_heads == 4
    assert spec.context_len == 16
    assert spec.head_dim == 48  # sqrt(d_k) = sqrt(192/4) per head
    assert spec.state_mlp_hidden == (512, 512, 256, 128)
    assert spec.obs_embed_hidden == (512, 512)
    assert spec.action_head_hidden == (256, 128)


# ---------------------------------------------------------------------------
# embedding and positional encoding

def test_embed_zero_pair_with_zeroed_final_layer():
    spec = tiny_spec()
    pol = ObsPolicy(spec, seed=1)
    pol.params["obs_policy.embed.w1"].data[...] = 0.0
    pol.params["obs_policy.embed.b1"].data[...] = 0.0
    zeros = np.zeros((1, spec.obs_dim + spec.action_dim))
    tok = pol.embed(ad.const(zeros))
    assert np.all(tok.data == 0.0)
    assert tok.shape == (1, spec.embed_dim)


def test_embed_dim_matches_paper_profile():
    pol = ObsPolicy(PolicySpec.paper(), seed=0)
    pair = np.zeros((1, 66 + 36))
    assert pol.embed(ad.const(pair)).shape == (1, 192)


def test_embed_distinct_inputs_distinct_tokens():
    spec = tiny_spec()
    pol = ObsPolicy(spec, seed=2)
    rng = np.random.default_rng(3)
    a = rng.normal(size=(1, spec.obs_dim + spec.action_dim))
    b = rng.normal(size=(1, spec.obs_dim + spec.action_dim))
    assert not np.allclose(pol.embed(ad.const(a)).data, pol.embed(ad.const(b)).data)


def test_positional_encoding_position_zero():
    pe = positional_encoding(4, 8)
    assert np.all(pe[0, 0::2] == 0.0)  # sin 0
    assert np.all(pe[0, 1::2] == 1.0)  # cos 0


def test_positional_encoding_deterministic():
    assert np.array_equal(positional_encoding(16, 192), positional_encoding(16, 192))


def test_positional_encoding_closed_form():
    pe = positional_encoding(2, 192)
    assert abs(pe[1, 0] - math.sin(1.0)) < 1e-12
    assert abs(pe[1, 0] - 0.84147) < 1e-5


# ---------------------------------------------------------------------------
# attention

def _identity_attention_block(spec):
    """Block dict with zero keys/queries and identity value/output maps."""
    d = spec.embed_dim
    blk = {}
    for nm in ("wq", "wk"):
        blk[nm] = ad.const(np.zeros((d, d)))
        blk[nm + "_b"] = ad.const(np.zeros(d))
    blk["wv"] = ad.const(np.eye(d))
    blk["wv_b"] = ad.const(np.zeros(d))
    blk["wo"] = ad.const(np.eye(d))
    blk["wo_b"] = ad.const(np.zeros(d))
    return blk


def test_attention_single_token_is_projected_value():
    spec = tiny_spec(context_len=1)
    pol = ObsPolicy(spec, seed=0)
    blk = _identity_attention_block(spec)
    x = ad.const(np.random.default_rng(4).normal(size=(1, 1, spec.embed_dim)))
    keep = np.ones((1, 1, 1), dtype=bool)
    out = pol._attention(blk, x, keep)
    assert np.allclose(out.data, x.data, atol=1e-12)


def test_attention_equal_keys_gives_running_mean():
    spec = tiny_spec()
    pol = ObsPolicy(spec, seed=0)
    blk = _identity_attention_block(spec)  # zero keys -> uniform over unmasked
    l = spec.context_len
    rng = np.random.default_rng(5)
    x = rng.normal(size=(1, l, spec.embed_dim))
    keep = np.broadcast_to(np.tril(np.ones((l, l), dtype=bool)), (1, l, l))
    out = pol._attention(blk, ad.const(x), keep)
    for t in range(l):
        assert np.allclose(out.data[0, t], x[0, : t + 1].mean(axis=0), atol=1e-12)


def test_attention_rows_sum_to_one_and_masked_zero():
    l = 6
    rng = np.random.default_rng(6)
    scores = rng.normal(size=(2, 3, l, l))
    valid = np.array([[False, False, True, True, True, True],
                      [True, True, True, True, True, True]])
    keep = np.tril(np.ones((l, l), dtype=bool))[None] & valid[:, None, :]
    w = ad.softmax_lastdim(ad.const(scores), mask=keep[:, None]).data
    assert np.all(w[~np.broadcast_to(keep[:, None], w.shape)] == 0.0)
    sums = w.sum(axis=-1)
    live = np.broadcast_to(keep[:, None].any(axis=-1), sums.shape)
    assert np.allclose(sums[live], 1.0, atol=1e-12)


# ---------------------------------------------------------------------------
# observation policy

def test_obs_policy_zero_action_head_gives_zero_mean():
    spec = tiny_spec()
    pol = ObsPolicy(spec, seed=7)
    last = len(spec.action_head_hidden)
    pol.params[f"obs_policy.action_head.w{last}"].data[...] = 0.0
    pol.params[f"obs_policy.action_head.b{last}"].data[...] = 0.0
    rng = np.random.default_rng(8)
    dist = pol.forward(*rand_sequence(rng, spec))
    assert np.all(dist.mean.data == 0.0)


def test_obs_policy_causality():
    # perturbing pair j leaves outputs at positions < j bit-identical
    spec = tiny_spec(context_len=6)
    pol = ObsPolicy(spec, seed=9)
    rng = np.random.default_rng(10)
    obs, act, valid = rand_sequence(rng, spec)
    base = pol.forward_tokens(obs, act, valid).data
    for j in range(spec.context_len):
        obs2 = obs.copy()
        obs2[j] += 1.0
        out = pol.forward_tokens(obs2, act, valid).data
        assert np.array_equal(out[0, :j], base[0, :j])
        assert not np.allclose(out[0, j], base[0, j])


def test_obs_policy_padding_mask_blocks_history():
    # padded (invalid) leading positions must not influence the live suffix
    spec = tiny_spec(context_len=5)
    pol = ObsPolicy(spec, seed=11)
    rng = np.random.default_rng(12)
    obs, act, valid = rand_sequence(rng, spec, n_valid=2)
    ref = pol.forward(obs, act, valid).mean.data
    obs2 = obs.copy()
    obs2[0] += 5.0  # perturb a masked pad slot
    out = pol.forward(obs2, act, valid).mean.data
    assert np.array_equal(ref, out)


def test_obs_policy_rejects_empty_sequence():
    spec = tiny_spec()
    pol = ObsPolicy(spec, seed=0)
    obs = np.zeros((spec.context_len, spec.obs_dim))
    act = np.zeros((spec.context_len, spec.action_dim))
    valid = np.zeros(spec.context_len, dtype=bool)
    with pytest.raises(ad.ShapeError):
        pol.forward(obs, act, valid)


def test_token_sequence_rolls_and_masks():
    spec = tiny_spec(context_len=3)
    seq = TokenSequence(spec)
    seq.append(np.ones(spec.obs_dim), np.zeros(spec.action_dim))
    obs, act, valid = seq.arrays()
    assert list(valid) == [False, False, True]
    seq.append(2 * np.ones(spec.obs_dim), np.zeros(spec.action_dim))
    seq.append(3 * np.ones(spec.obs_dim), np.zeros(spec.action_dim))
    seq.append(4 * np.ones(spec.obs_dim), np.zeros(spec.action_dim))
    obs, act, valid = seq.arrays()
    assert np.all(valid)
    assert obs[0, 0] == 2.0 and obs[-1, 0] == 4.0  # oldest dropped, newest last
    seq.reset()
    assert seq.arrays()[2].sum() == 0


def test_parameter_count_matches_hand_count():
    spec = tiny_spec(obs_dim=3, action_dim=2, n_blocks=1, embed_dim=8, n_heads=2,
                     obs_embed_hidden=(4,), action_head_hidden=(6,))
    pol = ObsPolicy(spec, seed=0)
    d = 8
    embed = (5 * 4 + 4) + (4 * d + d)
    attn = 4 * (d * d + d)
    hidden = int(2.0 * d)
    mlp = (d * hidden + hidden) + (hidden * d + d)
    lns = 3 * 2 * d  # ln1, ln2, final ln
    head = (d * 6 + 6) + (6 * 2 + 2)
    log_std = 2
    assert pol.parameter_count() == embed + attn + mlp + lns + head + log_std


@pytest.mark.xfail(
    strict=True,
    reason="stated layer sizes yield ~1.69M parameters; the quoted 1.4M total "
    "is not reachable with hidden sizes [512,512]/[256,128] at width 192x4",
)
def test_paper_profile_parameter_count_near_1p4m():
    pol = ObsPolicy(PolicySpec.paper(), seed=0)
    assert abs(pol.parameter_count() - 1.4e6) <= 0.1 * 1.4e6


def test_obs_policy_gradient_matches_finite_differences():
    # full forward pass through attention on a 2-token sequence, d=8
    spec = tiny_spec(context_len=2)
    pol = ObsPolicy(spec, seed=13)
    rng = np.random.default_rng(14)
    obs, act, valid = rand_sequence(rng, spec)
    coeff = rng.normal(size=spec.action_dim)

    def loss_value():
        dist = pol.forward(obs, act, valid)
        return float(np.sum(dist.mean.data[0] * coeff))

    with ad.record():
        dist = pol.forward(obs, act, valid)
        loss = ad.tsum(ad.mul(dist.mean, ad.const(coeff[None, :])))
        ad.backward(loss)

    h = 1e-6
    worst = 0.0
    for name, p in pol.named_parameters().items():
        if p.grad is None:
            continue
        analytic = p.grad.copy()
        numeric = np.zeros_like(analytic)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_value()
            flat[i] = orig - h
            dn = loss_value()
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - dn) / (2 * h)
        denom = np.linalg.norm(numeric) + 1e-12
        err = np.linalg.norm(analytic - numeric) / denom
        if np.linalg.norm(numeric) > 1e-8:
            worst = max(worst, err)
    assert worst < 1e-5


# ---------------------------------------------------------------------------
# state policy and critic

def test_state_policy_deterministic_and_shaped():
    spec = tiny_spec()
    pol = StatePolicy(spec, seed=15)
    s = np.random.default_rng(16).normal(size=(4, spec.state_dim))
    d1 = pol.forward(s)
    d2 = pol.forward(s)
    assert np.array_equal(d1.mean.data, d2.mean.data)
    assert d1.mean.shape == (4, spec.action_dim)


def test_state_policy_paper_widths():
    spec = PolicySpec.paper()
    pol = StatePolicy(spec, seed=0)
    widths = [pol.params[f"state_policy.w{i}"].data.shape for i in range(5)]
    assert widths == [(440, 512), (512, 512), (512, 256), (256, 128), (128, 36)]


def test_state_policy_rejects_wrong_dim():
    pol = StatePolicy(tiny_spec(), seed=0)
    with pytest.raises(ad.ShapeError):
        pol.forward(np.zeros((2, 99)))


def test_critic_zero_weights_zero_value():
    spec = tiny_spec()
    critic = Critic(spec, seed=17)
    for p in critic.params.values():
        p.data[...] = 0.0
    v = critic.forward(np.ones((3, spec.state_dim)))
    assert np.all(v.data == 0.0)
    assert v.shape == (3,)


def test_critic_consumes_state_dim_not_obs_dim():
    spec = tiny_spec(obs_dim=3, state_dim=5)
    critic = Critic(spec, seed=0)
    with pytest.raises(ad.ShapeError):
        critic.forward(np.zeros((1, spec.obs_dim)))
    critic.forward(np.zeros((1, spec.state_dim)))


def test_critic_sensitive_to_privileged_fields():
    spec = tiny_spec()
    critic = Critic(spec, seed=18)
    s = np.zeros((1, spec.state_dim))
    s2 = s.copy()
    s2[0, -1] = 0.5  # privileged tail entry (e.g. friction)
    assert critic.forward(s).data[0] != critic.forward(s2).data[0]


# ---------------------------------------------------------------------------
# distribution and KL

def test_distribution_sample_logprob_consistent():
    rng = np.random.default_rng(19)
    dist = ActionDistribution(rng.normal(size=(4, 3)), rng.uniform(-1, 0, size=3))
    a = dist.sample(rng)
    lp = dist.log_prob_np(a)
    assert np.all(np.isfinite(lp))
    lt = dist.log_prob(a)
    assert np.allclose(lt.data, lp, atol=1e-12)


def test_distribution_clamps_log_std():
    dist = ActionDistribution(np.zeros((1, 2)), np.array([-10.0, 4.0]))
    assert np.allclose(dist.log_std.data, [-5.0, 1.0])


def test_kl_identical_is_zero():
    rng = np.random.default_rng(20)
    mean = rng.normal(size=(5, 3))
    ls = rng.uniform(-1, 0.5, size=3)
    p = ActionDistribution(mean, ls)
    q = ActionDistribution(mean.copy(), ls.copy())
    assert np.all(np.abs(kl_divergence(p, q).data) < 1e-12)


def test_kl_mean_shift_closed_form():
    p = ActionDistribution(np.zeros((1, 1)), np.zeros(1))
    q = ActionDistribution(np.ones((1, 1)), np.zeros(1))
    assert abs(kl_divergence(p, q).data[0] - 0.5) < 1e-12


def test_kl_scale_closed_form():
    p = ActionDistribution(np.zeros((1, 1)), np.zeros(1))
    q = ActionDistribution(np.zeros((1, 1)), np.full(1, math.log(2.0)))
    expected = math.log(2.0) - 3.0 / 8.0
    assert abs(kl_divergence(p, q).data[0] - expected) < 1e-12
    assert abs(expected - 0.3181) < 1e-4


def test_kl_nonnegative_on_random_pairs():
    rng = np.random.default_rng(21)
    for _ in range(200):
        d = rng.integers(1, 5)
        p = ActionDistribution(rng.normal(size=(1, d)), rng.uniform(-2, 1, size=d))
        q = ActionDistribution(rng.normal(size=(1, d)), rng.uniform(-2, 1, size=d))
        assert kl_divergence(p, q).data[0] >= -1e-12


def test_kl_gradient_reaches_student_only():
    spec = tiny_spec()
    student = StatePolicy(spec, seed=22)
    teacher = StatePolicy(spec, seed=23)
    s = np.random.default_rng(24).normal(size=(6, spec.state_dim))
    with ad.record():
        p = student.forward(s)
        tq = teacher.forward(s)
        q = ActionDistribution(tq.mean.detach(), tq.log_std.detach())
        ad.backward(ad.tmean(kl_divergence(p, q)))
    assert any(p_.grad is not None for p_ in student.params.values())
    assert all(p_.grad is None for p_ in teacher.params.values())
