"""Policy networks: causal-transformer observation policy, MLP state policy,
and the state-fed critic.

All three are parameter containers over the autodiff Tensor type; forward
passes run graph-free during rollouts and on-tape during updates.
"""

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad

LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0
LOG_STD_INIT = math.log(0.5)


@dataclass
class PolicySpec:
    """Architecture hyperparameters for both policies and the critic."""

    obs_dim: int
    state_dim: int
    action_dim: int
    n_blocks: int = 4
    embed_dim: int = 192
    n_heads: int = 4
    mlp_ratio: float = 2.0
    context_len: int = 16
    obs_embed_hidden: tuple = (512, 512)
    action_head_hidden: tuple = (256, 128)
    state_mlp_hidden: tuple = (512, 512, 256, 128)
    obs_value_head: bool = False

    def __post_init__(self):
        self.obs_embed_hidden = tuple(self.obs_embed_hidden)
        self.action_head_hidden = tuple(self.action_head_hidden)
        self.state_mlp_hidden = tuple(self.state_mlp_hidden)
        if self.embed_dim % self.n_heads != 0:
            raise ValueError("embed_dim must be divisible by n_heads")
        if self.context_len < 1:
            raise ValueError("context_len must be >= 1")
        for name in ("obs_dim", "state_dim", "action_dim", "n_blocks",
                     "embed_dim", "n_heads"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def head_dim(self):
        return self.embed_dim // self.n_heads

    def to_dict(self):
        return asdict(self)

    @classmethod
    def desk(cls, obs_dim, state_dim, action_dim, **overrides):
        """Small profile for CPU training runs."""
        kw = dict(
            n_blocks=2, embed_dim=64, n_heads=2, context_len=16,
            obs_embed_hidden=(128, 128), action_head_hidden=(128, 64),
            state_mlp_hidden=(256, 256, 128),
        )
        kw.update(overrides)
        return cls(obs_dim, state_dim, action_dim, **kw)

    @classmethod
    def paper(cls, obs_dim=66, state_dim=440, action_dim=36, **overrides):
        """Full-size profile (reference dims; not trained at desk scale)."""
        return cls(obs_dim, state_dim, action_dim, **overrides)


class ActionDistribution:
    """Diagonal Gaussian over actions; log_std is state-independent."""

    def __init__(self, mean, log_std):
        self.mean = mean if isinstance(mean, ad.Tensor) else ad.const(mean)
        raw = log_std if isinstance(log_std, ad.Tensor) else ad.const(log_std)
        self.log_std = ad.clip(raw, LOG_STD_MIN, LOG_STD_MAX)

    @property
    def action_dim(self):
        return self.mean.shape[-1]

    def mean_np(self):
        return self.mean.data

    def std_np(self):
        return np.exp(self.log_std.data)

    def sample(self, rng):
        noise = rng.standard_normal(self.mean.shape)
        return self.mean.data + self.std_np() * noise

    def log_prob_np(self, actions):
        """Log density of `actions` (ndarray path for rollouts)."""
        std = self.std_np()
        z = (actions - self.mean.data) / std
        d = self.action_dim
        return (-0.5 * np.sum(z * z, axis=-1)
                - np.sum(self.log_std.data)
                - 0.5 * d * math.log(2.0 * math.pi))

    def log_prob(self, actions):
        """Log density as a Tensor (differentiable w.r.t. mean and log_std)."""
        a = ad.const(np.asarray(actions, dtype=np.float64))
        diff = ad.sub(a, self.mean)
        inv_var = ad.exp(ad.mul(self.log_std, -2.0))
        quad = ad.sum_lastdim(ad.mul_rowvec(ad.square(diff), inv_var))
        d = self.action_dim
        out = ad.mul(quad, -0.5)
        out = ad.sub(out, ad.tsum(self.log_std))
        return ad.add(out, -0.5 * d * math.log(2.0 * math.pi))

    def entropy(self):
        """Per-sample entropy (scalar Tensor; identical across the batch)."""
        d = self.action_dim
        return ad.add(ad.tsum(self.log_std), 0.5 * d * (1.0 + math.log(2.0 * math.pi)))


def kl_divergence(p, q):
    """Closed-form KL(p || q) for diagonal Gaussians, summed over action dims.

    Returns a Tensor with the batch shape of the means. Gradients flow into
    p's parameters; pass q built from constants to keep a teacher frozen.
    """
    if p.action_dim != q.action_dim:
        raise ad.ShapeError("KL needs matching action dims")
    dlog = ad.sub(q.log_std, p.log_std)                      # [d]
    var_ratio = ad.exp(ad.mul(ad.sub(p.log_std, q.log_std), 2.0))
    inv_var_q = ad.exp(ad.mul(q.log_std, -2.0))
    diff2 = ad.square(ad.sub(p.mean, q.mean))                # [..., d]
    quad = ad.mul(ad.sum_lastdim(ad.mul_rowvec(diff2, inv_var_q)), 0.5)
    per_dim = ad.add(dlog, ad.mul(var_ratio, 0.5))           # [d]
    korr = ad.sub(ad.tsum(per_dim), 0.5 * p.action_dim)      # scalar
    return ad.add(quad, korr)


# ---------------------------------------------------------------------------
# parameter containers

class Module:
    def __init__(self):
        self.params = {}

    def _add(self, name, arr):
        t = ad.param(np.asarray(arr, dtype=np.float64))
        self.params[name] = t
        return t

    def named_parameters(self):
        return dict(self.params)

    def parameter_count(self):
        return sum(p.data.size for p in self.params.values())

    def load_parameters(self, blobs, prefix=""):
        for name, t in self.params.items():
            src = blobs[prefix + name]
            if src.shape != t.data.shape:
                raise ad.ShapeError(f"parameter '{name}' shape {src.shape} != {t.data.shape}")
            t.data[...] = src

    def copy_from(self, other):
        for name, t in self.params.items():
            t.data[...] = other.params[name].data


def _linear_init(rng, fan_in, fan_out, scale=1.0):
    w = rng.normal(0.0, scale / math.sqrt(fan_in), size=(fan_in, fan_out))
    return w, np.zeros(fan_out)


class _Mlp:
    """Plain MLP; owner registers the parameters under a prefix."""

    def __init__(self, owner, prefix, dims, rng, final_scale=1.0, hidden_act=ad.relu):
        self.hidden_act = hidden_act
        self.layers = []
        for i in range(len(dims) - 1):
            scale = final_scale if i == len(dims) - 2 else 1.0
            w, b = _linear_init(rng, dims[i], dims[i + 1], scale)
            self.layers.append((
                owner._add(f"{prefix}.w{i}", w),
                owner._add(f"{prefix}.b{i}", b),
            ))

    def __call__(self, x, final_act=None):
        for i, (w, b) in enumerate(self.layers):
            x = ad.add_rowvec(ad.matmul(x, w), b)
            if i < len(self.layers) - 1:
                x = self.hidden_act(x)
            elif final_act is not None:
                x = final_act(x)
        return x


class StatePolicy(Module):
    """Memoryless MLP policy on the privileged state, tanh-bounded mean."""

    def __init__(self, spec, seed=0):
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng(seed)
        dims = (spec.state_dim, *spec.state_mlp_hidden, spec.action_dim)
        self.mlp = _Mlp(self, "state_policy", dims, rng, final_scale=0.01)
        self.log_std = self._add("state_policy.log_std",
                                 np.full(spec.action_dim, LOG_STD_INIT))

    def forward(self, states):
        x = states if isinstance(states, ad.Tensor) else ad.const(states)
        if x.shape[-1] != self.spec.state_dim:
            raise ad.ShapeError(f"state dim {x.shape[-1]} != {self.spec.state_dim}")
        mean = self.mlp(x, final_act=ad.tanh)
        return ActionDistribution(mean, self.log_std)


class Critic(Module):
    """State-fed value function, used by both training phases."""

    def __init__(self, spec, seed=0):
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng(seed)
        dims = (spec.state_dim, *spec.state_mlp_hidden, 1)
        self.mlp = _Mlp(self, "critic", dims, rng)

    def forward(self, states):
        x = states if isinstance(states, ad.Tensor) else ad.const(states)
        if x.shape[-1] != self.spec.state_dim:
            raise ad.ShapeError(f"state dim {x.shape[-1]} != {self.spec.state_dim}")
        out = self.mlp(x)
        return ad.reshape(out, out.shape[:-1])


def positional_encoding(length, dim):
    """Sinusoidal table: PE[p, 2i] = sin(p / 10000^(2i/d)), PE[p, 2i+1] = cos."""
    pe = np.zeros((length, dim))
    pos = np.arange(length)[:, None].astype(np.float64)
    i2 = np.arange(0, dim, 2).astype(np.float64)
    angle = pos / np.power(10000.0, i2 / dim)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : pe[:, 1::2].shape[1]])
    return pe


class TokenSequence:
    """Rolling window of (observation, previous-action) pairs, newest last.

    Missing warm-up history is zero-padded on the left and masked so the
    attention never attends to it.
    """

    def __init__(self, spec):
        self.spec = spec
        self.obs = np.zeros((spec.context_len, spec.obs_dim))
        self.act = np.zeros((spec.context_len, spec.action_dim))
        self.count = 0

    def reset(self):
        self.obs[...] = 0.0
        self.act[...] = 0.0
        self.count = 0

    def append(self, obs, prev_action):
        if len(obs) != self.spec.obs_dim or len(prev_action) != self.spec.action_dim:
            raise ad.ShapeError("token pair dims do not match the policy spec")
        self.obs[:-1] = self.obs[1:]
        self.act[:-1] = self.act[1:]
        self.obs[-1] = obs
        self.act[-1] = prev_action
        self.count = min(self.count + 1, self.spec.context_len)

    def arrays(self):
        """(obs [l, obs_dim], act [l, act_dim], valid-mask [l]) views."""
        valid = np.zeros(self.spec.context_len, dtype=bool)
        if self.count:
            valid[-self.count:] = True
        return self.obs, self.act, valid


class ObsPolicy(Module):
    """Causal-transformer policy over observation-action histories.

    Pre-norm blocks; per-head scaled dot-product attention with a strict
    lower-triangular visibility pattern plus key-side padding mask; only the
    final position feeds the action head.
    """

    def __init__(self, spec, seed=0):
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng(seed)
        d = spec.embed_dim
        self.embed = _Mlp(self, "obs_policy.embed",
                          (spec.obs_dim + spec.action_dim, *spec.obs_embed_hidden, d),
                          rng)
        self.pe = positional_encoding(spec.context_len, d)
        hidden = int(round(spec.mlp_ratio * d))
        self.blocks = []
        for b in range(spec.n_blocks):
            pref = f"obs_policy.block{b}"
            blk = {
                "ln1_g": self._add(f"{pref}.ln1_g", np.ones(d)),
                "ln1_b": self._add(f"{pref}.ln1_b", np.zeros(d)),
                "ln2_g": self._add(f"{pref}.ln2_g", np.ones(d)),
                "ln2_b": self._add(f"{pref}.ln2_b", np.zeros(d)),
            }
            for nm in ("wq", "wk", "wv", "wo"):
                w, bias = _linear_init(rng, d, d)
                blk[nm] = self._add(f"{pref}.{nm}", w)
                blk[nm + "_b"] = self._add(f"{pref}.{nm}_b", bias)
            w1, b1 = _linear_init(rng, d, hidden)
            w2, b2 = _linear_init(rng, hidden, d)
            blk["mlp_w1"] = self._add(f"{pref}.mlp_w1", w1)
            blk["mlp_b1"] = self._add(f"{pref}.mlp_b1", b1)
            blk["mlp_w2"] = self._add(f"{pref}.mlp_w2", w2)
            blk["mlp_b2"] = self._add(f"{pref}.mlp_b2", b2)
            self.blocks.append(blk)
        self.lnf_g = self._add("obs_policy.lnf_g", np.ones(d))
        self.lnf_b = self._add("obs_policy.lnf_b", np.zeros(d))
        self.action_head = _Mlp(self, "obs_policy.action_head",
                                (d, *spec.action_head_hidden, spec.action_dim),
                                rng, final_scale=0.01, hidden_act=ad.tanh)
        self.log_std = self._add("obs_policy.log_std",
                                 np.full(spec.action_dim, LOG_STD_INIT))
        if spec.obs_value_head:
            self.value_head = _Mlp(self, "obs_policy.value_head",
                                   (d, *spec.action_head_hidden, 1), rng)
        # causal pattern: position i sees keys j <= i
        l = spec.context_len
        self.causal = np.tril(np.ones((l, l), dtype=bool))

    def _attention(self, blk, x, keep):
        spec = self.spec
        B, l, d = x.shape
        H, dk = spec.n_heads, spec.head_dim

        def heads(w, b):
            y = ad.add_rowvec(ad.matmul(x, w), b)
            return ad.swapaxes(ad.reshape(y, (B, l, H, dk)), 1, 2)

        q = heads(blk["wq"], blk["wq_b"])
        k = heads(blk["wk"], blk["wk_b"])
        v = heads(blk["wv"], blk["wv_b"])
        scores = ad.mul(ad.matmul(q, ad.swapaxes(k, 2, 3)), 1.0 / math.sqrt(dk))
        attn = ad.softmax_lastdim(scores, mask=keep[:, None, :, :])
        out = ad.matmul(attn, v)
        out = ad.reshape(ad.swapaxes(out, 1, 2), (B, l, d))
        return ad.add_rowvec(ad.matmul(out, blk["wo"]), blk["wo_b"])

    def forward_tokens(self, obs_ctx, act_ctx, valid):
        """Run the trunk; returns features for every position [B, l, d]."""
        obs_ctx = np.asarray(obs_ctx, dtype=np.float64)
        act_ctx = np.asarray(act_ctx, dtype=np.float64)
        valid = np.asarray(valid, dtype=bool)
        if obs_ctx.ndim == 2:
            obs_ctx, act_ctx, valid = obs_ctx[None], act_ctx[None], valid[None]
        B, l, _ = obs_ctx.shape
        if l > self.spec.context_len:
            raise ad.ShapeError(f"sequence length {l} exceeds context {self.spec.context_len}")
        if not valid.any(axis=1).all():
            raise ad.ShapeError("empty token sequence")
        pairs = np.concatenate([obs_ctx, act_ctx], axis=-1)
        tok = self.embed(ad.const(pairs))
        tok = ad.add(tok, ad.const(np.broadcast_to(self.pe[None, :l], tok.shape).copy()))
        keep = self.causal[None, :l, :l] & valid[:, None, :]
        for blk in self.blocks:
            a = self._attention(blk, ad.layer_norm(tok, blk["ln1_g"], blk["ln1_b"]), keep)
            tok = ad.add(tok, a)
            h = ad.layer_norm(tok, blk["ln2_g"], blk["ln2_b"])
            h = ad.add_rowvec(ad.matmul(h, blk["mlp_w1"]), blk["mlp_b1"])
            h = ad.relu(h)
            h = ad.add_rowvec(ad.matmul(h, blk["mlp_w2"]), blk["mlp_b2"])
            tok = ad.add(tok, h)
        return ad.layer_norm(tok, self.lnf_g, self.lnf_b)

    def forward(self, obs_ctx, act_ctx, valid, with_value=False):
        """Distribution for the newest position; optional value head output."""
        feats = self.forward_tokens(obs_ctx, act_ctx, valid)
        last = ad.select_index(feats, feats.shape[1] - 1, axis=1)
        mean = self.action_head(last, final_act=ad.tanh)
        dist = ActionDistribution(mean, self.log_std)
        if with_value:
            if not self.spec.obs_value_head:
                raise ValueError("spec has no obs-policy value head")
            val = self.value_head(last)
            return dist, ad.reshape(val, val.shape[:-1])
        return dist

    def forward_sequence(self, seq, with_value=False):
        obs_ctx, act_ctx, valid = seq.arrays()
        return self.forward(obs_ctx, act_ctx, valid, with_value=with_value)
