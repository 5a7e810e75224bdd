"""Small recurrent actor-critic networks with hand-written reverse-mode gradients.

Everything is float64 numpy. A :class:`PolicyNet` is

    visual -> Dense -> ReLU -> Dense -> ReLU --\
                                                fuse -> GRU -> {actor_k, critic_k}
    audio  -> Dense -> ReLU -> Dense -> ReLU --/

with one categorical actor and one scalar critic per head. ``forward`` runs a
whole ``(T, B)`` rollout segment and ``backward`` does BPTT through it.
Dense weights are stored ``(out, in)`` and applied as ``x @ W.T + b``; the GRU
follows the common ``(reset, update, new)`` gate layout.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FUSIONS = ("concatenate", "elementwise_multiply")


class NonFiniteError(FloatingPointError):
    """A gradient, loss or activation is NaN or infinite."""


# ---------------------------------------------------------------------------
# primitive ops


def dense_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ValueError(f"dense shape mismatch: x {x.shape}, W {W.shape}, b {b.shape}")
    return x @ W.T + b


def dense_backward(W: np.ndarray, x: np.ndarray, gy: np.ndarray):
    """Returns ``(gx, gW, gb)`` for ``y = x @ W.T + b``; leading dims are batch."""
    x2 = x.reshape(-1, x.shape[-1])
    g2 = gy.reshape(-1, gy.shape[-1])
    return gy @ W, g2.T @ x2, g2.sum(axis=0)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def relu(x):
    return np.maximum(x, 0.0)


def gru_step(p: dict, x: np.ndarray, h: np.ndarray):
    """One GRU step. ``p`` holds ``W_ih (3H, D)``, ``W_hh (3H, H)``, ``b_ih``, ``b_hh``.

    Returns ``(h_new, cache)``.
    """
    H = h.shape[-1]
    if p["W_ih"].shape[1] != x.shape[-1] or p["W_hh"].shape != (3 * H, H):
        raise ValueError(f"gru shape mismatch: x {x.shape}, h {h.shape}, W_ih {p['W_ih'].shape}")
    gi = x @ p["W_ih"].T + p["b_ih"]
    return _gru_core(p, gi, h)


def _gru_core(p, gi, h):
    H = h.shape[-1]
    gh = h @ p["W_hh"].T + p["b_hh"]
    r = sigmoid(gi[..., :H] + gh[..., :H])
    z = sigmoid(gi[..., H:2 * H] + gh[..., H:2 * H])
    n = np.tanh(gi[..., 2 * H:] + r * gh[..., 2 * H:])
    h_new = (1.0 - z) * n + z * h
    return h_new, (h, r, z, n, gh[..., 2 * H:])


def _gru_core_backward(p, cache, dh_new, grads):
    """Backprop one step; accumulates ``W_hh``/``b_hh`` grads, returns ``(d_gi, dh)``."""
    h, r, z, n, ghn = cache
    dz = dh_new * (h - n)
    dn = dh_new * (1.0 - z)
    dh = dh_new * z
    dn_pre = dn * (1.0 - n * n)
    dr_pre = dn_pre * ghn * r * (1.0 - r)
    dz_pre = dz * z * (1.0 - z)
    d_gi = np.concatenate([dr_pre, dz_pre, dn_pre], axis=-1)
    d_gh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=-1)
    grads["W_hh"] += d_gh.T @ h
    grads["b_hh"] += d_gh.sum(axis=0)
    dh = dh + d_gh @ p["W_hh"]
    return d_gi, dh


def gru_step_backward(p: dict, x: np.ndarray, cache, dh_new: np.ndarray):
    """Gradients of one :func:`gru_step`; returns ``(dx, dh_prev, grads)``."""
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    d_gi, dh = _gru_core_backward(p, cache, dh_new, grads)
    grads["W_ih"] += d_gi.T @ x
    grads["b_ih"] += d_gi.sum(axis=0)
    return d_gi @ p["W_ih"], dh, grads


def log_softmax(logits: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(logits)):
        raise NonFiniteError("non-finite logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def categorical_head(W: np.ndarray, b: np.ndarray, s: np.ndarray):
    """Logits and probabilities of a linear categorical policy over features ``s``."""
    logits = dense_forward(W, b, s)
    return logits, np.exp(log_softmax(logits))


def sample(probs: np.ndarray, rng: np.random.Generator):
    """Inverse-CDF sampling, one draw per row. Returns ``(actions, logprobs)``."""
    probs = np.atleast_2d(probs)
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=-1)
    actions = np.minimum((u[:, None] * cdf[:, -1:] >= cdf).sum(axis=-1), probs.shape[-1] - 1)
    with np.errstate(divide="ignore"):
        logp = np.log(probs[np.arange(probs.shape[0]), actions])
    return actions, logp


def entropy(logp: np.ndarray) -> np.ndarray:
    return -(np.exp(logp) * logp).sum(axis=-1)


# ---------------------------------------------------------------------------
# parameters and optimizer


@dataclass
class ParameterStore:
    """Named float64 parameters with Adam moments."""

    params: dict[str, np.ndarray] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        self.params[name] = np.asarray(value, dtype=np.float64)
        self.m[name] = np.zeros_like(self.params[name])
        self.v[name] = np.zeros_like(self.params[name])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    @property
    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(p) for k, p in self.params.items()}

    def copy(self) -> "ParameterStore":
        return ParameterStore(
            {k: p.copy() for k, p in self.params.items()},
            {k: p.copy() for k, p in self.m.items()},
            {k: p.copy() for k, p in self.v.items()},
            self.step,
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k], dtype="<f8").tobytes())
        return h.hexdigest()


def global_norm(*grad_dicts) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for gd in grad_dicts for g in gd.values())))


def check_finite(grads: dict, where: str = "") -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {where}{name}")


def clip_grads(grad_dicts, max_norm: float | None) -> float:
    """Scale all gradients in place to a joint global norm of at most ``max_norm``.

    Returns the pre-clip norm.
    """
    norm = global_norm(*grad_dicts)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for gd in grad_dicts:
            for g in gd.values():
                g *= scale
    return norm


def adam_update(store: ParameterStore, grads: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-5, max_grad_norm: float | None = 0.5) -> float:
    """Clip by global norm, then one bias-corrected Adam step. Returns the pre-clip norm.

    Parameters without an entry in ``grads`` are left untouched.
    """
    check_finite(grads)
    for name, g in grads.items():
        if g.shape != store.params[name].shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {store.params[name].shape}")
    grads = {k: np.array(g, dtype=np.float64) for k, g in grads.items()}
    norm = clip_grads([grads], max_grad_norm)
    b1, b2 = betas
    store.step += 1
    c1 = 1.0 - b1**store.step
    c2 = 1.0 - b2**store.step
    for name, g in grads.items():
        m = store.m[name]
        v = store.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if lr != 0.0:
            store.params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return norm


# ---------------------------------------------------------------------------
# network


@dataclass(frozen=True)
class EncoderConfig:
    visual_hidden: int = 64
    audio_hidden: int = 64
    fusion: str = "concatenate"
    gru_hidden: int = 64

    def __post_init__(self):
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.fusion == "elementwise_multiply" and self.visual_hidden != self.audio_hidden:
            raise ValueError("elementwise fusion needs visual_hidden == audio_hidden")

    @property
    def embedding_width(self) -> int:
        if self.fusion == "concatenate":
            return self.visual_hidden + self.audio_hidden
        return self.visual_hidden


def parameter_count(cfg: EncoderConfig, n_visual: int, n_audio: int, heads: dict[str, int]) -> int:
    vh, ah, H, E = cfg.visual_hidden, cfg.audio_hidden, cfg.gru_hidden, cfg.embedding_width
    enc = (n_visual + 1) * vh + (vh + 1) * vh + (n_audio + 1) * ah + (ah + 1) * ah
    gru = 3 * H * (E + H + 2)
    return enc + gru + sum((H + 1) * n + (H + 1) for n in heads.values())


def _glorot(rng, n_out, n_in, scale=1.0):
    limit = np.sqrt(6.0 / (n_in + n_out))
    return scale * rng.uniform(-limit, limit, size=(n_out, n_in))


@dataclass
class ForwardCache:
    visual: np.ndarray
    audio: np.ndarray
    pre: dict
    emb: np.ndarray
    gru: list
    states: np.ndarray
    masks: np.ndarray


class PolicyNet:
    """Two-branch encoder, GRU core and one actor/critic pair per head."""

    def __init__(self, cfg: EncoderConfig, n_visual: int, audio_shape, heads: dict[str, int], seed: int = 0):
        self.cfg = cfg
        self.n_visual = int(n_visual)
        self.audio_shape = tuple(audio_shape)
        self.n_audio = int(np.prod(self.audio_shape))
        self.heads = dict(heads)
        rng = np.random.default_rng(seed)
        s = self.store = ParameterStore()
        vh, ah, H, E = cfg.visual_hidden, cfg.audio_hidden, cfg.gru_hidden, cfg.embedding_width
        for name, n_in, n_out in (("vis0", self.n_visual, vh), ("vis1", vh, vh), ("aud0", self.n_audio, ah), ("aud1", ah, ah)):
            s.add(f"{name}.W", _glorot(rng, n_out, n_in))
            s.add(f"{name}.b", np.zeros(n_out))
        s.add("gru.W_ih", _glorot(rng, 3 * H, E))
        s.add("gru.W_hh", _glorot(rng, 3 * H, H))
        s.add("gru.b_ih", np.zeros(3 * H))
        s.add("gru.b_hh", np.zeros(3 * H))
        for head, n in self.heads.items():
            s.add(f"actor.{head}.W", _glorot(rng, n, H, scale=0.01))
            s.add(f"actor.{head}.b", np.zeros(n))
            s.add(f"critic.{head}.W", _glorot(rng, 1, H))
            s.add(f"critic.{head}.b", np.zeros(1))

    @property
    def params(self) -> dict[str, np.ndarray]:
        return self.store.params

    @property
    def hidden_size(self) -> int:
        return self.cfg.gru_hidden

    def initial_state(self, batch: int) -> np.ndarray:
        return np.zeros((batch, self.cfg.gru_hidden))

    def _gru_params(self):
        p = self.params
        return {"W_ih": p["gru.W_ih"], "W_hh": p["gru.W_hh"], "b_ih": p["gru.b_ih"], "b_hh": p["gru.b_hh"]}

    def encode(self, visual: np.ndarray, audio: np.ndarray, pre: dict | None = None) -> np.ndarray:
        """Fused embedding for a batch of observations (leading dims arbitrary)."""
        p = self.params
        lead = visual.shape[:-1]
        if visual.shape[-1] != self.n_visual:
            raise ValueError(f"visual width {visual.shape[-1]} != {self.n_visual}")
        audio = audio.reshape(*lead, -1)
        if audio.shape[-1] != self.n_audio:
            raise ValueError(f"audio size {audio.shape[-1]} != {self.n_audio}")
        v1 = relu(dense_forward(p["vis0.W"], p["vis0.b"], visual))
        v2 = relu(dense_forward(p["vis1.W"], p["vis1.b"], v1))
        a1 = relu(dense_forward(p["aud0.W"], p["aud0.b"], audio))
        a2 = relu(dense_forward(p["aud1.W"], p["aud1.b"], a1))
        if pre is not None:
            pre.update(v1=v1, v2=v2, a1=a1, a2=a2)
        if self.cfg.fusion == "concatenate":
            return np.concatenate([v2, a2], axis=-1)
        return v2 * a2

    def heads_forward(self, states: np.ndarray):
        p = self.params
        logits, values = {}, {}
        for head in self.heads:
            logits[head] = dense_forward(p[f"actor.{head}.W"], p[f"actor.{head}.b"], states)
            values[head] = dense_forward(p[f"critic.{head}.W"], p[f"critic.{head}.b"], states)[..., 0]
        return logits, values

    def act(self, visual, audio, h, mask=None):
        """Single step for a batch of envs: returns ``(logits, values, h_new)``."""
        if mask is not None:
            h = h * np.asarray(mask, dtype=np.float64)[:, None]
        emb = self.encode(visual, audio)
        h_new, _ = gru_step(self._gru_params(), emb, h)
        logits, values = self.heads_forward(h_new)
        return logits, values, h_new

    def forward(self, visual: np.ndarray, audio: np.ndarray, h0: np.ndarray, masks: np.ndarray):
        """Run a ``(T, B)`` segment. ``masks[t]`` multiplies the state entering step ``t``.

        Returns ``(logits, values, cache)`` with per-head ``(T, B, n)`` logits
        and ``(T, B)`` values.
        """
        T, B = masks.shape
        pre = {}
        emb = self.encode(visual, audio, pre)
        gp = self._gru_params()
        gi_all = emb @ gp["W_ih"].T + gp["b_ih"]
        h = h0
        states = np.empty((T, B, self.cfg.gru_hidden))
        caches = []
        for t in range(T):
            h, c = _gru_core(gp, gi_all[t], h * masks[t][:, None])
            states[t] = h
            caches.append(c)
        logits, values = self.heads_forward(states)
        return logits, values, ForwardCache(visual, audio.reshape(T, B, -1), pre, emb, caches, states, masks)

    def backward(self, cache: ForwardCache, g_logits: dict, g_values: dict) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given its gradients w.r.t. logits and values."""
        p = self.params
        grads = self.store.zeros_like()
        T, B = cache.masks.shape
        H = self.cfg.gru_hidden
        d_states = np.zeros((T, B, H))
        for head in self.heads:
            if head in g_logits and g_logits[head] is not None:
                gx, gW, gb = dense_backward(p[f"actor.{head}.W"], cache.states, g_logits[head])
                grads[f"actor.{head}.W"] += gW
                grads[f"actor.{head}.b"] += gb
                d_states += gx
            if head in g_values and g_values[head] is not None:
                gv = g_values[head][..., None]
                gx, gW, gb = dense_backward(p[f"critic.{head}.W"], cache.states, gv)
                grads[f"critic.{head}.W"] += gW
                grads[f"critic.{head}.b"] += gb
                d_states += gx
        gp = self._gru_params()
        gg = {"W_hh": grads["gru.W_hh"], "b_hh": grads["gru.b_hh"]}
        d_gi = np.empty((T, B, 3 * H))
        dh = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            d_gi[t], dh_in = _gru_core_backward(gp, cache.gru[t], d_states[t] + dh, gg)
            dh = dh_in * cache.masks[t][:, None]
        d_emb, gW, gb = dense_backward(gp["W_ih"], cache.emb, d_gi)
        grads["gru.W_ih"] += gW
        grads["gru.b_ih"] += gb
        pre = cache.pre
        vh = self.cfg.visual_hidden
        if self.cfg.fusion == "concatenate":
            dv2, da2 = d_emb[..., :vh], d_emb[..., vh:]
        else:
            dv2, da2 = d_emb * pre["a2"], d_emb * pre["v2"]
        for branch, x, d_out in (("vis", cache.visual, dv2), ("aud", cache.audio, da2)):
            h1, h2 = pre[f"{branch[0]}1"], pre[f"{branch[0]}2"]
            d2 = d_out * (h2 > 0)
            d1, gW, gb = dense_backward(p[f"{branch}1.W"], h1, d2)
            grads[f"{branch}1.W"] += gW
            grads[f"{branch}1.b"] += gb
            d1 = d1 * (h1 > 0)
            _, gW, gb = dense_backward(p[f"{branch}0.W"], x, d1)
            grads[f"{branch}0.W"] += gW
            grads[f"{branch}0.b"] += gb
        return grads


# ---------------------------------------------------------------------------
# checkpoint container

CKPT_MAGIC = b"SAVNCKPT"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<8sI64sI")  # magic, version, config digest (hex), n arrays


def write_checkpoint(path, arrays: dict[str, np.ndarray], digest: str, meta: dict) -> None:
    """Versioned binary container of named little-endian float64 arrays plus JSON metadata."""
    digest_b = digest.encode("ascii")
    if len(digest_b) != 64:
        raise ValueError("config digest must be a 64-character hex string")
    meta_b = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, digest_b, len(arrays)))
        for name in sorted(arrays):
            a = np.ascontiguousarray(arrays[name], dtype="<f8")
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)) + nb)
            fh.write(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape))
            fh.write(a.tobytes())
        fh.write(struct.pack("<Q", len(meta_b)) + meta_b)


def read_checkpoint(path):
    """Inverse of :func:`write_checkpoint`: ``(arrays, digest, meta)``."""
    data = Path(path).read_bytes()
    if len(data) < _CKPT_HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint")
    magic, version, digest_b, n = _CKPT_HEADER.unpack_from(data, 0)
    if magic != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = _CKPT_HEADER.size
    arrays = {}
    try:
        for _ in range(n):
            (ln,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + ln].decode()
            off += ln
            (ndim,) = struct.unpack_from("<B", data, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}Q", data, off)
            off += 8 * ndim
            count = int(np.prod(shape)) if ndim else 1
            arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
            off += 8 * count
        (ln,) = struct.unpack_from("<Q", data, off)
        off += 8
        meta = json.loads(data[off:off + ln].decode())
        off += ln
    except (struct.error, ValueError) as exc:
        raise ValueError(f"{path}: corrupt checkpoint ({exc})") from exc
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return arrays, digest_b.decode("ascii"), meta


def store_to_arrays(store: ParameterStore, prefix: str) -> dict[str, np.ndarray]:
    out = {}
    for k in store.params:
        out[f"{prefix}/param/{k}"] = store.params[k]
        out[f"{prefix}/adam_m/{k}"] = store.m[k]
        out[f"{prefix}/adam_v/{k}"] = store.v[k]
    return out


def load_store_arrays(store: ParameterStore, arrays: dict, prefix: str, step: int) -> None:
    for k in store.params:
        try:
            p = arrays[f"{prefix}/param/{k}"]
        except KeyError:
            raise ValueError(f"checkpoint lacks parameter {prefix}/{k}") from None
        if p.shape != store.params[k].shape:
            raise ValueError(f"checkpoint parameter {prefix}/{k} has shape {p.shape}, expected {store.params[k].shape}")
        store.params[k] = p.copy()
        store.m[k] = arrays[f"{prefix}/adam_m/{k}"].copy()
        store.v[k] = arrays[f"{prefix}/adam_v/{k}"].copy()
    store.step = int(step)
