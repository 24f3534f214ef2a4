"""Tiny pre-LayerNorm decoder-only transformer with explicit backprop.

Each block computes ``x = x + attn(ln1(x))`` then ``x = x + mlp(ln2(x))``.
Tap ``l`` is the residual stream at the output of block ``l`` for every
token position; a transform installed at a tap rewrites the whole
``(batch, time, width)`` activation before block ``l + 1`` runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import ContextLengthError, DataError, DimensionError, TapError, VocabError
from ..tensor_core import SeededRng, log_softmax, softmax

Transform = Callable[[np.ndarray], np.ndarray]

LN_EPS = 1e-5
_GELU_K = np.sqrt(2.0 / np.pi)

BLOCK_PARAMS = ("ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "bo", "ln2_g", "ln2_b", "w1", "b1", "w2", "b2")


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _layer_norm_back(dy, g, cache):
    xhat, rstd = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def _gelu(u):
    t = np.tanh(_GELU_K * (u + 0.044715 * u ** 3))
    return 0.5 * u * (1.0 + t), t


def _gelu_back(du_out, u, t):
    dt = (1.0 - t * t) * _GELU_K * (1.0 + 3 * 0.044715 * u * u)
    return du_out * (0.5 * (1.0 + t) + 0.5 * u * dt)


@dataclass
class TinyTransformer:
    vocab_size: int
    width: int = 64
    n_layers: int = 4
    n_heads: int = 2
    context_length: int = 64
    params: dict[str, np.ndarray] = field(default_factory=dict)
    seed: int | None = None
    config_digest: str = ""

    kind = "transformer"

    def __post_init__(self):
        if self.width % self.n_heads:
            raise DimensionError("width must be divisible by the number of heads")
        if self.params:
            expected = dict(self._shapes())
            for name, shape in expected.items():
                if name not in self.params or self.params[name].shape != shape:
                    raise DimensionError(f"parameter {name} missing or not of shape {shape}")

    def _shapes(self):
        d, V = self.width, self.vocab_size
        yield "tok_emb", (V, d)
        yield "pos_emb", (self.context_length, d)
        for l in range(self.n_layers):
            for name, shape in (("ln1_g", (d,)), ("ln1_b", (d,)), ("wq", (d, d)), ("wk", (d, d)),
                                ("wv", (d, d)), ("wo", (d, d)), ("bo", (d,)), ("ln2_g", (d,)),
                                ("ln2_b", (d,)), ("w1", (d, 4 * d)), ("b1", (4 * d,)),
                                ("w2", (4 * d, d)), ("b2", (d,))):
                yield f"h{l}.{name}", shape
        yield "lnf_g", (d,)
        yield "lnf_b", (d,)
        yield "w_out", (d, V)
        yield "b_out", (V,)

    @classmethod
    def initialize(cls, vocab_size: int, rng: SeededRng, width: int = 64, n_layers: int = 4,
                   n_heads: int = 2, context_length: int = 64) -> "TinyTransformer":
        model = cls(vocab_size, width, n_layers, n_heads, context_length)
        params = {}
        residual_scale = 0.02 / np.sqrt(2 * n_layers)
        for name, shape in model._shapes():
            key = name.split(".")[-1]
            if key.endswith("_g"):
                params[name] = np.ones(shape)
            elif key.startswith("b") or key.endswith("_b"):
                params[name] = np.zeros(shape)
            elif key in ("wo", "w2"):
                params[name] = rng.normal(shape, scale=residual_scale)
            else:
                params[name] = rng.normal(shape, scale=0.02)
        model.params = params
        return model

    @property
    def taps(self) -> range:
        return range(self.n_layers)

    def tap_width(self, tap: int) -> int:
        self._check_tap(tap)
        return self.width

    def _check_tap(self, tap) -> None:
        if not isinstance(tap, (int, np.integer)) or tap not in self.taps:
            raise TapError(f"unknown tap {tap!r}; transformer taps are {list(self.taps)}")

    def _check_tokens(self, tokens) -> np.ndarray:
        idx = np.asarray(tokens, dtype=np.int64)
        if idx.ndim == 1:
            idx = idx[None, :]
        if idx.ndim != 2 or idx.shape[1] == 0:
            raise DimensionError(f"expected (batch, time) token array, got shape {idx.shape}")
        if idx.shape[1] > self.context_length:
            raise ContextLengthError(f"sequence length {idx.shape[1]} exceeds context {self.context_length}")
        if idx.min() < 0 or idx.max() >= self.vocab_size:
            raise VocabError(f"token id outside vocabulary of size {self.vocab_size}")
        return idx

    def _attention(self, a, p, l, cache=None):
        B, T, d = a.shape
        H = self.n_heads
        dh = d // H
        q = (a @ p[f"h{l}.wq"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        k = (a @ p[f"h{l}.wk"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        v = (a @ p[f"h{l}.wv"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        scale = 1.0 / np.sqrt(dh)
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale
        mask = np.triu(np.ones((T, T), dtype=bool), k=1)
        scores = np.where(mask, -np.inf, scores)
        probs = softmax(scores)
        o = (probs @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
        out = o @ p[f"h{l}.wo"] + p[f"h{l}.bo"]
        if cache is not None:
            cache.update(q=q, k=k, v=v, probs=probs, o=o, scale=scale)
        return out

    def forward_with_tap(self, tokens, tap: int | None = None, transform: Transform | None = None,
                         _caches: list | None = None, _dropout: tuple | None = None):
        """Logits ``(batch, time, vocab)`` plus the tapped residual stream.

        The captured activation is the block output before ``transform``;
        1-d token input is treated as a batch of one and returned squeezed.
        """
        squeeze = np.asarray(tokens).ndim == 1
        idx = self._check_tokens(tokens)
        if tap is not None:
            self._check_tap(tap)
        p = self.params
        T = idx.shape[1]
        x = p["tok_emb"][idx] + p["pos_emb"][:T]
        drop = None
        if _dropout is not None:
            rate, rng = _dropout
            keep = 1.0 - rate

            def drop(shape):
                return (rng.uniform(size=shape) < keep) / keep

            emb_mask = drop(x.shape)
            x = x * emb_mask
            _caches.append({"emb_mask": emb_mask})
        captured = None
        for l in range(self.n_layers):
            c = {} if _caches is not None else None
            a, ln1 = _layer_norm(x, p[f"h{l}.ln1_g"], p[f"h{l}.ln1_b"])
            att = self._attention(a, p, l, c)
            if drop is not None:
                c["att_mask"] = drop(att.shape)
                att = att * c["att_mask"]
            x = x + att
            m, ln2 = _layer_norm(x, p[f"h{l}.ln2_g"], p[f"h{l}.ln2_b"])
            u = m @ p[f"h{l}.w1"] + p[f"h{l}.b1"]
            g, t = _gelu(u)
            f = g @ p[f"h{l}.w2"] + p[f"h{l}.b2"]
            if drop is not None:
                c["mlp_mask"] = drop(f.shape)
                f = f * c["mlp_mask"]
            x = x + f
            if c is not None:
                c.update(a=a, ln1=ln1, m=m, ln2=ln2, u=u, g=g, t=t)
                _caches.append(c)
            if l == tap:
                captured = x
                if transform is not None:
                    x = transform(x)
                    if x.shape != captured.shape:
                        raise DimensionError("transform changed the activation shape")
        y, lnf = _layer_norm(x, p["lnf_g"], p["lnf_b"])
        logits = y @ p["w_out"] + p["b_out"]
        if _caches is not None:
            _caches.append({"y": y, "lnf": lnf, "idx": idx})
        if squeeze:
            logits = logits[0]
            captured = None if captured is None else captured[0]
        return logits, captured

    def forward(self, tokens) -> np.ndarray:
        return self.forward_with_tap(tokens)[0]

    def loss_and_grads(self, tokens, targets, weights=None, dropout: float = 0.0,
                       rng: SeededRng | None = None) -> tuple[float, dict[str, np.ndarray]]:
        """Weighted mean next-token cross-entropy and parameter gradients.

        ``targets`` has the same shape as ``tokens``; ``weights`` (default all
        ones) masks out positions such as padding.  With ``dropout > 0``,
        inverted dropout masks drawn from ``rng`` are applied to the
        embeddings and to both residual branches of every block.
        """
        idx = self._check_tokens(tokens)
        tgt = np.asarray(targets, dtype=np.int64).reshape(idx.shape)
        w = np.ones(idx.shape) if weights is None else np.asarray(weights, dtype=np.float64).reshape(idx.shape)
        total = w.sum()
        if total <= 0:
            raise DataError("no target positions to score")
        caches: list = []
        dropout_arg = None
        if dropout > 0:
            if rng is None:
                raise ValueError("dropout requires an rng")
            dropout_arg = (dropout, rng)
        logits, _ = self.forward_with_tap(idx, _caches=caches, _dropout=dropout_arg)
        emb_mask = caches.pop(0)["emb_mask"] if dropout_arg else None
        p = self.params
        B, T = idx.shape
        logp = log_softmax(logits)
        bi, ti = np.meshgrid(np.arange(B), np.arange(T), indexing="ij")
        loss = -float(np.sum(w * logp[bi, ti, tgt]) / total)
        dlogits = np.exp(logp)
        dlogits[bi, ti, tgt] -= 1.0
        dlogits *= (w / total)[..., None]

        grads = {name: np.zeros_like(v) for name, v in p.items()}
        fin = caches[-1]
        d = self.width
        grads["w_out"] = fin["y"].reshape(-1, d).T @ dlogits.reshape(-1, self.vocab_size)
        grads["b_out"] = dlogits.reshape(-1, self.vocab_size).sum(axis=0)
        dy = dlogits @ p["w_out"].T
        dx, grads["lnf_g"], grads["lnf_b"] = _layer_norm_back(dy, p["lnf_g"], fin["lnf"])
        H = self.n_heads
        dh = d // H
        for l in reversed(range(self.n_layers)):
            c = caches[l]
            # mlp branch
            dxf = dx * c["mlp_mask"] if "mlp_mask" in c else dx
            grads[f"h{l}.w2"] = c["g"].reshape(-1, 4 * d).T @ dxf.reshape(-1, d)
            grads[f"h{l}.b2"] = dxf.reshape(-1, d).sum(axis=0)
            dg = dxf @ p[f"h{l}.w2"].T
            du = _gelu_back(dg, c["u"], c["t"])
            grads[f"h{l}.w1"] = c["m"].reshape(-1, d).T @ du.reshape(-1, 4 * d)
            grads[f"h{l}.b1"] = du.reshape(-1, 4 * d).sum(axis=0)
            dm = du @ p[f"h{l}.w1"].T
            dxm, grads[f"h{l}.ln2_g"], grads[f"h{l}.ln2_b"] = _layer_norm_back(dm, p[f"h{l}.ln2_g"], c["ln2"])
            dx = dx + dxm
            # attention branch
            dxo = dx * c["att_mask"] if "att_mask" in c else dx
            grads[f"h{l}.wo"] = c["o"].reshape(-1, d).T @ dxo.reshape(-1, d)
            grads[f"h{l}.bo"] = dxo.reshape(-1, d).sum(axis=0)
            do = (dxo @ p[f"h{l}.wo"].T).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
            probs = c["probs"]
            dprobs = do @ c["v"].transpose(0, 1, 3, 2)
            dv = probs.transpose(0, 1, 3, 2) @ do
            dscores = probs * (dprobs - np.sum(dprobs * probs, axis=-1, keepdims=True))
            dq = (dscores @ c["k"]) * c["scale"]
            dk = (dscores.transpose(0, 1, 3, 2) @ c["q"]) * c["scale"]
            a2 = c["a"].reshape(-1, d)
            da = np.zeros_like(c["a"])
            for name, dval in (("wq", dq), ("wk", dk), ("wv", dv)):
                dflat = dval.transpose(0, 2, 1, 3).reshape(B, T, d)
                grads[f"h{l}.{name}"] = a2.T @ dflat.reshape(-1, d)
                da += dflat @ p[f"h{l}.{name}"].T
            dxa, grads[f"h{l}.ln1_g"], grads[f"h{l}.ln1_b"] = _layer_norm_back(da, p[f"h{l}.ln1_g"], c["ln1"])
            dx = dx + dxa
        if emb_mask is not None:
            dx = dx * emb_mask
        np.add.at(grads["tok_emb"], idx, dx)
        grads["pos_emb"][:T] = dx.sum(axis=0)
        return loss, grads

    def descriptor(self) -> dict:
        return {"kind": self.kind, "vocab_size": self.vocab_size, "width": self.width,
                "n_layers": self.n_layers, "n_heads": self.n_heads, "context_length": self.context_length}

    def parameters(self) -> list[np.ndarray]:
        return [self.params[name] for name, _ in self._shapes()]

    def param_shapes(self) -> list[tuple[int, ...]]:
        return [shape for _, shape in self._shapes()]

    @classmethod
    def from_arrays(cls, descriptor: dict, arrays: list[np.ndarray]) -> "TinyTransformer":
        model = cls(descriptor["vocab_size"], descriptor["width"], descriptor["n_layers"],
                    descriptor["n_heads"], descriptor["context_length"])
        model.params = {name: a for (name, _), a in zip(model._shapes(), arrays)}
        model.__post_init__()
        return model

    def copy(self) -> "TinyTransformer":
        return TinyTransformer(self.vocab_size, self.width, self.n_layers, self.n_heads, self.context_length,
                               {k: v.copy() for k, v in self.params.items()}, self.seed, self.config_digest)


def generate(model: TinyTransformer, prompt: Sequence[int], max_tokens: int = 16, steering=None,
             cache=None, stop_token: int | None = None) -> list[int]:
    """Greedy decoding; see :func:`generate_batch`."""
    return generate_batch(model, [prompt], max_tokens, steering, cache, stop_token)[0]


def generate_batch(model: TinyTransformer, prompts: Sequence[Sequence[int]], max_tokens: int = 16,
                   steering=None, cache=None, stop_token: int | None = None) -> list[list[int]]:
    """Greedy decoding for equal-length prompts, returning only new tokens.

    ``steering`` is a steering spec bound against ``cache``; it rewrites the
    residual stream at its layer for every prompt and generated position on
    each decoding step.  Generation stops at ``stop_token`` (not included) or
    after ``max_tokens`` tokens.  No key/value cache: every step reruns the
    full prefix, so outputs are exactly those of a single full forward pass.
    """
    seqs = np.asarray(prompts, dtype=np.int64)
    if seqs.ndim != 2 or seqs.shape[1] == 0:
        raise DimensionError("prompts must be a non-empty list of equal-length token sequences")
    if seqs.shape[1] >= model.context_length:
        raise ContextLengthError(f"prompt length {seqs.shape[1]} must be < context {model.context_length}")
    tap, transform = None, None
    if steering is not None:
        tap = steering.layer
        transform = steering.bind(cache)
    n = seqs.shape[0]
    done = np.zeros(n, dtype=bool)
    out: list[list[int]] = [[] for _ in range(n)]
    for _ in range(max_tokens):
        if seqs.shape[1] > model.context_length:
            break
        logits, _ = model.forward_with_tap(seqs, tap, transform)
        nxt = np.argmax(logits[:, -1, :], axis=-1)
        for i in range(n):
            if done[i]:
                continue
            if stop_token is not None and nxt[i] == stop_token:
                done[i] = True
            else:
                out[i].append(int(nxt[i]))
        if done.all():
            break
        seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
    return out


@dataclass(frozen=True)
class TransformerTrainConfig:
    width: int = 64
    n_layers: int = 4
    n_heads: int = 2
    context_length: int = 64
    steps: int = 3000
    batch_size: int = 32
    learning_rate: float = 3e-3
    warmup: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dropout: float = 0.1
    seed: int = 0


class Adam:
    """Adam with bias correction and linear warmup to a constant rate."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8, warmup=0):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps, self.warmup = lr, beta1, beta2, eps, warmup
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        lr = self.lr * min(1.0, self.t / self.warmup) if self.warmup else self.lr
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            self.params[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def train_tiny_transformer(sequences: Sequence[Sequence[int]], vocab_size: int, config: TransformerTrainConfig,
                           loss_weights: Sequence[Sequence[float]] | None = None,
                           pad_token: int = 0) -> TinyTransformer:
    """Next-token training on a list of token sequences.

    Sequences are right-padded with ``pad_token`` within a batch; padded
    positions carry zero loss weight.  ``loss_weights`` optionally weights
    each target position (aligned with the *target* token, i.e. position
    ``t`` of the weight list scores predicting token ``t + 1``).
    """
    from .mlp import config_digest

    if not sequences:
        raise DataError("training corpus is empty")
    seqs = [np.asarray(s, dtype=np.int64) for s in sequences]
    for s in seqs:
        if s.size < 2:
            raise DataError("every training sequence needs at least two tokens")
        if s.size > config.context_length + 1:
            raise ContextLengthError(f"sequence of length {s.size} exceeds context {config.context_length}")
        if s.min() < 0 or s.max() >= vocab_size:
            raise VocabError("token id outside vocabulary")
    rng = SeededRng(config.seed, "transformer")
    model = TinyTransformer.initialize(vocab_size, rng.substream("init"), config.width, config.n_layers,
                                       config.n_heads, config.context_length)
    opt = Adam(model.params, config.learning_rate, config.beta1, config.beta2, config.eps, config.warmup)
    batches = rng.substream("batches")
    dropout_rng = rng.substream("dropout")
    for _ in range(config.steps):
        pick = batches.integers(0, len(seqs), size=min(config.batch_size, len(seqs)))
        T = max(seqs[i].size for i in pick) - 1
        inp = np.full((len(pick), T), pad_token, dtype=np.int64)
        tgt = np.full((len(pick), T), pad_token, dtype=np.int64)
        wts = np.zeros((len(pick), T))
        for r, i in enumerate(pick):
            s = seqs[i]
            inp[r, :s.size - 1] = s[:-1]
            tgt[r, :s.size - 1] = s[1:]
            wts[r, :s.size - 1] = 1.0 if loss_weights is None else np.asarray(loss_weights[i])[:s.size - 1]
        _, grads = model.loss_and_grads(inp, tgt, wts, config.dropout, dropout_rng)
        opt.step(grads)
    model.seed = config.seed
    model.config_digest = config_digest(config)
    return model


def sequence_nll(model: TinyTransformer, sequences: Sequence[Sequence[int]]) -> tuple[float, int]:
    """Total next-token negative log-likelihood and the number of scored tokens."""
    total, count = 0.0, 0
    for s in sequences:
        s = np.asarray(s, dtype=np.int64)
        logp = log_softmax(model.forward(s[:-1]))
        total -= float(np.sum(logp[np.arange(s.size - 1), s[1:]]))
        count += s.size - 1
    return total, count
