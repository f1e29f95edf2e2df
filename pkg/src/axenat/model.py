"""A minimal non-autoregressive encoder-decoder in plain numpy.

The encoder is an embedding table plus learned positions.  Each decoder block
applies single-head self-attention over the (partially masked) target input,
single-head cross-attention into the encoder states, and a two-layer MLP, all
with residual connections and no normalization layers.  A length head
classifies the target length from the mean-pooled encoder states.

Everything is functional: ``forward`` returns activations in a cache dict and
``backward`` replays it in reverse, returning exact gradients for every
parameter.  float64 throughout; no autograd.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INIT_STD = 0.02


@dataclass(frozen=True)
class ToyModelConfig:
    d_model: int = 64
    n_layers: int = 2
    max_len: int = 64
    label_smoothing: float = 0.1
    learning_rate: float = 3e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-6
    weight_decay: float = 0.0
    warmup_steps: int = 100
    steps: int = 2000
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.d_model < 8:
            raise ValueError("d_model must be at least 8")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")
        if self.max_len < 1 or self.n_layers < 1:
            raise ValueError("max_len and n_layers must be positive")


def init_params(cfg: ToyModelConfig, src_vocab: int, tgt_vocab: int,
                rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Weights from N(0, 0.02); biases zero."""
    d = cfg.d_model
    p = {
        "src_emb": rng.normal(0.0, INIT_STD, (src_vocab, d)),
        "tgt_emb": rng.normal(0.0, INIT_STD, (tgt_vocab, d)),
        "pos_src": rng.normal(0.0, INIT_STD, (cfg.max_len, d)),
        "pos_tgt": rng.normal(0.0, INIT_STD, (cfg.max_len, d)),
        "out_w": rng.normal(0.0, INIT_STD, (d, tgt_vocab)),
        "out_b": np.zeros(tgt_vocab),
        "len_w": rng.normal(0.0, INIT_STD, (d, cfg.max_len)),
        "len_b": np.zeros(cfg.max_len),
    }
    for layer in range(cfg.n_layers):
        for name in ("sq", "sk", "sv", "so", "cq", "ck", "cv", "co"):
            p[f"L{layer}.{name}"] = rng.normal(0.0, INIT_STD, (d, d))
        p[f"L{layer}.w1"] = rng.normal(0.0, INIT_STD, (d, 2 * d))
        p[f"L{layer}.b1"] = np.zeros(2 * d)
        p[f"L{layer}.w2"] = rng.normal(0.0, INIT_STD, (2 * d, d))
        p[f"L{layer}.b2"] = np.zeros(d)
    return p


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _attention_forward(q_in, kv_in, wq, wk, wv, wo):
    d = q_in.shape[1]
    Q = q_in @ wq
    K = kv_in @ wk
    V = kv_in @ wv
    scores = Q @ K.T / np.sqrt(d)
    attn = _softmax_rows(scores)
    ctx = attn @ V
    out = ctx @ wo
    return out, (q_in, kv_in, Q, K, V, attn, ctx)


def _attention_backward(g_out, cache, wq, wk, wv, wo):
    q_in, kv_in, Q, K, V, attn, ctx = cache
    d = q_in.shape[1]
    g_ctx = g_out @ wo.T
    g_wo = ctx.T @ g_out
    g_attn = g_ctx @ V.T
    g_V = attn.T @ g_ctx
    # softmax rows: dS = A * (dA - sum(dA * A))
    g_scores = attn * (g_attn - (g_attn * attn).sum(axis=1, keepdims=True))
    g_scores /= np.sqrt(d)
    g_Q = g_scores @ K
    g_K = g_scores.T @ Q
    g_q_in = g_Q @ wq.T
    g_kv_in = g_K @ wk.T + g_V @ wv.T
    g_wq = q_in.T @ g_Q
    g_wk = kv_in.T @ g_K
    g_wv = kv_in.T @ g_V
    return g_q_in, g_kv_in, {"q": g_wq, "k": g_wk, "v": g_wv, "o": g_wo}


def forward(params: dict, cfg: ToyModelConfig, src_ids: np.ndarray,
            input_ids: np.ndarray):
    """One sequence through the model.

    Returns (logp, length_logits, cache): ``logp`` is the n x V matrix of
    normalized log-probabilities, ``length_logits`` scores lengths 1..max_len.
    """
    src_ids = np.asarray(src_ids, dtype=np.int64)
    input_ids = np.asarray(input_ids, dtype=np.int64)
    Lx, n = src_ids.size, input_ids.size
    if Lx > cfg.max_len or n > cfg.max_len:
        raise ValueError(f"sequence length exceeds max_len={cfg.max_len}")

    E = params["src_emb"][src_ids] + params["pos_src"][:Lx]
    h = params["tgt_emb"][input_ids] + params["pos_tgt"][:n]
    cache = {"src_ids": src_ids, "input_ids": input_ids, "E": E, "h0": h}

    for layer in range(cfg.n_layers):
        pre = f"L{layer}."
        s_out, s_cache = _attention_forward(
            h, h, params[pre + "sq"], params[pre + "sk"],
            params[pre + "sv"], params[pre + "so"])
        h1 = h + s_out
        c_out, c_cache = _attention_forward(
            h1, E, params[pre + "cq"], params[pre + "ck"],
            params[pre + "cv"], params[pre + "co"])
        h2 = h1 + c_out
        z = h2 @ params[pre + "w1"] + params[pre + "b1"]
        a = np.maximum(z, 0.0)
        h3 = h2 + a @ params[pre + "w2"] + params[pre + "b2"]
        if not np.all(np.isfinite(h3)):
            raise FloatingPointError(
                f"non-finite activations in decoder layer {layer}")
        cache[f"{layer}.self"] = s_cache
        cache[f"{layer}.cross"] = c_cache
        cache[f"{layer}.h1"] = h1
        cache[f"{layer}.h2"] = h2
        cache[f"{layer}.z"] = z
        cache[f"{layer}.a"] = a
        h = h3

    logits = h @ params["out_w"] + params["out_b"]
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite values in the output projection")
    pooled = E.mean(axis=0)
    length_logits = pooled @ params["len_w"] + params["len_b"]
    if not np.all(np.isfinite(length_logits)):
        raise FloatingPointError("non-finite values in the length head")
    cache["h_final"] = h
    cache["pooled"] = pooled
    cache["probs"] = _softmax_rows(logits)
    return _log_softmax_rows(logits), length_logits, cache


def backward(params: dict, cfg: ToyModelConfig, cache: dict,
             grad_logits: np.ndarray,
             grad_length_logits: np.ndarray | None = None) -> dict:
    """Exact reverse-mode gradients for every parameter.

    ``grad_logits`` must already be chained through the log-softmax (see
    ``objectives.logit_grad_from_logp_grad``).
    """
    n, V = cache["probs"].shape
    if grad_logits.shape != (n, V):
        raise ValueError(
            f"grad_logits shape {grad_logits.shape} does not match ({n}, {V})")
    grads = {k: np.zeros_like(v) for k, v in params.items()}

    h = cache["h_final"]
    grads["out_w"] = h.T @ grad_logits
    grads["out_b"] = grad_logits.sum(axis=0)
    g_h = grad_logits @ params["out_w"].T
    g_E = np.zeros_like(cache["E"])

    for layer in reversed(range(cfg.n_layers)):
        pre = f"L{layer}."
        h2 = cache[f"{layer}.h2"]
        z = cache[f"{layer}.z"]
        a = cache[f"{layer}.a"]
        # MLP with residual: h3 = h2 + relu(h2 w1 + b1) w2 + b2
        grads[pre + "w2"] = a.T @ g_h
        grads[pre + "b2"] = g_h.sum(axis=0)
        g_a = g_h @ params[pre + "w2"].T
        g_z = g_a * (z > 0.0)
        grads[pre + "w1"] = h2.T @ g_z
        grads[pre + "b1"] = g_z.sum(axis=0)
        g_h2 = g_h + g_z @ params[pre + "w1"].T
        # cross-attention with residual
        g_h1, g_E_layer, aw = _attention_backward(
            g_h2, cache[f"{layer}.cross"], params[pre + "cq"],
            params[pre + "ck"], params[pre + "cv"], params[pre + "co"])
        grads[pre + "cq"], grads[pre + "ck"] = aw["q"], aw["k"]
        grads[pre + "cv"], grads[pre + "co"] = aw["v"], aw["o"]
        g_h1 += g_h2
        g_E += g_E_layer
        # self-attention with residual: queries and keys share the input
        g_q, g_kv, aw = _attention_backward(
            g_h1, cache[f"{layer}.self"], params[pre + "sq"],
            params[pre + "sk"], params[pre + "sv"], params[pre + "so"])
        grads[pre + "sq"], grads[pre + "sk"] = aw["q"], aw["k"]
        grads[pre + "sv"], grads[pre + "so"] = aw["v"], aw["o"]
        g_h = g_h1 + g_q + g_kv

    input_ids = cache["input_ids"]
    np.add.at(grads["tgt_emb"], input_ids, g_h)
    grads["pos_tgt"][:input_ids.size] = g_h

    if grad_length_logits is not None:
        grads["len_w"] = np.outer(cache["pooled"], grad_length_logits)
        grads["len_b"] = grad_length_logits.copy()
        g_E += (grad_length_logits @ params["len_w"].T) / cache["E"].shape[0]

    src_ids = cache["src_ids"]
    np.add.at(grads["src_emb"], src_ids, g_E)
    grads["pos_src"][:src_ids.size] = g_E
    return grads


def length_logits_from_source(params: dict, cfg: ToyModelConfig,
                              src_ids: np.ndarray) -> np.ndarray:
    """Length-head scores without running the decoder (used before the target
    length is known)."""
    src_ids = np.asarray(src_ids, dtype=np.int64)
    if src_ids.size > cfg.max_len:
        raise ValueError(f"sequence length exceeds max_len={cfg.max_len}")
    E = params["src_emb"][src_ids] + params["pos_src"][:src_ids.size]
    return E.mean(axis=0) @ params["len_w"] + params["len_b"]


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def lr_schedule(cfg: ToyModelConfig, t: int) -> float:
    """Linear warmup to learning_rate, then inverse square-root decay."""
    w = max(1, cfg.warmup_steps)
    return cfg.learning_rate * min(t / w, (w / t) ** 0.5)


def adam_step(params: dict, grads: dict, state: AdamState,
              cfg: ToyModelConfig) -> None:
    """In-place Adam update with classic L2 weight decay folded into the
    gradient."""
    state.t += 1
    lr = lr_schedule(cfg, state.t)
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = state.m[k] / bc1
        v_hat = state.v[k] / bc2
        p -= lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        if not np.all(np.isfinite(p)):
            raise FloatingPointError(f"non-finite parameter block {k!r}")
