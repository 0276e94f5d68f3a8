"""Adapter-only optimization of the alert decoder under token-level NLL.

The objective is the mean negative log-likelihood of the rendered target
sequence ("Yes. <explanation>" / "No.") given the fused encoder tokens,
excluding padding positions. Gradients are derived by hand and flow only
into the low-rank adapter factors; every base tensor of the encoder and
decoder stays frozen, which the test suite pins with before/after
checksums. All math is float64 so the finite-difference gradient check
is tight.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from lkalert.decoder import DecoderParams, LoraAdapter, forward, init_adapters
from lkalert.errors import LKAlertError
from lkalert.text import BOS_ID, EOS_ID, PAD_ID, Vocabulary


class TrainerError(LKAlertError):
    pass


class EmptyBatch(TrainerError):
    pass


class DivergedLoss(TrainerError):
    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 8
    max_steps: int = 1000
    eval_every: int = 0          # 0 disables mid-training validation
    seed: int = 0
    guided: bool = True
    label_pad_masking: bool = True
    lora_rank: int = 4
    lora_alpha: float = 8.0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise TrainerError("learning_rate must be positive")
        if self.batch_size < 1:
            raise TrainerError("batch_size must be >= 1")


@dataclass(frozen=True)
class TrainLogEntry:
    step: int
    mean_nll: float
    val_metrics: dict | None = None


def render_target(label: str, explanation: str) -> str:
    if label == "Yes":
        return f"Yes. {explanation}".strip()
    return "No."


def encode_target(vocab: Vocabulary, text: str, max_len: int) -> list[int]:
    body = vocab.encode(text)[: max_len - 2]
    return [BOS_ID] + body + [EOS_ID]


def pad_targets(sequences: Sequence[Sequence[int]]) -> np.ndarray:
    width = max(len(s) for s in sequences)
    out = np.full((len(sequences), width), PAD_ID, dtype=np.intp)
    for i, seq in enumerate(sequences):
        out[i, : len(seq)] = seq
    return out


# ---------------------------------------------------------------------------
# Loss and its gradient with respect to the adapter factors


def _nll_from_log_probs(
    log_probs: np.ndarray, ids: np.ndarray, label_pad_masking: bool
) -> tuple[float, np.ndarray, float]:
    """Mean NLL of next-token prediction plus the mask over scored positions."""
    targets = ids[:, 1:]
    mask = (targets != PAD_ID) if label_pad_masking else np.ones_like(targets, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise EmptyBatch("no scored target positions in batch")
    picked = np.take_along_axis(log_probs[:, :-1, :], targets[:, :, None], axis=2)[:, :, 0]
    value = float(-(picked * mask).sum() / count)
    return value, mask, float(count)


def loss(
    params: DecoderParams,
    adapters: dict[str, LoraAdapter],
    memories: np.ndarray,
    target_ids: np.ndarray,
    label_pad_masking: bool = True,
) -> float:
    """Mean negative log-likelihood per scored target token (nats)."""
    if len(target_ids) == 0:
        raise EmptyBatch("empty batch")
    ids = np.asarray(target_ids, dtype=np.intp)
    if ids.ndim == 1:
        ids = ids[None, :]
    log_probs = forward(params, adapters, memories, ids)
    value, _, _ = _nll_from_log_probs(log_probs, ids, label_pad_masking)
    return value


def _softmax_backward(d_probs: np.ndarray, probs: np.ndarray) -> np.ndarray:
    inner = (d_probs * probs).sum(axis=-1, keepdims=True)
    return probs * (d_probs - inner)


def _layer_norm_backward(
    dy: np.ndarray, g: np.ndarray, xhat: np.ndarray, inv: np.ndarray
) -> np.ndarray:
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    return inv * (dxhat - m1 - xhat * m2)


def _split(x: np.ndarray, heads: int) -> np.ndarray:
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge(x: np.ndarray) -> np.ndarray:
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def _adapter_grads(
    adapter: LoraAdapter, x: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """d(loss)/dA and /dB for y += scaling * (x @ A.T) @ B.T."""
    s = adapter.scaling
    x2 = x.reshape(-1, x.shape[-1])
    g2 = grad_out.reshape(-1, grad_out.shape[-1])
    d_b = s * (g2.T @ (x2 @ adapter.A.T))
    d_a = s * ((g2 @ adapter.B).T @ x2)
    return d_a, d_b


def _effective(params: DecoderParams, adapters: dict[str, LoraAdapter], name: str) -> np.ndarray:
    w = params.t(name)
    adapter = adapters.get(name)
    return w + adapter.delta() if adapter is not None else w


def loss_and_grads(
    params: DecoderParams,
    adapters: dict[str, LoraAdapter],
    memories: np.ndarray,
    target_ids: np.ndarray,
    label_pad_masking: bool = True,
) -> tuple[float, dict[str, tuple[np.ndarray, np.ndarray]]]:
    """One forward/backward pass; gradients only for the adapter factors.

    Adapters are supported on the q and v projections (self and cross),
    the canonical placement; the base weights and the encoder tokens are
    constants, so their gradients are propagated but never materialized
    as parameter updates.
    """
    for name in adapters:
        if not (name.endswith(".q") or name.endswith(".v")):
            raise TrainerError(f"adapters are supported on q/v projections only, got {name}")
    if len(target_ids) == 0:
        raise EmptyBatch("empty batch")
    ids = np.asarray(target_ids, dtype=np.intp)
    if ids.ndim == 1:
        ids = ids[None, :]
    log_probs, cache = forward(params, adapters, memories, ids, want_cache=True)
    value, mask, count = _nll_from_log_probs(log_probs, ids, label_pad_masking)

    # d(loss)/d(logits) = (softmax - onehot) * mask / count at scored positions.
    probs = np.exp(log_probs)
    d_logits = np.zeros_like(probs)
    d_logits[:, :-1, :] = probs[:, :-1, :] * (mask[:, :, None] / count)
    rows = np.nonzero(mask)
    d_logits[rows[0], rows[1], ids[:, 1:][rows]] -= 1.0 / count

    grads: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def add_grads(name: str, x_in: np.ndarray, grad_out: np.ndarray) -> None:
        adapter = adapters.get(name)
        if adapter is not None:
            grads[name] = _adapter_grads(adapter, x_in, grad_out)

    heads = params.head_count
    scale = 1.0 / np.sqrt(params.head_dim)
    mem = cache["mem"]
    dh = d_logits @ params.t("embed")

    for layer in reversed(range(params.layer_count)):
        p = f"layers.{layer}"
        lc = cache["layers"][layer]

        # Feed-forward block.
        f = lc["ffn"]
        d_act = dh @ params.t(f"{p}.ffn.w2")
        d_pre = d_act * (f["pre"] > 0)
        d_xn3 = d_pre @ params.t(f"{p}.ffn.w1")
        dh = dh + _layer_norm_backward(d_xn3, params.t(f"{p}.ln3.g"), f["xhat"], f["inv"])

        # Cross-attention: memory is constant, so only the query path
        # re-enters the residual stream; k/v gradients stop at their adapters.
        c = lc["cross"]
        d_ctx = _split(dh @ params.t(f"{p}.cross.o"), heads)
        d_attn = d_ctx @ c["v"].transpose(0, 1, 3, 2)
        d_v = _merge(c["attn"].transpose(0, 1, 3, 2) @ d_ctx)
        add_grads(f"{p}.cross.v", mem, d_v)
        d_scores = _softmax_backward(d_attn, c["attn"]) * scale
        d_q = _merge(d_scores @ c["k"])
        add_grads(f"{p}.cross.q", c["xn"], d_q)
        d_xn2 = d_q @ _effective(params, adapters, f"{p}.cross.q")
        dh = dh + _layer_norm_backward(d_xn2, params.t(f"{p}.ln2.g"), c["xhat"], c["inv"])

        # Causal self-attention: q, k, v all read the normalized stream.
        s = lc["self"]
        d_ctx = _split(dh @ params.t(f"{p}.self.o"), heads)
        d_attn = d_ctx @ s["v"].transpose(0, 1, 3, 2)
        d_v = _merge(s["attn"].transpose(0, 1, 3, 2) @ d_ctx)
        add_grads(f"{p}.self.v", s["xn"], d_v)
        d_scores = _softmax_backward(d_attn, s["attn"]) * scale
        d_q = _merge(d_scores @ s["k"])
        d_k = _merge(d_scores.transpose(0, 1, 3, 2) @ s["q"])
        add_grads(f"{p}.self.q", s["xn"], d_q)
        d_xn1 = (
            d_q @ _effective(params, adapters, f"{p}.self.q")
            + d_k @ params.t(f"{p}.self.k")
            + d_v @ _effective(params, adapters, f"{p}.self.v")
        )
        dh = dh + _layer_norm_backward(d_xn1, params.t(f"{p}.ln1.g"), s["xhat"], s["inv"])

    return value, grads


def grad_check(
    params: DecoderParams,
    adapters: dict[str, LoraAdapter],
    memories: np.ndarray,
    target_ids: np.ndarray,
    epsilon: float = 1e-5,
    n_entries: int = 24,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Probes n_entries randomly chosen scalar entries across all adapter
    factors, restricted to entries whose analytic gradient magnitude is
    at least 1e-6: below that, central differences measure float64
    rounding noise rather than correctness (an implementation error
    scales gradients, so meaningful entries are where it shows). Falls
    back to the largest-gradient entries when few qualify. Relative
    error uses max(|analytic|, |numeric|, 1e-8) in the denominator.
    """
    _, analytic = loss_and_grads(params, adapters, memories, target_ids)
    candidates: list[tuple[float, str, str, tuple]] = []
    for name, (g_a, g_b) in analytic.items():
        for which, grad in (("A", g_a), ("B", g_b)):
            for flat in range(grad.size):
                idx = np.unravel_index(flat, grad.shape)
                candidates.append((abs(float(grad[idx])), name, which, idx))
    eligible = [c for c in candidates if c[0] >= 1e-6]
    if len(eligible) < n_entries:
        eligible = sorted(candidates, reverse=True)[: max(n_entries, 1)]
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(eligible), size=min(n_entries, len(eligible)), replace=False)

    worst = 0.0
    for pick in picks:
        _, name, which, idx = eligible[int(pick)]
        arr = getattr(adapters[name], which)
        original = arr[idx]
        arr[idx] = original + epsilon
        up = loss(params, adapters, memories, target_ids)
        arr[idx] = original - epsilon
        down = loss(params, adapters, memories, target_ids)
        arr[idx] = original

        numeric = (up - down) / (2 * epsilon)
        a = analytic[name][0 if which == "A" else 1][idx]
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class _AdamState:
    m: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    v: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


def _adam_step(
    adapters: dict[str, LoraAdapter],
    grads: dict[str, tuple[np.ndarray, np.ndarray]],
    state: _AdamState,
    cfg: TrainConfig,
    t: int,
) -> None:
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon
    correction = np.sqrt(1 - b2**t) / (1 - b1**t)
    for name, adapter in adapters.items():
        g_a, g_b = grads.get(name, (np.zeros_like(adapter.A), np.zeros_like(adapter.B)))
        if name not in state.m:
            state.m[name] = (np.zeros_like(adapter.A), np.zeros_like(adapter.B))
            state.v[name] = (np.zeros_like(adapter.A), np.zeros_like(adapter.B))
        for arr, grad, m, v in (
            (adapter.A, g_a, state.m[name][0], state.v[name][0]),
            (adapter.B, g_b, state.m[name][1], state.v[name][1]),
        ):
            m *= b1
            m += (1 - b1) * grad
            v *= b2
            v += (1 - b2) * grad * grad
            arr -= cfg.learning_rate * correction * m / (np.sqrt(v) + eps)


def checksum_tensors(tensors: dict[str, np.ndarray]) -> str:
    """Order-independent digest over named tensors; pins the freezing contract."""
    digest = hashlib.sha256()
    for name in sorted(tensors):
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(tensors[name]).tobytes())
    return digest.hexdigest()


def train(
    params: DecoderParams,
    train_items: Sequence[tuple[np.ndarray, Sequence[int]]],
    cfg: TrainConfig,
    val_eval: Callable[[dict[str, LoraAdapter], int], dict] | None = None,
) -> tuple[dict[str, LoraAdapter], list[TrainLogEntry]]:
    """Optimize fresh adapters over (memory, target id sequence) pairs.

    Deterministic given cfg.seed: adapter init uses cfg.seed, epoch
    shuffles use cfg.seed + 1, and batches are visited sequentially. The
    frozen decoder tensors are verified untouched by checksum.
    """
    if len(train_items) == 0:
        raise EmptyBatch("empty training set")
    adapters = init_adapters(params, rank=cfg.lora_rank, alpha=cfg.lora_alpha, seed=cfg.seed)
    if cfg.max_steps <= 0:
        return adapters, []

    frozen_before = checksum_tensors(params.tensors)
    order_rng = np.random.default_rng(cfg.seed + 1)
    state = _AdamState()
    log: list[TrainLogEntry] = []
    order = order_rng.permutation(len(train_items))
    cursor = 0

    for step in range(1, cfg.max_steps + 1):
        picked: list[int] = []
        while len(picked) < min(cfg.batch_size, len(train_items)):
            if cursor >= len(order):
                order = order_rng.permutation(len(train_items))
                cursor = 0
            picked.append(int(order[cursor]))
            cursor += 1
        memories = np.stack([train_items[i][0] for i in picked])
        ids = pad_targets([train_items[i][1] for i in picked])

        value, grads = loss_and_grads(params, adapters, memories, ids, cfg.label_pad_masking)
        if not np.isfinite(value):
            raise DivergedLoss(step)
        _adam_step(adapters, grads, state, cfg, step)

        snapshot = None
        if val_eval is not None and cfg.eval_every > 0 and step % cfg.eval_every == 0:
            snapshot = val_eval(adapters, step)
        log.append(TrainLogEntry(step=step, mean_nll=value, val_metrics=snapshot))

    if checksum_tensors(params.tensors) != frozen_before:
        raise TrainerError("frozen decoder tensors were modified during training")
    return adapters, log
