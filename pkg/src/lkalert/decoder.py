"""Autoregressive alert decoder with low-rank adapters on attention projections.

A small pre-norm transformer decoder over float64 numpy: causal
self-attention on the target tokens, cross-attention over the fused
encoder tokens, a two-layer feed-forward block, and a token embedding
tied to the output projection. Base weights are frozen after
initialization; adaptation happens exclusively through rank-r updates
W + (alpha/r) * B @ A attached to the Q and V projections, which can be
merged into the base weights after training so inference carries no
adapter arithmetic at all.

The output readout taps the raw residual stream (no final layer norm):
with small frozen init the untrained output stays near-uniform, while
trained adapters are free to grow the stream until greedy decoding is
saturated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from lkalert.errors import LKAlertError
from lkalert.text import BOS_ID, EOS_ID, Vocabulary, detokenize


class DecoderError(LKAlertError):
    pass


class ShapeMismatch(DecoderError):
    pass


class TargetNotFound(DecoderError):
    pass


class AlreadyMerged(DecoderError):
    pass


@dataclass(frozen=True)
class DecoderParams:
    """Named frozen tensors plus the shape metadata needed to run them."""

    tensors: dict[str, np.ndarray]
    d_model: int
    layer_count: int
    head_count: int
    vocab_size: int
    max_target_len: int
    max_memory_len: int
    use_memory_positions: bool = False
    merged: bool = False

    def __post_init__(self) -> None:
        if self.d_model % self.head_count != 0:
            raise ShapeMismatch("d_model must be divisible by head_count")
        for arr in self.tensors.values():
            arr.flags.writeable = False

    @property
    def head_dim(self) -> int:
        return self.d_model // self.head_count

    def t(self, name: str) -> np.ndarray:
        return self.tensors[name]


@dataclass
class LoraAdapter:
    """Rank-r update for one named weight: effective delta = (alpha/r) * B @ A.

    A is initialized small-uniform and B to zero, so a fresh adapter set
    leaves the base model's behavior exactly unchanged.
    """

    target: str
    A: np.ndarray  # (rank, d_in)
    B: np.ndarray  # (d_out, rank)
    rank: int = 4
    alpha: float = 8.0

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def delta(self) -> np.ndarray:
        return self.scaling * (self.B @ self.A)


@dataclass(frozen=True)
class GenerationOutput:
    token_ids: tuple[int, ...]
    text: str
    alert: str        # "Yes" | "No" | "Malformed"
    explanation: str


def init_decoder(
    vocab_size: int,
    d_model: int = 64,
    layer_count: int = 2,
    head_count: int = 4,
    ffn_hidden: int | None = None,
    max_target_len: int = 64,
    max_memory_len: int = 128,
    use_memory_positions: bool = False,
    seed: int = 0,
) -> DecoderParams:
    """Seeded uniform weights; layer-norm gains 1, biases 0.

    Projection weights draw from U(-0.1, 0.1). The embedding (and with it
    the tied output projection) draws from U(-0.05, 0.05): the output
    logit spread at init scales with the embedding, and it must stay
    small enough that the untrained model is near-uniform over the
    vocabulary.
    """
    rng = np.random.default_rng(seed)
    hidden = 2 * d_model if ffn_hidden is None else ffn_hidden

    def u(*shape: int) -> np.ndarray:
        return rng.uniform(-0.1, 0.1, size=shape)

    def u_embed(*shape: int) -> np.ndarray:
        return rng.uniform(-0.05, 0.05, size=shape)

    tensors: dict[str, np.ndarray] = {
        "embed": u_embed(vocab_size, d_model),
        "pos": u_embed(max_target_len, d_model),
        "mem_pos": u_embed(max_memory_len, d_model),
    }
    for layer in range(layer_count):
        p = f"layers.{layer}"
        for attn in ("self", "cross"):
            for proj in ("q", "k", "v", "o"):
                tensors[f"{p}.{attn}.{proj}"] = u(d_model, d_model)
        tensors[f"{p}.ffn.w1"] = u(hidden, d_model)
        tensors[f"{p}.ffn.b1"] = np.zeros(hidden)
        tensors[f"{p}.ffn.w2"] = u(d_model, hidden)
        tensors[f"{p}.ffn.b2"] = np.zeros(d_model)
        for ln in ("ln1", "ln2", "ln3"):
            tensors[f"{p}.{ln}.g"] = np.ones(d_model)
            tensors[f"{p}.{ln}.b"] = np.zeros(d_model)
    return DecoderParams(
        tensors=tensors,
        d_model=d_model,
        layer_count=layer_count,
        head_count=head_count,
        vocab_size=vocab_size,
        max_target_len=max_target_len,
        max_memory_len=max_memory_len,
        use_memory_positions=use_memory_positions,
    )


def default_lora_targets(params: DecoderParams) -> list[str]:
    """Q and V projections of self- and cross-attention, every layer."""
    return [
        f"layers.{layer}.{attn}.{proj}"
        for layer in range(params.layer_count)
        for attn in ("self", "cross")
        for proj in ("q", "v")
    ]


def init_adapters(
    params: DecoderParams,
    targets: list[str] | None = None,
    rank: int = 4,
    alpha: float = 8.0,
    seed: int = 0,
) -> dict[str, LoraAdapter]:
    rng = np.random.default_rng(seed)
    adapters: dict[str, LoraAdapter] = {}
    for target in targets if targets is not None else default_lora_targets(params):
        if target not in params.tensors:
            raise TargetNotFound(target)
        d_out, d_in = params.t(target).shape
        adapters[target] = LoraAdapter(
            target=target,
            A=rng.uniform(-0.01, 0.01, size=(rank, d_in)),
            B=np.zeros((d_out, rank)),
            rank=rank,
            alpha=alpha,
        )
    return adapters


# ---------------------------------------------------------------------------
# Forward pass

_LN_EPS = 1e-5


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, xhat, inv


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def _project(
    x: np.ndarray, params: DecoderParams, adapters: dict[str, LoraAdapter], name: str
) -> np.ndarray:
    y = x @ params.t(name).T
    adapter = adapters.get(name)
    if adapter is not None:
        y = y + (x @ adapter.A.T) @ adapter.B.T * adapter.scaling
    return y


def forward(
    params: DecoderParams,
    adapters: dict[str, LoraAdapter],
    memory: np.ndarray,
    target_ids: np.ndarray,
    want_cache: bool = False,
):
    """Teacher-forced pass: per-position log-probabilities over the vocabulary.

    memory is (M, d) or batched (B, M, d); target_ids is (L,) or (B, L)
    and must start with BOS. Returns log-probs shaped like the inputs
    ((L, V) or (B, L, V)), plus the intermediate cache when requested
    (consumed by the trainer's backward pass).
    """
    for name in adapters:
        if name not in params.tensors:
            raise TargetNotFound(name)
    ids = np.asarray(target_ids, dtype=np.intp)
    single = ids.ndim == 1
    if single:
        ids = ids[None, :]
    batch, length = ids.shape
    if length < 1 or length > params.max_target_len:
        raise ShapeMismatch(f"target length {length} outside [1, {params.max_target_len}]")
    if np.any(ids[:, 0] != BOS_ID):
        raise ShapeMismatch("target sequences must begin with BOS")

    mem = np.asarray(memory, dtype=np.float64)
    if mem.ndim == 2:
        mem = np.broadcast_to(mem, (batch,) + mem.shape)
    if mem.shape[0] != batch or mem.shape[2] != params.d_model:
        raise ShapeMismatch(f"memory shape {mem.shape} incompatible with batch/d_model")
    if params.use_memory_positions:
        if mem.shape[1] > params.max_memory_len:
            raise ShapeMismatch("memory longer than the position table")
        mem = mem + params.t("mem_pos")[: mem.shape[1]]

    heads = params.head_count
    scale = 1.0 / np.sqrt(params.head_dim)
    causal = np.triu(np.full((length, length), -np.inf), k=1)

    h = params.t("embed")[ids] + params.t("pos")[:length]
    cache: dict = {"ids": ids, "mem": mem, "layers": []} if want_cache else None

    for layer in range(params.layer_count):
        p = f"layers.{layer}"
        lc: dict = {}

        # Causal self-attention.
        xn1, xhat1, inv1 = _layer_norm(h, params.t(f"{p}.ln1.g"), params.t(f"{p}.ln1.b"))
        q = _split_heads(_project(xn1, params, adapters, f"{p}.self.q"), heads)
        k = _split_heads(_project(xn1, params, adapters, f"{p}.self.k"), heads)
        v = _split_heads(_project(xn1, params, adapters, f"{p}.self.v"), heads)
        attn = _softmax(q @ k.transpose(0, 1, 3, 2) * scale + causal)
        ctx = _merge_heads(attn @ v)
        out = _project(ctx, params, adapters, f"{p}.self.o")
        if want_cache:
            lc["self"] = dict(x=h, xn=xn1, xhat=xhat1, inv=inv1, q=q, k=k, v=v, attn=attn, ctx=ctx)
        h = h + out

        # Cross-attention over the fused encoder tokens.
        xn2, xhat2, inv2 = _layer_norm(h, params.t(f"{p}.ln2.g"), params.t(f"{p}.ln2.b"))
        qc = _split_heads(_project(xn2, params, adapters, f"{p}.cross.q"), heads)
        kc = _split_heads(_project(mem, params, adapters, f"{p}.cross.k"), heads)
        vc = _split_heads(_project(mem, params, adapters, f"{p}.cross.v"), heads)
        attn_c = _softmax(qc @ kc.transpose(0, 1, 3, 2) * scale)
        ctx_c = _merge_heads(attn_c @ vc)
        out_c = _project(ctx_c, params, adapters, f"{p}.cross.o")
        if want_cache:
            lc["cross"] = dict(
                x=h, xn=xn2, xhat=xhat2, inv=inv2, q=qc, k=kc, v=vc, attn=attn_c, ctx=ctx_c
            )
        h = h + out_c

        # Position-wise feed-forward.
        xn3, xhat3, inv3 = _layer_norm(h, params.t(f"{p}.ln3.g"), params.t(f"{p}.ln3.b"))
        pre = xn3 @ params.t(f"{p}.ffn.w1").T + params.t(f"{p}.ffn.b1")
        act = np.maximum(pre, 0.0)
        out_f = act @ params.t(f"{p}.ffn.w2").T + params.t(f"{p}.ffn.b2")
        if want_cache:
            lc["ffn"] = dict(x=h, xn=xn3, xhat=xhat3, inv=inv3, pre=pre, act=act)
            cache["layers"].append(lc)
        h = h + out_f

    logits = h @ params.t("embed").T
    log_probs = _log_softmax(logits)
    if want_cache:
        cache["h_final"] = h
        cache["log_probs"] = log_probs
    if single:
        log_probs = log_probs[0]
    return (log_probs, cache) if want_cache else log_probs


def generate(
    params: DecoderParams,
    adapters: dict[str, LoraAdapter],
    memory: np.ndarray,
    vocab: Vocabulary,
    max_len: int = 64,
) -> GenerationOutput:
    """Greedy decoding from BOS until EOS or max_len total tokens.

    Argmax ties break toward the lowest token id, so generation is a pure
    function of its inputs.
    """
    if max_len < 2:
        raise DecoderError("max_len must be >= 2")
    ids = [BOS_ID]
    while len(ids) < min(max_len, params.max_target_len):
        log_probs = forward(params, adapters, memory, np.asarray(ids))
        next_id = int(np.argmax(log_probs[-1]))
        if next_id == EOS_ID:
            break
        ids.append(next_id)
    generated = tuple(ids[1:])
    text = detokenize(vocab.decode(generated))
    alert, explanation = extract_alert(text)
    return GenerationOutput(token_ids=generated, text=text, alert=alert, explanation=explanation)


def extract_alert(text: str) -> tuple[str, str]:
    """Split generated text into the Yes/No alert and the explanation.

    "yes"/"no" prefixes are matched case-insensitively and must be
    followed by end-of-string, a period, or whitespace; anything else is
    Malformed. For a Yes, the remainder after one optional period is the
    explanation; a No carries none.
    """
    stripped = text.strip()
    lowered = stripped.lower()

    def matches(prefix: str) -> bool:
        if not lowered.startswith(prefix):
            return False
        return len(stripped) == len(prefix) or stripped[len(prefix)] == "." or stripped[len(prefix)].isspace()

    if matches("yes"):
        rest = stripped[3:].lstrip()
        if rest.startswith("."):
            rest = rest[1:]
        return "Yes", rest.strip()
    if matches("no"):
        return "No", ""
    return "Malformed", ""


def merge_adapters(params: DecoderParams, adapters: dict[str, LoraAdapter]) -> DecoderParams:
    """Fold every adapter into its target weight; result carries no adapters.

    Guarded against double application: merging already-merged params
    would add each delta twice.
    """
    if params.merged:
        raise AlreadyMerged("params already contain merged adapter deltas")
    for name in adapters:
        if name not in params.tensors:
            raise TargetNotFound(name)
    tensors = {name: arr.copy() for name, arr in params.tensors.items()}
    for name, adapter in adapters.items():
        if tensors[name].shape != (adapter.B.shape[0], adapter.A.shape[1]):
            raise ShapeMismatch(f"adapter delta shape mismatch for {name}")
        tensors[name] = tensors[name] + adapter.delta()
    return replace(params, tensors=tensors, merged=True)


# ---------------------------------------------------------------------------
# Checkpoint container
#
# One .npz archive of float64 tensors plus a JSON metadata entry:
#   decoder/<tensor name>      every DecoderParams tensor
#   adapter/<target>/A, .../B  every adapter's factors
#   meta                       JSON: decoder shape fields, adapter rank/alpha,
#                              encoder config, encoder seed, vocabulary sha256,
#                              guided flag, and anything the caller adds.


def save_checkpoint(
    path,
    params: DecoderParams,
    adapters: dict[str, LoraAdapter],
    meta: dict,
) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, arr in params.tensors.items():
        arrays[f"decoder/{name}"] = arr
    for target, adapter in adapters.items():
        arrays[f"adapter/{target}/A"] = adapter.A
        arrays[f"adapter/{target}/B"] = adapter.B
    full_meta = dict(meta)
    full_meta["decoder"] = {
        "d_model": params.d_model,
        "layer_count": params.layer_count,
        "head_count": params.head_count,
        "vocab_size": params.vocab_size,
        "max_target_len": params.max_target_len,
        "max_memory_len": params.max_memory_len,
        "use_memory_positions": params.use_memory_positions,
        "merged": params.merged,
    }
    full_meta["adapters"] = {
        target: {"rank": a.rank, "alpha": a.alpha} for target, a in adapters.items()
    }
    arrays["meta"] = np.array(json.dumps(full_meta, sort_keys=True))
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[DecoderParams, dict[str, LoraAdapter], dict]:
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["meta"]))
        tensors = {
            name[len("decoder/"):]: archive[name].copy()
            for name in archive.files
            if name.startswith("decoder/")
        }
        shape = meta["decoder"]
        params = DecoderParams(
            tensors=tensors,
            d_model=shape["d_model"],
            layer_count=shape["layer_count"],
            head_count=shape["head_count"],
            vocab_size=shape["vocab_size"],
            max_target_len=shape["max_target_len"],
            max_memory_len=shape["max_memory_len"],
            use_memory_positions=shape["use_memory_positions"],
            merged=shape["merged"],
        )
        adapters: dict[str, LoraAdapter] = {}
        for target, info in meta["adapters"].items():
            adapters[target] = LoraAdapter(
                target=target,
                A=archive[f"adapter/{target}/A"].copy(),
                B=archive[f"adapter/{target}/B"].copy(),
                rank=info["rank"],
                alpha=info["alpha"],
            )
    return params, adapters, meta
