"""End-to-end wiring: dataset files -> encoded tensors -> training -> reports.

Seed policy for a master seed S: the frozen encoder uses S, decoder base
init uses S + 11, adapter init and batch order come from the training
config (S and S + 1 inside the trainer). Every derived artifact is then
a pure function of (dataset bytes, config, S).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from lkalert import dataset as ds
from lkalert import decoder, encoder, metrics, trainer
from lkalert.errors import LKAlertError
from lkalert.text import Vocabulary

GENERATION_MAX_LEN = 32


class PipelineError(LKAlertError):
    pass


def load_encoder_inputs(sample: ds.AlertSample, root: Path, image_size: int) -> encoder.EncoderInputs:
    """Load and size one sample's image and masks from the dataset root."""
    image = Image.open(root / sample.image_ref).convert("RGB")
    if image.size != (image_size, image_size):
        image = image.resize((image_size, image_size), Image.BILINEAR)
    binary = Image.open(root / sample.binary_mask_ref).convert("L")
    instance = Image.open(root / sample.instance_mask_ref).convert("L")
    if binary.size != (image_size, image_size):
        binary = binary.resize((image_size, image_size), Image.NEAREST)
    if instance.size != (image_size, image_size):
        instance = instance.resize((image_size, image_size), Image.NEAREST)
    return encoder.EncoderInputs(
        image=np.asarray(image, dtype=np.uint8),
        binary_mask=np.asarray(binary, dtype=np.uint8),
        instance_mask=np.asarray(instance, dtype=np.uint8),
        can_text=sample.can_text,
    )


def build_vocab(samples: list[ds.AlertSample]) -> Vocabulary:
    """Vocabulary over the training corpus: CAN snapshots plus rendered targets."""
    corpus = [s.can_text for s in samples]
    corpus += [trainer.render_target(s.label, s.explanation) for s in samples]
    return Vocabulary.build(corpus)


def encode_samples(
    params: encoder.FrozenEncoderParams,
    samples: list[ds.AlertSample],
    root: Path,
    guided: bool,
) -> list[np.ndarray]:
    out = []
    for sample in samples:
        inputs = load_encoder_inputs(sample, root, params.config.image_size)
        out.append(encoder.encode(params, inputs, guided=guided).tokens)
    return out


def make_predict(
    enc_params: encoder.FrozenEncoderParams,
    dec_params: decoder.DecoderParams,
    adapters: dict[str, decoder.LoraAdapter],
    root: Path,
    guided: bool,
    max_len: int = GENERATION_MAX_LEN,
):
    """Closure evaluating one AlertSample end to end (encode + generate)."""

    def predict(sample: ds.AlertSample) -> decoder.GenerationOutput:
        inputs = load_encoder_inputs(sample, root, enc_params.config.image_size)
        fused = encoder.encode(enc_params, inputs, guided=guided)
        return decoder.generate(dec_params, adapters, fused.tokens, enc_params.vocab, max_len=max_len)

    return predict


@dataclass
class TrainResult:
    checkpoint_path: Path
    vocab_path: Path
    log_path: Path
    log: list[trainer.TrainLogEntry]
    final_report: metrics.EvalReport | None


def split_samples(samples: list[ds.AlertSample]) -> tuple[list[ds.AlertSample], list[ds.AlertSample]]:
    train = [s for s in samples if s.split == "train"]
    val = [s for s in samples if s.split == "val"]
    return train, val


def train_pipeline(
    data_root: Path | str,
    out_dir: Path | str,
    train_cfg: trainer.TrainConfig,
    enc_cfg: encoder.EncoderConfig | None = None,
    master_seed: int | None = None,
) -> TrainResult:
    """Train adapters on a dataset directory and write the run artifacts.

    Writes checkpoint.npz, vocab.txt, and train_log.jsonl under out_dir.
    The checkpoint stores the encoder config and seed (its tables are
    regenerated on load) and the vocabulary hash for integrity.
    """
    root = Path(data_root)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = train_cfg.seed if master_seed is None else master_seed
    enc_cfg = enc_cfg if enc_cfg is not None else encoder.EncoderConfig(guided=train_cfg.guided)

    samples = ds.read_dataset(root / "dataset.jsonl")
    train_samples, val_samples = split_samples(samples)
    if not train_samples:
        raise PipelineError("dataset has no train split")

    vocab = build_vocab(train_samples)
    enc_params = encoder.init_frozen(enc_cfg, vocab, seed=seed)
    dec_params = decoder.init_decoder(
        vocab_size=len(vocab),
        d_model=enc_cfg.d_model,
        max_memory_len=max(128, enc_cfg.token_count(True)),
        seed=seed + 11,
    )

    guided = train_cfg.guided
    memories = encode_samples(enc_params, train_samples, root, guided)
    items = [
        (
            memory,
            trainer.encode_target(
                vocab,
                trainer.render_target(s.label, s.explanation),
                dec_params.max_target_len,
            ),
        )
        for memory, s in zip(memories, train_samples)
    ]

    val_eval = None
    if train_cfg.eval_every > 0 and val_samples:

        def val_eval(adapters: dict, step: int) -> dict:
            predict = make_predict(enc_params, dec_params, adapters, root, guided)
            report = metrics.evaluate(predict, val_samples)
            return report.to_dict()

    adapters, log = trainer.train(dec_params, items, train_cfg, val_eval=val_eval)

    vocab_path = out / "vocab.txt"
    vocab.save(vocab_path)
    checkpoint_path = out / "checkpoint.npz"
    decoder.save_checkpoint(
        checkpoint_path,
        dec_params,
        adapters,
        meta={
            "encoder_config": asdict(enc_cfg),
            "encoder_seed": seed,
            "vocab_sha256": vocab.sha256,
            "guided": guided,
            "train_config": asdict(train_cfg),
        },
    )
    log_path = out / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        for entry in log:
            fh.write(json.dumps(asdict(entry), sort_keys=True) + "\n")

    final_report = None
    if val_samples:
        predict = make_predict(enc_params, dec_params, adapters, root, guided)
        final_report = metrics.evaluate(predict, val_samples)
    return TrainResult(checkpoint_path, vocab_path, log_path, log, final_report)


@dataclass
class LoadedBundle:
    enc_params: encoder.FrozenEncoderParams
    dec_params: decoder.DecoderParams
    adapters: dict[str, decoder.LoraAdapter]
    guided: bool
    meta: dict


def load_bundle(checkpoint_path: Path | str, vocab_path: Path | str | None = None) -> LoadedBundle:
    """Rebuild a full model from a checkpoint plus its vocabulary file."""
    checkpoint_path = Path(checkpoint_path)
    if vocab_path is None:
        vocab_path = checkpoint_path.parent / "vocab.txt"
    dec_params, adapters, meta = decoder.load_checkpoint(checkpoint_path)
    vocab = Vocabulary.load(vocab_path)
    if vocab.sha256 != meta["vocab_sha256"]:
        raise PipelineError("vocabulary file does not match the checkpoint hash")
    enc_cfg = encoder.EncoderConfig(**meta["encoder_config"])
    enc_params = encoder.init_frozen(enc_cfg, vocab, seed=meta["encoder_seed"])
    return LoadedBundle(
        enc_params=enc_params,
        dec_params=dec_params,
        adapters=adapters,
        guided=meta["guided"],
        meta=meta,
    )


def evaluate_checkpoint(
    checkpoint_path: Path | str,
    data_root: Path | str,
    split: str = "val",
    vocab_path: Path | str | None = None,
) -> metrics.EvalReport:
    root = Path(data_root)
    bundle = load_bundle(checkpoint_path, vocab_path)
    samples = ds.read_dataset(root / "dataset.jsonl")
    chosen = [s for s in samples if s.split == split]
    if not chosen:
        raise PipelineError(f"no samples in split {split!r}")
    predict = make_predict(bundle.enc_params, bundle.dec_params, bundle.adapters, root, bundle.guided)
    return metrics.evaluate(predict, chosen)
