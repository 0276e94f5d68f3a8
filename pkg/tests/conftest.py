from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from lkalert import decoder, trainer
from lkalert.text import Vocabulary

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def drive_csv() -> bytes:
    return (FIXTURES / "drive01.csv").read_bytes()


@pytest.fixture()
def tiny_vocab() -> Vocabulary:
    return Vocabulary.build(
        [
            "yes the laneline ahead is badly faded",
            "yes the laneline ahead is occluded",
            "yes there is a sharp curve to the left ahead",
            "no",
            "speed=27.0;steer_deg=0.5;torque=0.10;lka=1;offset_m=0.05",
        ]
    )


@pytest.fixture()
def tiny_model(tiny_vocab):
    """Small decoder + fresh adapters + a random memory batch."""
    params = decoder.init_decoder(
        vocab_size=len(tiny_vocab), d_model=32, layer_count=2, head_count=4,
        max_target_len=24, seed=3,
    )
    adapters = decoder.init_adapters(params, rank=4, alpha=8.0, seed=5)
    rng = np.random.default_rng(17)
    memories = rng.normal(0.0, 0.3, size=(2, 9, 32))
    ids = trainer.pad_targets(
        [
            trainer.encode_target(tiny_vocab, "yes the laneline ahead is badly faded", 24),
            trainer.encode_target(tiny_vocab, "no", 24),
        ]
    )
    return params, adapters, memories, ids, tiny_vocab
