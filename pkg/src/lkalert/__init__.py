"""Lane-keeping-assist failure alerting toolkit.

Mines LKA failure events out of synchronized telemetry, assembles a
mask-guided multimodal alert dataset with human review, trains a small
LoRA-adapted encoder-decoder that emits a Yes/No alert plus a textual
explanation, and evaluates it with classification, BLEU/ROUGE and
throughput metrics.
"""

__version__ = "0.1.0"

from lkalert.errors import LKAlertError

__all__ = ["LKAlertError", "__version__"]
