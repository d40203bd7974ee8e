"""Neural backends for the seedner wire protocol.

Two server roles, spoken over line-delimited JSON (see the host
package's docs/protocol.md):

- tagger: a token classifier fine-tuned with a noise-tolerant smoothed
  generalized cross-entropy loss; reports calibrated per-span
  confidences.
- mlm: a masked-LM cloze scorer for candidate exemplars.

Both default to small randomly initialized local models (identifier
``tiny-random``) so the stack runs without downloads; any other
identifier is resolved through `transformers` (the ``hf`` extra).
"""

from .gce import IGNORE_INDEX, smoothed_gce_loss
from .mlm_server import MlmService
from .mlm_server import serve as serve_mlm
from .models import (
    PluginConfig,
    TinyMaskedLM,
    TinyTokenTagger,
    TrainedTagger,
    build_masked_lm,
    train_tagger,
)
from .protocol import (
    PROTOCOL_VERSION,
    Client,
    Connection,
    ProtocolError,
    Server,
    TransportError,
    parse_endpoint,
)
from .tagger_server import TaggerService
from .tagger_server import serve as serve_tagger

__all__ = [
    "IGNORE_INDEX",
    "smoothed_gce_loss",
    "MlmService",
    "serve_mlm",
    "PluginConfig",
    "TinyMaskedLM",
    "TinyTokenTagger",
    "TrainedTagger",
    "build_masked_lm",
    "train_tagger",
    "PROTOCOL_VERSION",
    "Client",
    "Connection",
    "ProtocolError",
    "Server",
    "TransportError",
    "parse_endpoint",
    "TaggerService",
    "serve_tagger",
]
