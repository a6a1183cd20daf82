"""Prototype-contrastive losses and neural-collapse tooling on the unit hypersphere."""
__version__ = "0.1.0"

from ._backend import COMPILED as HAS_COMPILED_KERNELS  # noqa: E402
from .classify import Classifier, fixed_prototypes, predict, train_ce_probe, train_normalized_probe  # noqa: E402
from .encoder import MlpSpec, SyntheticDataset, TrainConfig, augment, make_blobs, train_encoder  # noqa: E402
from .geometry import EmbeddingBatch, EtfFrame, PrototypeSet, class_means, normalize_rows, simplex_etf  # noqa: E402
from .losses import (  # noqa: E402
    ce_loss, lstar_loss, nonl_loss, normface_loss, ntce_loss, proto_loss, scl_loss,
)
from .metrics import NCReport, convergence_iteration, effective_rank, nc_report  # noqa: E402
from .optim import OptimConfig, ufm_optimize  # noqa: E402
