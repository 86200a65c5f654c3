"""Group-robust recalibration of frozen vision-language embeddings.

The pipeline: train a linear projection head by cross-entropy against
fixed class anchors (ERM), collect the training samples that head gets
wrong as calibration anchors, then recalibrate the head with a
contrastive loss that pulls each anchor toward an EMA centroid of its
class and pushes it from other classes, while a holistic cosine loss
over the full training set keeps the rest of the embedding space in
place. Selection and evaluation use worst-group accuracy.
"""

__version__ = "0.1.0"

from .data import (ClassAnchors, EmbeddingDataset, SyntheticSpec,
                   generate_synthetic, read_dataset, write_dataset)
from .errors import ConfigError, DataError, NumericError, RecalError
from .head import (ClassifierConfig, ProjectionHead, ce_loss_and_grad,
                   class_scores, forward, forward_batch, init_head,
                   load_head, predict, save_head)
from .losses import CalTerm, LossConfig, calib_loss, cs_loss, total_loss
from .metrics import GroupMetrics, evaluate, export_embeddings, write_metrics_report
from .sampling import (CalibrationSet, CentroidState, SamplerConfig,
                       build_calibration_set, exact_centroid, init_centroids,
                       sample_negative, sample_positive, update_centroid)
from .training import (SgdState, TrainConfig, TrainRecord, sgd_step, sweep,
                       train_cfr, train_erm, write_curve)

__all__ = [
    "__version__",
    "ClassAnchors", "EmbeddingDataset", "SyntheticSpec",
    "generate_synthetic", "read_dataset", "write_dataset",
    "ConfigError", "DataError", "NumericError", "RecalError",
    "ClassifierConfig", "ProjectionHead", "ce_loss_and_grad", "class_scores",
    "forward", "forward_batch", "init_head", "load_head", "predict", "save_head",
    "CalTerm", "LossConfig", "calib_loss", "cs_loss", "total_loss",
    "GroupMetrics", "evaluate", "export_embeddings", "write_metrics_report",
    "CalibrationSet", "CentroidState", "SamplerConfig", "build_calibration_set",
    "exact_centroid", "init_centroids", "sample_negative", "sample_positive",
    "update_centroid",
    "SgdState", "TrainConfig", "TrainRecord", "sgd_step", "sweep",
    "train_cfr", "train_erm", "write_curve",
]
