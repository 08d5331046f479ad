"""Probabilistic proposal-free instance segmentation with uncertainty-guided proofreading."""

from .agglomeration import agglomerate_draws, binarize, binarize_scored, hungarian_max, pairwise_iou_matrix
from .clustering import MeanShiftConfig, assign_instances, mean_shift_modes, resolve_overlaps, segment
from .config import PipelineConfig
from .core import (EmbeddingMap, InstanceMasks, ProbabilisticInstanceMap, SemanticMap, UncertaintyMap,
                   connected_components, iou, masks_from_labelmap)
from .errors import (ConfigError, EmptyInputError, MissingInputError, NpyFormatError, ProbinstError,
                     ShapeMismatchError)
from .evaluation import MetricReport, ScoredPrediction, evaluate, evaluate_dataset, match_at_iou
from .losses import (ConcreteConfig, ConcreteLayerSpec, DiscriminativeConfig, bernoulli_entropy,
                     concrete_dropout_mask, concrete_regularizer, discriminative_loss,
                     discriminative_loss_grad)
from .npyio import read_array, write_array
from .proofreading import apply_corrections, simulate, top_uncertainty_peaks
from .synthetic import NoiseConfig, SceneConfig, generate_scene, simulate_draws, simulate_embeddings
from .uncertainty import (PatchCounts, conditional_probs, entropy_map, patch_counts,
                          uncertainty_curves)

__version__ = "0.1.0"
