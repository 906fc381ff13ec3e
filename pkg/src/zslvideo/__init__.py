"""Zero-shot video classification on precomputed clip features."""

__version__ = "0.1.0"

from .curation import ClassSet, CurationResult, class_distance, filter_training_classes, nearest_test_class_report
from .encoder import (AdamState, LinearEncoder, TrainConfig, TrainHistory, adam_step, batch_gradient, batch_loss,
                      forward, train)
from .evaluate import (ConfusionMatrix, EvalReport, GeneralizationCurve, classify, confusion_matrix, evaluate_full,
                       evaluate_protocol1, generalization_curve)
from .features import LabeledDataset, VideoFeatures, load_feature_store, pool_inference_features, sample_training_snippet
from .wordvec import ClassName, WordVectorTable, cosine_distance, embed_class, load_word_vectors
