"""Scenario-aware speech features from triplet-trained window embeddings."""

from .corpus import (Manifest, ManifestEntry, ScenarioSpec, default_scenarios,
                     generate_corpus, load_manifest, save_manifest,
                     synthesize_utterance)
from .dsp import (DspConfig, LogMelSpectrogram, MelConfig, MfccMatrix,
                  Waveform, WindowSequence, context_windows, log_mel, mfcc)
from .evaluation import (EvalReport, evaluate_corpus, kmeans_purity,
                         linear_probe, pca_2d, project_2d, rank_auc,
                         same_diff_auc, tsne_2d)
from .features import (AssembledFeature, ScenarioVector, assemble_features,
                       embed_utterance, scenario_vector)
from .matrixio import load_matrix, save_matrix
from .model import (EmbeddingModel, Gradients, LossReport, backward, forward,
                    forward_batch, init_model, load_checkpoint,
                    save_checkpoint, triplet_loss)
from .pipeline import ClipFeatures, load_clip_features
from .sampling import (Batch, SamplerConfig, Triplet, WindowRef,
                       assemble_batch, mine_semi_hard, sample_triplets,
                       tau_windows)
from .training import (AdamState, ModelConfig, TrainConfig,
                       TrainingDivergedError, adam_step,
                       compute_normalization_stats, init_adam, train)
from .wavio import load_waveform, save_waveform

__version__ = "0.1.0"
