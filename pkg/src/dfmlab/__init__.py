"""Adversarial robustness workbench around decoupled feature masking.

A small numpy-backed autodiff engine, block-partitioned CNN backbones,
pluggable feature-masking units, white-box gradient attacks (FGSM, PGD,
EOT-PGD), a two-phase adversarial-training pipeline and feature-distribution
diagnostics.
"""

from .attacks import AttackConfig, craft, eot_pgd, fgsm, pgd
from .checkpoint import CheckpointState, load_checkpoint, save_checkpoint
from .config import RunConfig, default_config, load_config
from .data import Dataset, load_cifar10, load_mnist
from .evaluate import (EvalReport, FeatureStats, export_features,
                       feature_stats, robust_accuracy)
from .gradcheck import finite_difference, grad_check
from .masking import (DecoupledNet, DfmUnit, MaskPair, decouple, dfm_forward,
                      insert_dfm, sample_mask, set_masking_mode)
from .nets import ArchitectureSpec, BlockModel, build_model, forward_with_taps
from .rng import stream
from .tensor import (Tensor, backward, batchnorm, conv2d, elementwise,
                     hadamard, linear, no_grad, pool_and_norm, relu,
                     softmax_cross_entropy)
from .trainer import (SgdState, TrainPlan, TrainState, restore_training,
                      sgd_step, train_phase1, train_phase2,
                      training_checkpoint)

__version__ = "0.1.0"
