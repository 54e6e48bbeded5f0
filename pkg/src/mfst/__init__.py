"""Multi-stage factorized spatio-temporal RGB-D action/gesture recognition."""

from .tensor import (Tensor, Parameter, ShapeError, no_grad, backward,
                     zero_grads, conv3d, maxpool3d, linear, layer_norm,
                     softmax, log_softmax, relu, gelu, activation)
from .gradcheck import finite_diff_check
from .cdc import CdcConfig, cdc_conv3d, cdc_st_conv3d, cdc_t_conv3d, naive_cdc_oracle
from .attention import (AttentionConfig, TransformerLayer, knn_attention,
                        build_positional_table, add_positional)
from .config import (ConfigError, ModelConfig, OptimizerConfig, RunConfig,
                     StageConfig, mfst_base, mfst_large,
                     run_config_from_json, run_config_to_json)
from .model import MfstModel, fuse_modalities
from .data import (CLASSES, DatasetSpec, VideoClip, FormatError, gen_clip,
                   gen_dataset, read_dataset, write_dataset, mixup, one_hot)
from .optim import SgdOptimizer, lr_at
from .checkpoint import Checkpoint, save_checkpoint, load_checkpoint
from .train import Metrics, train, evaluate, evaluate_fused, cross_entropy
from .verify import run_verify

__version__ = "0.1.0"
