"""gridedit: desk-scale in-context image editing.

Visual-prompt grids condition a miniature diffusion model through
zero-initialized state-space injection blocks; editing-shift matching and
selective area matching shape training; instructions are canonicalized by a
unification provider; a procedural pipeline generates paired-editing data.
"""

from .config import (DatasetConfig, ModelConfig, ProviderConfig, TrainConfig)
from .diffusion import (DenoiserState, build_state, forward_noise,
                        load_checkpoint, predict_noise, reconstruct_x0,
                        sample, save_checkpoint)
from .errors import ProtocolError, ValidationError
from .evaluation import EvalReport, evaluate_split
from .grid import (DEFAULT_GREY, bottom_right, compose, decompose,
                   mask_example, mask_query)
from .instructions import InstructionRecord, augment_batch, unify_for_inference
from .metrics import directional_similarity, feature_distance
from .providers import (Embedder, InstructionUnifier, MockEmbedder,
                        MockSegmenter, MockUnifier, Segmenter, build_providers)
from .schedule import NoiseSchedule
from .selective import SelectiveMask, build_mask, selective_area_loss
from .shift import editing_shift, editing_shift_loss, training_shift_loss
from .ssm import InjectionBlock, Ss2dBlock, cross_merge, cross_scan, inject
from .training import TrainReport, apply_dropout, train, train_step

__version__ = "0.1.0"
