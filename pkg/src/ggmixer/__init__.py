"""Graph-guided MLP-Mixer for skeleton motion prediction, on a small numpy autodiff engine."""

__version__ = "0.1.0"

from .autodiff import GradCheckReport, Tape, Tensor, backward, grad_check
from .blocks import BlockKind, fusion, plain_block, spatial_block, temporal_block
from .data import (Dataset, MotionSequence, SyntheticSpec, augment_reverse, generate_synthetic,
                   read_motion, window, write_motion)
from .errors import *  # noqa: F401,F403
from .evaluation import (AVERAGED, PER_FRAME, EvalProtocol, MetricsReport, ablation_suite,
                         evaluate, guidance_probe, ms_to_frame)
from .graph import (SkeletonTopology, build_spatial_adjacency, build_temporal_adjacency, chain,
                    h36m_22, normalize_adjacency)
from .network import (Model, NetworkConfig, count_parameters, dct_matrix, forward,
                      init_parameters)
from .training import (TrainConfig, adam_step, load_checkpoint, lr_schedule, mpjpe, mpjpe_loss,
                       save_checkpoint, train)


def __getattr__(name):
    # the estimator pulls in scikit-learn, so import it lazily
    if name == "GraphGuidedMixer":
        from .estimator import GraphGuidedMixer
        return GraphGuidedMixer
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
