"""Out-of-core painting style transfer with exact blockwise gradients."""

from .errors import (ConfigError, DegenerateStdWarning, EmptyError, FormatError,
                     GeometryError, NonFiniteError, ShapeError)
from .extractor import (ExtractorSpec, LayerSpec, Preprocess, TapGeometry,
                        forward_taps, load_weights, save_weights, tap_geometry,
                        tinynet, vgg19)
from .lbfgs import LBFGSConfig, LBFGSState, minimize, two_loop_direction
from .localized import (TransferProblem, build_problem, loss_grad,
                        loss_grad_global, stats_pass, track_activations)
from .metrics import IdentityReport, gram_distance, identity_test, psnr, ssim
from .pipeline import (RunConfig, Schedule, make_schedule, multiscale_transfer,
                       scale_dims, texture_synthesize)
from .stats import (LayerStats, LossWeights, StatsAccumulator, TapWeights,
                    content_loss_grad, default_loss_weights, style_layer_loss_grad)
from .tensorops import resize_bilinear, resize_down, resize_up2
from .tiling import Block, BlockGrid, Rect, feature_inner_crop, margin_for_exact_gradient, partition

__version__ = "0.1.0"
