"""Dynamic convolution with four-branch kernel attention, in plain numpy.

The package covers the numerics (dense tensors, a reverse-mode tape,
convolution and attention primitives), the dynamic layer itself with its
degenerate single-branch variants, cost accounting against a bundled
architecture catalog, a synthetic training harness, bit-exact
checkpointing, and a CLI that drives verification oracles.
"""

from .archspec import ArchSpec, DynamicSpec, load_zoo_arch, parse_arch, zoo_names
from .autodiff import Tape, backward, finite_diff_check, record
from .complexity import (CostReport, check_references, cost_report,
                         count_madds, count_params, odconv_extra_madds)
from .errors import (ArchError, ContractError, FormatError, NumericError,
                     OdconvError, ParameterError, ShapeError, SizeError,
                     TopologyError, VerificationError)
from .layer import (AttentionParams, AttentionSet, ODConvConfig,
                    TemperatureSchedule, attention_forward, combine_kernels,
                    hidden_width, init_layer, odconv_forward, odconv_nodes)
from .model import (ODConvUnit, SequentialModel, StaticConv2d,
                    build_toy_model, model_from_config)
from .ops import (ConvGeometry, KernelSet, avgpool2d, conv2d,
                  conv2d_per_sample, fully_connected,
                  softmax_with_temperature)
from .persistence import Checkpoint, load_checkpoint, save_checkpoint
from .training import (OptimizerState, SyntheticDataset, TrainRecord,
                       collect_attention_stats, cross_entropy_loss,
                       evaluate, sgd_step, train)
from .verify import PropertyResult, gradcheck_layer, run_properties

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
