"""flextune: adapt a pretrained convnet by fine-tuning exactly one unit,
chosen automatically by exhaustive, surgery-proxy, or one-epoch-proxy
selection, and benchmark against standard fine-tuning baselines."""

from .architectures import build_network, init_network
from .config import ExperimentConfig, load_config, parse_config
from .data import (DataError, LabeledDataset, SplitSpec, apply_shift,
                   load_idx, subsample_and_split, synth_dataset)
from .network import (Network, TrainableMask, Unit, apply_mask,
                      load_checkpoint, network_forward, save_checkpoint,
                      surgery)
from .selection import (CandidateId, SelectionReport, attach_pixel_unit,
                        baseline, fast_flex_tune, faster_flex_tune, flex_tune)
from .training import (CostLedger, EarlyStopConfig, FineTuneOutcome,
                       TrainConfig, evaluate_accuracy, fine_tune,
                       ledger_summary)

__version__ = "0.1.0"
