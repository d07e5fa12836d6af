"""Desk-scale neural transducer toolkit for joint recognition and translation.

Layout:

* ``tensor``     reverse-mode autodiff on numpy arrays
* ``lattice``    exact/pruned transducer and CTC losses, consistency KL
* ``model``      hierarchical encoder, predictor, joiners, checkpoints
* ``augment``    spectrogram masking and paired CR views
* ``synthdata``  seeded synthetic recognition/translation corpus
* ``train``      multi-task losses, Adam, the training loop
* ``decode``     greedy/beam/streaming search with blank penalty
* ``metrics``    token error rate, BLEU, length ratio, real-time factor
* ``config``     flat key = value experiment configs
* ``cli``        synth/train/decode/eval/ablate entry points
"""

from .tensor import (Tensor, Tape, backward, set_precision, precision,
                     DimensionError, NumericError, ContractError)
from .lattice import (transducer_nll, pruned_transducer_nll, ctc_nll,
                      cr_kl, compute_prune_bounds, NoPathError, VocabError)
from .model import (ModelConfig, HierarchicalModel, preset,
                    checkpoint_save, checkpoint_load, CheckpointError)
from .augment import AugmentConfig, spec_augment, two_views
from .synthdata import SynthConfig, gen_dataset, load_dataset, save_dataset
from .train import (TrainConfig, LossWeights, Adam, train_run,
                    multitask_nt_loss, combined_loss, TrainDivergence)
from .decode import (ChunkConfig, Hypothesis, greedy_decode, beam_search,
                     streaming_decode, apply_blank_penalty)
from .metrics import wer, bleu, length_ratio, rtf, EvalReport

__version__ = "0.1.0"
