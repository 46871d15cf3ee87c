"""Template-generation toolkit for document-level role-filler entity
extraction and N-ary relation extraction."""

from .codec import (CodecConfig, ParsedTemplate, ParseWarning, SlotLayout,
                    SlotNameStyle, WarningKind, decode_predictions,
                    encode_targets, ground, parse, render_text)
from .corpus import (Dataset, DataError, Document, Entity, Example,
                     GoldTemplate, Mention, SlotFill, SynthConfig, TaskKind,
                     load_dataset, save_dataset, split, synth_generate)
from .decoding import BeamResult, beam_search, greedy, greedy_batch
from .evaluation import (Assignment, PRF, SignificanceResult, ceaf_ree,
                         kuhn_munkres, paired_bootstrap, relation_f1)
from .model import (ForwardTrace, ModelConfig, Seq2SeqTransformer, attention,
                    grad_check, init_model, load_checkpoint, save_checkpoint)
from .reports import EvalReport, evaluate_predictions, format_report_table
from .topk_copy import (CopyConfig, CopyMode, copy_distribution,
                        final_distribution, generation_prob, head_scores,
                        mixture_from_trace, nll_loss, scatter_to_vocab,
                        select_topk)
from .training import TrainConfig, train, truncate_or_skip
from .vocab import Vocab, build_vocab

__version__ = "0.1.0"
