"""Learnable piecewise-linear FIR filter banks for raw-waveform classification.

The filter layer (``PFNetFrontEnd``) parameterizes each band-pass filter by
a few frequency-domain knots and synthesizes its taps in closed form.  The
package also holds a rectangular band-pass baseline, free FIR taps, a small
numpy CNN head, a synthetic speaker corpus, metrics and a CLI.
"""
__version__ = "0.1.0"

from .config import ExperimentConfig, load_config
from .data import Corpus, SynthSpec, Trial, Utterance, prepare_frames, read_manifest, synth_corpus, write_corpus
from .errors import (CacheError, ConfigError, DataError, DivergenceError, InvariantError, PFNetError,
                     PreconditionError, ShapeError, WavFormatError)
from .estimator import FilterBankTransformer, PFNetClassifier
from .experiment import RunRecord, evaluate, train_loop
from .filters import (FilterBankParams, FilterSpec, FrequencyKnots, filterbank_backward, filterbank_forward,
                      init_filterbank, resolve_knots, response_fidelity, sinc_bandpass_kernel, synthesize_kernel,
                      target_response)
from .frontends import PFNetFrontEnd, RawFIRFrontEnd, SincNetFrontEnd, make_front_end
from .metrics import MetricsReport, classification_error_rate, eer, frame_error_rate, sentence_vote
from .model import Network, build_network, predict_proba

__all__ = [
    "CacheError", "ConfigError", "Corpus", "DataError", "DivergenceError", "ExperimentConfig",
    "FilterBankParams", "FilterBankTransformer", "FilterSpec", "FrequencyKnots", "InvariantError",
    "MetricsReport", "Network", "PFNetClassifier", "PFNetError", "PFNetFrontEnd", "PreconditionError",
    "RawFIRFrontEnd", "RunRecord", "ShapeError", "SincNetFrontEnd", "SynthSpec", "Trial", "Utterance",
    "WavFormatError", "build_network", "classification_error_rate", "eer", "evaluate", "filterbank_backward",
    "filterbank_forward", "frame_error_rate", "init_filterbank", "load_config", "make_front_end",
    "predict_proba", "prepare_frames", "read_manifest", "resolve_knots", "response_fidelity",
    "sentence_vote", "sinc_bandpass_kernel", "synth_corpus", "synthesize_kernel", "target_response",
    "train_loop", "write_corpus",
]
