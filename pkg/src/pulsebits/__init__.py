"""Multi-bit quantized pulse supervision and coarse-to-fine remote pulse estimation."""

from .types import BandConfig, ClipTensor, PulseTrace, RgbTrace, Spectrum
from .signals import (EVAL_BAND, SNR_BAND, bandpass, hr_from_trace, psd_welch,
                      resample_trace, snr_db, zscore)
from .losses import neg_pearson, spectral_ce
from .codebook import (Assignment, Codebook, assign_codes, ema_update,
                       label_fidelity_mae, uniform_quantize, utilization)
from .blocks import (BiMamba, DilatedConvBlock, PositionalEncoding,
                     param_count, soft_reconstruct)
from .baselines import chrom_method, extract_rgb, green_method, pos_method
from .datagen import GenConfig, gen_clip, gen_pulse, generate_corpus, read_corpus, write_corpus
from .stage1 import LabelQuantizer, PseudoLabelBank
from .stage2 import C2fNet, CoarseToFineEstimator, train_end_to_end
from .evaluation import (hr_metrics, hrv_metrics, standard_errors,
                         wilcoxon_signed_rank)

__version__ = "0.1.0"

__all__ = [
    "BandConfig", "ClipTensor", "PulseTrace", "RgbTrace", "Spectrum",
    "EVAL_BAND", "SNR_BAND", "bandpass", "hr_from_trace", "psd_welch",
    "resample_trace", "snr_db", "zscore",
    "neg_pearson", "spectral_ce",
    "Assignment", "Codebook", "assign_codes", "ema_update",
    "label_fidelity_mae", "uniform_quantize", "utilization",
    "BiMamba", "DilatedConvBlock", "PositionalEncoding", "param_count",
    "soft_reconstruct",
    "chrom_method", "extract_rgb", "green_method", "pos_method",
    "GenConfig", "gen_clip", "gen_pulse", "generate_corpus", "read_corpus",
    "write_corpus",
    "LabelQuantizer", "PseudoLabelBank",
    "C2fNet", "CoarseToFineEstimator", "train_end_to_end",
    "hr_metrics", "hrv_metrics", "standard_errors", "wilcoxon_signed_rank",
]
