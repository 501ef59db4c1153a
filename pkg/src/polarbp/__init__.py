"""Polar codes with weighted min-sum belief-propagation decoding."""
from .bench import BerReport, RunConfig, complexity_report, run_ber_sweep
from .bp import DecoderConfig, MessageGrid, OpCounter, WeightSet, decode, run_decoder
from .channel import ChannelConfig, awgn, channel_llr, modulate_bpsk, sigma_from_snr
from .polar import PolarCode, construct_code, encode, generator_matrix, polar_transform
from .quantize import Codebook, QuantConfig, build_codebook, quantize_fixed, shift_add_multiply
from .train import TrainConfig, loss_and_gradient, train

__all__ = [
    "BerReport", "Codebook", "ChannelConfig", "DecoderConfig", "MessageGrid", "OpCounter",
    "PolarCode", "QuantConfig", "RunConfig", "TrainConfig", "WeightSet", "awgn",
    "build_codebook", "channel_llr", "complexity_report", "construct_code", "decode",
    "encode", "generator_matrix", "loss_and_gradient", "modulate_bpsk", "polar_transform",
    "quantize_fixed", "run_ber_sweep", "run_decoder", "shift_add_multiply",
    "sigma_from_snr", "train",
]
