"""Deep Phase Decoder: blind quantitative phase retrieval with an untrained decoder."""
__version__ = "0.1.0"

from .decoder import DecoderConfig, DecoderWeights, SeedTensor, decoder_forward, init_decoder
from .field import ComplexField, FocusStack, Grid2D, RealImage
from .forward import MeasurementModel, forward_stack
from .grad import dpd_loss_and_grad, wf_loss_and_grad
from .sim import NoiseSpec, TargetSpec, compare_phase, make_target, simulate_stack
from .solvers import (DivergenceError, RmsPropConfig, WirtingerConfig, solve_dpd,
                      solve_wirtinger)
from .zernike import PupilGeometry, ZernikeBasis, defocus_pupil, make_zernike_basis

__all__ = [
    "ComplexField", "DecoderConfig", "DecoderWeights", "DivergenceError", "FocusStack",
    "Grid2D", "MeasurementModel", "NoiseSpec", "PupilGeometry", "RealImage",
    "RmsPropConfig", "SeedTensor", "TargetSpec", "WirtingerConfig", "ZernikeBasis",
    "compare_phase", "decoder_forward", "defocus_pupil", "dpd_loss_and_grad",
    "forward_stack", "init_decoder", "make_target", "make_zernike_basis",
    "simulate_stack", "solve_dpd", "solve_wirtinger", "wf_loss_and_grad",
]
