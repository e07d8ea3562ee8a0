"""Prompt-conditioned generative compressed sensing with Christoffel sampling."""

from .errors import (CapacityError, DegenerateClassError, DivergenceError, InvalidInputError,
                     ModeConflictError, NoCertificateError, OutOfBallError, PromptCSError,
                     UnknownConditionError)
from .signals import Signal, Spectrum, dft, idft, psnr, sample_coefficient

__version__ = "0.1.0"

__all__ = ["CapacityError", "DegenerateClassError", "DivergenceError", "InvalidInputError",
           "ModeConflictError", "NoCertificateError", "OutOfBallError", "PromptCSError",
           "UnknownConditionError", "Signal", "Spectrum", "dft", "idft", "psnr",
           "sample_coefficient"]
