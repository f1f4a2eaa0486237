"""Latent-vector recovery and denoising on a small DCGAN generator."""

from ._ganproj import (
    ConfigError,
    CorruptionError,
    FormatError,
    GanprojError,
    Generator,
    IoError,
    NumericError,
    RecoveryConfig,
    RecoveryResult,
    ShapeError,
    SharpnessAttribute,
    VersionError,
    add_gaussian_noise,
    apply_sharpness,
    clip_projected,
    denoise,
    denormalize,
    estimate_sharpness,
    load_sharpness,
    load_weights,
    make_generator,
    make_identity_generator,
    make_linear_generator,
    make_random_toy_generator,
    mse_pixels,
    normalize,
    psnr,
    read_image,
    recover,
    selfcheck,
    toy_dataset,
    write_image,
)

__version__ = "0.1.0"
