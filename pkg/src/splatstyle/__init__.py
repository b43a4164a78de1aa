"""Intensity-tunable appearance editing for Gaussian splat scenes.

The package renders scenes of anisotropic 3D Gaussians with analytic
gradients, attaches trainable per-primitive offset fields whose strength is
steered by a bucketed intensity tuner, fits those fields against stylized
target views, and ships the supporting pipeline: procedural stylization,
cross-view target alignment, consistency metrics, a command-line interface,
and a small HTTP rendering service.
"""

__version__ = "0.1.0"
