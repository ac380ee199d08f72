"""Causal 3D-temporal convolutional Transformer for video frame prediction.

Subpackages: autodiff (tensor library), model (the network), datagen
(bouncing-sprite sequences), metrics (PSNR/SSIM/MAE), harness (training
and rollout), cli (command line). Kernel backend selection lives in
backend (TCTN_BACKEND environment variable).
"""

__version__ = "0.1.0"
