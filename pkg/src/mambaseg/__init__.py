"""mambaseg: a self-contained engine for lightweight Mamba-powered
U-shaped lesion segmentation — tensors with reverse-mode autodiff, the
network family, losses, metrics, an efficiency auditor, and a desk-scale
trainer. The selective-scan recurrence runs in a compiled kernel when the
extension is built, with a pure-numpy fallback selected at import.
"""

from ._kernels import BACKEND as SCAN_BACKEND
from .net import NetConfig, NetOutput, build, forward, load_checkpoint, save_checkpoint
from .tensor import ParamStore, Tensor, backward, finite_diff, make, no_grad

__version__ = "0.1.0"

__all__ = [
    "SCAN_BACKEND", "NetConfig", "NetOutput", "build", "forward",
    "load_checkpoint", "save_checkpoint", "ParamStore", "Tensor",
    "backward", "finite_diff", "make", "no_grad", "__version__",
]
