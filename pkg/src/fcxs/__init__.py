"""Fully convolutional multi-class segmentation on a numpy autodiff core.

Four encoder/decoder architectures (a classic five-level net, a
Gaussian-dropout variant, an all-convolutional variant with learned
pooling, and an inverted wide-first variant with delayed subsampling),
class-frequency-weighted Dice / cross-entropy objectives, Adam, and a
full evaluation protocol: thresholded overlap metrics, symmetric
surface distance, majority-vote ensembling, and exact Wilcoxon
signed-rank significance tests.

Quick start::

    from fcxs import FCNSegmenter
    from fcxs.data import synth_generate
    import numpy as np

    samples = synth_generate(8, 64, seed=0)
    X = np.stack([s.image[0] for s in samples])
    y = np.stack([s.masks for s in samples])
    model = FCNSegmenter(arch="invertednet", base_channels=32, lr=1e-3, epochs=50)
    model.fit(X, y)
    masks = model.predict(X)
"""

from .errors import ConfigError, DataError, FcxsError, GraphStateError, NumericError, ShapeError
from .estimator import FCNSegmenter
from .losses import LossConfig
from .models import ArchConfig, Network, build_network, count_parameters, ensemble_predict
from .rng import Rng
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "ConfigError",
    "DataError",
    "FCNSegmenter",
    "FcxsError",
    "GraphStateError",
    "LossConfig",
    "Network",
    "NumericError",
    "Rng",
    "ShapeError",
    "Tensor",
    "build_network",
    "count_parameters",
    "ensemble_predict",
    "__version__",
]
