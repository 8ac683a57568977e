"""Text-guided two-stage style generation on a small numpy autodiff."""
from .autodiff import Tensor, backward, no_grad
from .codec import ImageCodec, StylePair, adain_merge, style_extract
from .config import PRESETS, TrainConfig, get_preset
from .model import TSGModel

__all__ = ["Tensor", "backward", "no_grad", "ImageCodec", "StylePair", "adain_merge",
           "style_extract", "PRESETS", "TrainConfig", "get_preset", "TSGModel"]
__version__ = "0.1.0"
