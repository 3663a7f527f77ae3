"""Vocabulary, InkML input, rasterisation, synthetic data and batching."""

from .batch import BiBatch, Sample, make_bibatch, pad_images, strip_core
from .inkml import InkMLError, StrokeSet, parse_inkml, read_inkml, strip_math
from .raster import load_image, rasterize, save_image
from .synth import generate_expression, layout, synth_generate
from .vocab import EOS, PAD, SOS, TokenizeError, Vocab, canonical, detokenize, load_default_vocab, tokenize

__all__ = [
    "BiBatch", "EOS", "InkMLError", "PAD", "SOS", "Sample", "StrokeSet", "TokenizeError", "Vocab",
    "canonical", "detokenize", "generate_expression", "layout", "load_default_vocab", "load_image",
    "make_bibatch", "pad_images", "parse_inkml", "rasterize", "read_inkml", "save_image",
    "strip_core", "strip_math", "synth_generate", "tokenize",
]
