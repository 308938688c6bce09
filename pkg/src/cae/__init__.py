"""Class association embedding toolkit.

A cyclic adversarial encoder-decoder splits each sample into a class-style
code and an individual-style code; walking guided paths in class-style space
synthesizes counterfactual series and saliency maps for any black-box
classifier.
"""

from .core import (
    ClassLabel,
    ClassStyleCode,
    Dataset,
    ImageTensor,
    IndividualStyleCode,
    LabeledSample,
    RandomStream,
)

__version__ = "0.1.0"

__all__ = [
    "ClassLabel",
    "ClassStyleCode",
    "Dataset",
    "ImageTensor",
    "IndividualStyleCode",
    "LabeledSample",
    "RandomStream",
    "__version__",
]
