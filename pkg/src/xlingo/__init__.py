"""xlingo: desk-scale multilingual NMT encoder transfer and zero-shot
classification toolkit.

Subpackages cover a float64 autodiff core with compiled kernels, a shared
BPE vocabulary, an LSTM encoder-decoder translation model, encoder-reusing
classifiers, checkpoint transplant/averaging, synthetic cipher-language
testbeds, and an experiment CLI.
"""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
