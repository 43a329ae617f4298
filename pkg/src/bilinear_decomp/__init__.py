"""Train bilinear MLPs and decompose their weights into eigenvector features."""
from .decompose import (
    change_of_basis,
    class_spectrum,
    decompile,
    eigenvector_activation,
    evaluate_tree,
    hosvd,
    spectrum_for_output,
)
from .linalg import eig_symmetric, pseudo_inverse, svd
from .model import BilinearLayer, BilinearModel, forward, init_model, reduce
from .spectral import accuracy_sweep, spectral_logits, truncate
from .train import TrainConfig, train

__version__ = "0.1.0"
