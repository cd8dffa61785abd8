"""deepuq: model, data, and distributional uncertainty for small image classifiers.

Three scores, three sources:
  * model uncertainty   — spread of an ensemble of identically-architected,
                          differently-initialized networks (ensemble module);
  * data uncertainty    — the softplus tail/gap ratio plus the max-softmax
                          and MC-dropout baselines (scores module);
  * distributional      — reconstruction error of a jointly supervised
                          autoencoder, or the mass an unknown-class ensemble
                          assigns to "none of the above" (sae / ensemble).

The evalharness module turns any of these scores into threshold sweeps,
TPR/FPR operating points and AUROC; the cli module wires it all into
reproducible runs.
"""

from . import data, ensemble, evalharness, nn, sae, scores, synth, tensor
from .tensor import Rng

__version__ = "0.1.0"

__all__ = [
    "Rng",
    "data",
    "ensemble",
    "evalharness",
    "nn",
    "sae",
    "scores",
    "synth",
    "tensor",
    "__version__",
]
