"""Physics-informed neural networks for hydrogen crossover in PEM electrolyzers.

Module map:

* :mod:`h2xpinn.physics` - analytical transport model and residuals
* :mod:`h2xpinn.data` - CSV ingestion, encoding, scaling, splits, augmentation
* :mod:`h2xpinn.network` - dense network with hand-written backpropagation
* :mod:`h2xpinn.training` - composite loss, Adam loop, cross-validation
* :mod:`h2xpinn.uncertainty` - deep ensembles, calibration, sensitivity
* :mod:`h2xpinn.inference` - fusion, prediction, extrapolation study, latency bench
* :mod:`h2xpinn.cli` - command-line entry point
"""
from .data import AugmentConfig, Dataset, OperatingPoint, SplitSpec, augment, load_csv, normalize, stratified_split
from .inference import FusionConfig, bench, extrapolation_study, fuse, predict
from .network import Mlp, load_checkpoint, save_checkpoint
from .physics import PhysicsParams, crossover_concentration, physics_residuals, transport_state
from .training import CvPlan, TrainConfig, cross_validate, train
from .uncertainty import predict_with_uncertainty, train_ensemble

__version__ = "0.1.0"
