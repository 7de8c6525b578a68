"""Regression and classification on very many random binary features."""

from .bitfeatures import BitMatrix, FeatureBank, FeatureSpec, apply_bank, correlate, generate_bank, score
from .dataio import Dataset, DataError, load_csv, simulate_sine, standardize_apply, standardize_fit, kfold_split
from .model import RbrModel, TrainConfig, cross_validate, load_model, predict, save_model, train
from .solver import LbfgsConfig, SolveReport, fit, lbfgs_minimize, logistic_loss_grad, ridge_loss_grad

__version__ = "0.1.0"
