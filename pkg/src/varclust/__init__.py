"""Clustering of vector time series with mixtures of VAR models."""

from .core import (
    Assignment,
    FitFailure,
    InitFailure,
    InsufficientData,
    InvalidArgument,
    InvalidCovariance,
    MixtureParams,
    NumericFailure,
    SimulationFailure,
    TimeSeries,
    TimeSeriesSet,
    VarclustError,
    VarComponent,
    load_dataset_csv,
    save_dataset_csv,
)
from .varfit import build_qr_cache, fit_var_ols
from .cmvar import CmvarConfig, CmvarResult, fit_cmvar
from .klmvar import KlmvarConfig, KlmvarResult, fit_klmvar, naive_two_step
from .modelsel import bic_surface, extended_bic, model_space_cardinality
from .metrics import nmi, rand_index
from .datagen import DatasetSpec, generate_dataset
from .kernels import BACKEND

__version__ = "0.1.0"
