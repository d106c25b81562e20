"""Generalized estimating equations for age-specific death rates."""
from .dataio import MortalityRecord, PanelDataset, load_csv, load_mx, to_panel
from .design import DesignMatrix, KtSeries, ModelSpec, build_design, compute_kt, future_design
from .gee import GeeFit, WorkingCorrelation, estimate_corr_params, fit, materialize

__version__ = "0.1.0"
