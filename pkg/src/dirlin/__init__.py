"""Kernel-based tests of independence between directional and linear variables."""

__version__ = "0.1.0"

from .bandwidth import (PilotBandwidths, bootstrap_mise, pilot_bandwidths, select_blcv, select_blscv,
                        select_bo)
from .directional import (AxialOrientation, VmfMixture, VonMisesFisher, encode_axial, pca_orientation,
                          vmf_sample)
from .errors import (DegenerateData, DegenerateOrientation, DirlinError, DomainError, NonFiniteObjective,
                     SchemaError)
from .independence import (GramMatrices, TestReport, baseline_r2, baseline_rank_u, bootstrap_test,
                           gram_matrices, independence_test, permutation_test, smooth_bootstrap_sample,
                           t_statistic)
from .kde import (BandwidthPair, DirLinSample, kde_directional, kde_dirlin, kde_linear, lcv_objective,
                  lscv_objective, select_cv_bandwidths)
from .numerics import log_bessel_i, log_cq, make_quadrature
from .simulation import ModelSpec, StudyConfig, model_density, model_sample, run_study

__all__ = [name for name in dir() if not name.startswith("_")]
