"""Spatial conditional extremes dependence model."""
from .functions import (DependenceParams, dl_cdf, dl_logpdf, dl_pdf, dl_quantile, eval_alpha, eval_beta,
                        eval_delta, eval_mu, eval_rho, eval_sigma, matern)
