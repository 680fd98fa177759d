"""Shared constructors for tests."""
from __future__ import annotations

import math

import numpy as np
from scipy.special import logit

from scemix.geometry import SiteSet
from scemix.marginals import BulkTable, MarginalModel
from scemix.surfaces import Basis, BasisConfig, SurfaceModel

INTERCEPT = BasisConfig(k_loc=0, k_elev=0, use_elevation=False)


def constant_marginal(p=0.3, q=2.0, ups=1.0, xi=0.2, lam=0.05, sites=None, seed=0) -> MarginalModel:
    """Marginal model with spatially constant surfaces and a uniform bulk."""
    sites = sites or SiteSet.regular_grid(2, 2, 2.2)
    basis = Basis.build(sites, INTERCEPT)
    rng = np.random.default_rng(seed)
    bulk = [BulkTable.from_values(rng.uniform(0, q * 1.2, 300)) for _ in range(len(sites))]
    return MarginalModel(lam, SurfaceModel(basis, [logit(p)], "logit"), SurfaceModel(basis, [q], "identity"),
                         SurfaceModel(basis, [math.log(ups)], "log"), xi, bulk, sites)
