"""
Fully Bayesian treatment of network weights and kernel hyperparameters: HMC on the exact
marginal likelihood, SGLD on minibatch objectives, and predictive averaging.
"""

from .chain import ChainManifest, ChainState, SamplerError, load_chain, save_chain
from .hmc import HmcConfig, hmc_run, leapfrog
from .potential import (
    FunctionPotential,
    ObjectivePotential,
    Potential,
    PotentialSpec,
    make_exact_dkl_potential,
    make_svgp_potential,
    prior_energy,
)
from .predictive import MixturePredictive, predictive_average
from .sgld import SgldConfig, sgld_run

__all__ = [
    "SamplerError",
    "ChainState",
    "ChainManifest",
    "save_chain",
    "load_chain",
    "PotentialSpec",
    "Potential",
    "FunctionPotential",
    "ObjectivePotential",
    "prior_energy",
    "make_exact_dkl_potential",
    "make_svgp_potential",
    "HmcConfig",
    "leapfrog",
    "hmc_run",
    "SgldConfig",
    "sgld_run",
    "MixturePredictive",
    "predictive_average",
]
