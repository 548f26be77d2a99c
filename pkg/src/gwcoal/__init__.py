"""Coalescent structure of continuous-time Galton-Watson trees: simulation, closed forms, spine checks."""
from .offspring import OffspringLaw, birth_death, explicit, near_critical_ternary
from .genfun import BDParams
from .gw_sim import GWTree, simulate, simulate_conditioned, extract_genealogy
from .closed_form import CoalescentLaw

__version__ = "0.1.0"

__all__ = ["OffspringLaw", "birth_death", "explicit", "near_critical_ternary", "BDParams", "GWTree",
           "simulate", "simulate_conditioned", "extract_genealogy", "CoalescentLaw", "__version__"]
