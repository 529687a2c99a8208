"""Trade-level regression xVA engine with exact additive allocation."""
from .basis import BasisSpec, basis_derivatives, eval_basis
from .conditioning import ConditioningSet, es_condition, sign_condition, var_condition
from .credit import CreditCurve, PiecewiseConstant, XvaKind
from .regression import (FactorizationCache, RegressionSet, factorize_design, fit_trade,
                         fit_trades, portfolio_coefficients)
from .scenarios import (Augmentation, ModelConfig, ScenarioCube, ShockSet, augment_state_space,
                        generate_scenarios, generate_shock_scenarios, underlying_jacobian)
from .trades import Trade, load_portfolio
from .xva import LgdPdRegression, compute_xva

__version__ = "0.1.0"

__all__ = [
    "BasisSpec", "basis_derivatives", "eval_basis", "ConditioningSet", "es_condition",
    "sign_condition", "var_condition", "CreditCurve", "PiecewiseConstant", "XvaKind",
    "FactorizationCache", "RegressionSet", "factorize_design", "fit_trade", "fit_trades",
    "portfolio_coefficients", "Augmentation", "ModelConfig", "ScenarioCube", "ShockSet",
    "augment_state_space", "generate_scenarios", "generate_shock_scenarios",
    "underlying_jacobian", "Trade", "load_portfolio", "LgdPdRegression", "compute_xva",
]
