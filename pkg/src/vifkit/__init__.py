"""Versatile influence functions for data attribution under non-decomposable
losses: Cox partial likelihood, contrastive node embeddings, and ListMLE,
with exact and iterative inverse-Hessian solvers plus a brute-force
leave-one-out oracle for validation."""

from .attributor import (
    DropOne,
    HessianContext,
    HessianSolver,
    InfluenceRecord,
    PointMass,
    attribute_target,
    classical_if,
    finite_difference_if,
    vif_params,
)
from .coxloss import CoxModel, SurvivalDataset, reid_if, relative_risk_target
from .embedloss import EmbedModel, Graph, WalkParams, generate_walks, pair_loss_target
from .errors import VifError
from .harness import (
    ExperimentReport,
    LogisticModel,
    brute_force_repeat,
    compare,
    logistic_fixture,
    loo_retrain,
    synth_graph,
    synth_ranking,
    synth_survival,
)
from .losscore import (
    LossModel,
    ParamVector,
    PresenceVector,
    TargetFunction,
    TrainConfig,
    check_gradient,
    check_hessian,
    train,
)
from .ltrloss import ListMLEModel, RankingDataset, query_loss_target
from .numkit import cg_solve, lissa_solve, pearson, solve_spd

__version__ = "0.1.0"

__all__ = [
    "CoxModel",
    "DropOne",
    "EmbedModel",
    "ExperimentReport",
    "Graph",
    "HessianContext",
    "HessianSolver",
    "InfluenceRecord",
    "ListMLEModel",
    "LogisticModel",
    "LossModel",
    "ParamVector",
    "PointMass",
    "PresenceVector",
    "RankingDataset",
    "SurvivalDataset",
    "TargetFunction",
    "TrainConfig",
    "VifError",
    "WalkParams",
    "attribute_target",
    "brute_force_repeat",
    "cg_solve",
    "check_gradient",
    "check_hessian",
    "classical_if",
    "compare",
    "finite_difference_if",
    "generate_walks",
    "lissa_solve",
    "logistic_fixture",
    "loo_retrain",
    "pair_loss_target",
    "pearson",
    "query_loss_target",
    "reid_if",
    "relative_risk_target",
    "solve_spd",
    "synth_graph",
    "synth_ranking",
    "synth_survival",
    "train",
    "vif_params",
]
