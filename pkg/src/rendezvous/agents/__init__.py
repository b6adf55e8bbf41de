"""Decision policies. Importing this package registers all of them."""

from .base import (POLICIES, AgentContext, Communicate, IdlePolicy, Navigate, Policy, Query,
                   ReasonerPlan, WaitPlan, make_policy)
from .oracle import OracleCentered, OracleCenteredDZ, oracle_centered_decide
from .cosar import CosarAgent, CosarState, cosar_decide
from .mcts import MctsAgent, MctsConfig, mcts_decide

__all__ = [
    "POLICIES", "AgentContext", "Communicate", "IdlePolicy", "Navigate", "Policy", "Query",
    "ReasonerPlan", "WaitPlan", "make_policy", "OracleCentered", "OracleCenteredDZ",
    "oracle_centered_decide", "CosarAgent", "CosarState", "cosar_decide",
    "MctsAgent", "MctsConfig", "mcts_decide",
]
