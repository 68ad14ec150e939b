"""Simulation lab for load balancing in many-server systems."""

from .engine import ServerPool, SimConfig, Simulation, SingleServerQueue, run
from .policies import (CJSQ, I1F, JIQ, JSQ, JSW, RSQ, EnhancementA, EnhancementB, GraphJSQ,
                       JSQd, MultiDispatcherSpec, Random, RedundancyD, RoundRobin,
                       SparseFeedback)
from .stats import Estimate, RunSummary

__version__ = "0.1.0"

__all__ = [
    "CJSQ", "I1F", "JIQ", "JSQ", "JSW", "RSQ", "EnhancementA", "EnhancementB", "Estimate",
    "GraphJSQ", "JSQd", "MultiDispatcherSpec", "Random", "RedundancyD", "RoundRobin",
    "RunSummary", "ServerPool", "SimConfig", "Simulation", "SingleServerQueue",
    "SparseFeedback", "run",
]
