"""Fault-tolerant hierarchical control of networked grid-following inverters.

Low level: per-inverter model-reference adaptive current control with a
projected line-resistance estimator. High level: a decentralized
primal-dual splitter that shares an aggregate power reference across
inverters, penalizing those whose line looks unhealthy.
"""
from .scenario import ScenarioConfig, load
from .sim_engine import run

__all__ = ["ScenarioConfig", "load", "run"]
