"""Vulnerability analysis, attack synthesis and hardening for PMU-based state estimation."""

__version__ = "0.1.0"

from .attack import AttackSpec, AttackVector, apply_attack, evaluate_attack, offsets_to_u
from .attack import synthesize_multi, synthesize_pair, synthesize_single
from .datasets import ieee39, three_bus_chain, two_bus
from .estimation import StateEstimator, compute_Cbox, compute_F, compute_wls_verification, ls_estimate
from .grid import GridModel, build_topology, is_observable, load_grid, make_grid, save_grid
from .secure_grid import SecureGrid, SecurityConfig, secure, verify_hardened
from .simulator import AttackPlan, DetectorConfig, ProfileConfig, generate_states, run_scenario, simulate
from .vulnerability import VulnerabilityMonitor, analyze_grid, err, ios, ios_star, pair_status, single_site_status

__all__ = [
    "AttackPlan", "AttackSpec", "AttackVector", "DetectorConfig", "GridModel", "ProfileConfig",
    "SecureGrid", "SecurityConfig", "StateEstimator", "VulnerabilityMonitor", "analyze_grid",
    "apply_attack", "build_topology", "compute_Cbox", "compute_F", "compute_wls_verification", "err",
    "evaluate_attack", "generate_states", "ieee39", "ios", "ios_star", "is_observable", "load_grid",
    "ls_estimate", "make_grid", "offsets_to_u", "pair_status", "run_scenario", "save_grid", "secure",
    "simulate", "single_site_status", "synthesize_multi", "synthesize_pair", "synthesize_single",
    "three_bus_chain", "two_bus", "verify_hardened",
]
