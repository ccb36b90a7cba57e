"""Risk-aware two-agent negotiation over shared RAN bandwidth and edge CPU."""

from .harness import ExperimentConfig, TrialResult, emit_outputs, pooled_quantile, run_experiment, run_trial
from .negotiation import NegotiationState, Status, Transcript, check_feasibility, prop_fair_split, run_negotiation
from .policy import Agent, ResourcePool, RiskAssessment, SliceSpec, Strategy, assess
from .power import PowerParams, energy_saving_fraction, power_w
from .proposer import HeuristicProposer, RemoteProposer, ReplayProposer, parse_remote_response
from .risk import SampleSet, TailStats, confidence_score, empirical_cvar, empirical_var, summarize
from .twin import Action, ArrivalProcess, DigitalTwin, QueueState, SystemConstants, predict_distribution, step_queues

__all__ = [
    "Action", "Agent", "ArrivalProcess", "DigitalTwin", "ExperimentConfig", "HeuristicProposer",
    "NegotiationState", "PowerParams", "QueueState", "RemoteProposer", "ReplayProposer", "ResourcePool",
    "RiskAssessment", "SampleSet", "SliceSpec", "Status", "Strategy", "SystemConstants", "TailStats",
    "Transcript", "TrialResult", "assess", "check_feasibility", "confidence_score", "emit_outputs",
    "empirical_cvar", "empirical_var", "energy_saving_fraction", "parse_remote_response", "pooled_quantile",
    "power_w", "predict_distribution", "prop_fair_split", "run_experiment", "run_negotiation", "run_trial",
    "step_queues", "summarize",
]
