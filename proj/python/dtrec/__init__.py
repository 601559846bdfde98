"""Transport-regularized recommendation: Python bindings to the C++ core."""

from ._core import (
    DtrecError,
    bandit_instance,
    builtin_bandits,
    config_hash,
    consistency_check,
    default_config,
    exact_ot,
    hit_ndcg_at_rank,
    iw_diagnostic,
    load_config,
    rank_full,
    rel_at_k,
    resolve_config,
    run_experiment,
    scalar_game,
    simulate_toy,
)

__all__ = [
    "DtrecError",
    "bandit_instance",
    "builtin_bandits",
    "config_hash",
    "consistency_check",
    "default_config",
    "exact_ot",
    "hit_ndcg_at_rank",
    "iw_diagnostic",
    "load_config",
    "rank_full",
    "rel_at_k",
    "resolve_config",
    "run_experiment",
    "scalar_game",
    "simulate_toy",
]
