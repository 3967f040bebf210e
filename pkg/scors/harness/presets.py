"""
Named experiment presets.

Desk presets run in minutes on a laptop; the full-scale presets (N=50000,
d=50) are runnable but slow.
"""

from typing import Any, Dict

from ..errors import ConfigValidationError

PRESETS: Dict[str, Dict[str, Any]] = {
    "desk_quadratic": {
        "experiment": "convergence",
        "family": "quadratic",
        "N": 1000,
        "d": 10,
        "samplers": "U,NU,G,S,SGD",
        "budget": 2_000_000,
        "replicates": 20,
        "eig_lo": 0.75,
        "eig_hi": 2.0,
    },
    "desk_logistic": {
        "experiment": "convergence",
        "family": "logistic",
        "N": 2000,
        "d": 10,
        "samplers": "U,NU,G,S,SGD",
        "budget": 2_000_000,
        "replicates": 20,
        "c": 1.0,
        "step_offset": 1000,
        "reference": "generator",
    },
    "desk_logistic_contraction": {
        "experiment": "convergence",
        "family": "logistic",
        "N": 2000,
        "d": 10,
        "samplers": "U,NU,G,S,SGD",
        "budget": 2_000_000,
        "replicates": 20,
        "c": 5.0,
        "step_offset": 100,
        "reference": "empirical",
    },
    "desk_clt": {
        "experiment": "clt",
        "family": "quadratic",
        "N": 1000,
        "d": 3,
        "samplers": "S",
        "iterations": 100_000,
        "replicates": 400,
        "workers": 4,
    },
    "desk_clt_scalar": {
        "experiment": "clt",
        "family": "quadratic",
        "N": 1000,
        "d": 1,
        "samplers": "U",
        "eig_lo": 1.0,
        "eig_hi": 1.0,
        "whiten_noise": True,
        "iterations": 100_000,
        "replicates": 400,
        "workers": 4,
    },
    "desk_mse": {
        "experiment": "mse",
        "family": "quadratic",
        "N": 1000,
        "d": 3,
        "samplers": "U",
        "iterations": 100_000,
        "replicates": 200,
        "grid_points": 16,
        "workers": 4,
    },
    "desk_gamma": {
        "experiment": "gamma_check",
        "family": "quadratic",
        "N": 1000,
        "d": 5,
        "samplers": "U,NU,G,S,SGD",
        "mc_draws": 1_000_000,
    },
    "desk_timing": {
        "experiment": "timing",
        "family": "logistic",
        "N": 5000,
        "d": 50,
        "samplers": "U,SGD,NU,G,S",
        "iterations": 1_000_000,
        "reference": "generator",
    },
    "full_convergence": {
        "experiment": "convergence",
        "family": "logistic",
        "N": 50_000,
        "d": 50,
        "samplers": "U,NU,G,S,SGD",
        "iterations": 5_000_000,
        "replicates": 1,
        "snapshots": 400,
    },
    "full_clt": {
        "experiment": "clt",
        "family": "logistic",
        "N": 50_000,
        "d": 50,
        "samplers": "U,NU,G,S,SGD",
        "iterations": 5_000_000,
        "replicates": 1000,
        "workers": 8,
    },
    "full_mse": {
        "experiment": "mse",
        "family": "logistic",
        "N": 50_000,
        "d": 50,
        "samplers": "U,NU,G,S,SGD",
        "iterations": 500_000,
        "replicates": 20,
        "grid_points": 30,
        "workers": 8,
    },
    "full_timing": {
        "experiment": "timing",
        "family": "logistic",
        "N": 50_000,
        "d": 50,
        "samplers": "U,SGD,NU,G,S",
        "iterations": 1_000_000,
        "reference": "generator",
    },
}


def get_preset(name: str) -> Dict[str, Any]:
    try:
        return dict(PRESETS[name])
    except KeyError:
        raise ConfigValidationError(f"unknown preset {name!r}, expected one of {sorted(PRESETS)}") from None


def describe_presets() -> str:
    lines = []
    for name in sorted(PRESETS):
        values = PRESETS[name]
        lines.append(f"{name}: {values['experiment']} on {values['family']} (N={values['N']}, d={values['d']})")
    return "\n".join(lines)
