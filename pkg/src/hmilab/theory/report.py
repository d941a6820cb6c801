"""JSON-ready prediction records keyed by (spec fingerprint, alpha)."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from ..errors import ValidationError
from ..model import TargetSpec
from ..spectral import Preprocessing
from .rates import predict_mse_decomposition, predict_rates
from .rmt import LabelMeasure, solve_spikes


def prediction_record(spec: TargetSpec, alpha: float, prep: Preprocessing | None = None,
                      measure: LabelMeasure | None = None) -> dict:
    """{regime, exponents, thresholds, spikes, bulk_edge, decomposition} for one (spec, alpha).

    The spectral part is included when ``prep`` is given and Delta > 0;
    otherwise ``spikes`` is empty and ``bulk_edge`` is null.
    """
    rates = predict_rates(spec, alpha)
    dec = predict_mse_decomposition(spec, alpha)
    rec = {
        "spec": spec.fingerprint(),
        "alpha": float(alpha),
        "regime": rates.regime,
        "in_crossover": rates.in_crossover,
        "exponents": {"mse": rates.mse_scaling_exponent},
        "law": rates.mse_prefactor_law,
        "k_alpha": rates.k_alpha,
        "thresholds": list(rates.thresholds),
        "decomposition": {"learned": dec.learned_part, "underfit": dec.underfit_part},
        "spikes": [],
        "bulk_edge": None,
        "constants_absorbed": True,
    }
    if prep is not None and spec.noise_delta > 0:
        rmt = solve_spikes(spec, prep, alpha, measure, tabulate=False).as_dict()
        rec["spikes"] = rmt["spikes"]
        rec["bulk_edge"] = rmt["bulk_edge"]
    return rec


def write_predictions(path, records: Iterable[dict]) -> Path:
    path = Path(path)
    records = list(records)
    for r in records:
        if "alpha" not in r or "regime" not in r:
            raise ValidationError("prediction records need alpha and regime")
    path.write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")
    return path
