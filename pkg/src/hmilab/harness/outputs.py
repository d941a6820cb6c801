"""File set for one sweep: sweep.csv, theory.json, spectra/*.csv and manifest.json.

Column order of sweep.csv is given by :func:`sweep_columns`.  Floats are
written with ``repr`` so reruns are byte-identical; the manifest stores a
determinism hash of sweep.csv computed with the wall_time_ms column removed.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Iterable

from .. import __version__
from ..errors import HmiLabError, ValidationError
from ..spectral import write_spectrum
from ..theory.report import prediction_record
from .config import ExperimentConfig
from .sweep import SweepRow, sweep_columns

MANIFEST_SCHEMA_VERSION = 1
MANIFEST_SCHEMA = {
    "schema_version": int,
    "artifact": str,
    "artifact_version": str,
    "config_name": str,
    "config_hash": str,
    "config": dict,
    "assumptions": dict,
    "rows": int,
    "files": list,
}


class OutputError(HmiLabError, OSError):
    """Writing an output file failed; the message carries the path."""


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def row_record(row: SweepRow, m_star: int) -> dict[str, str]:
    rec = {
        "alpha": row.alpha, "seed": row.seed, "n": row.n, "spike_count": row.spike_count,
        "weighted_mse": row.weighted_mse, "weighted_mse_greedy": row.weighted_mse_greedy,
        "excess_risk": row.excess_risk, "excess_risk_stderr": row.excess_risk_stderr, "regime": row.regime,
        "theory_exponent": row.theory_exponent, "theory_k_alpha": row.theory_k_alpha,
        "theory_spike_count": row.theory_spike_count, "error": row.error, "wall_time_ms": row.wall_time_ms,
    }
    for k in range(m_star):
        rec[f"overlap_sq_{k + 1}"] = row.overlaps[k] if k < len(row.overlaps) else math.nan
        rec[f"mse_{k + 1}"] = row.mse[k] if k < len(row.mse) else math.nan
        rec[f"theory_spike_{k + 1}"] = row.theory_spikes[k] if k < len(row.theory_spikes) else math.nan
    return {k: _fmt(v) for k, v in rec.items()}


def sweep_csv_text(rows: Iterable[SweepRow], m_star: int) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=sweep_columns(m_star), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(row_record(r, m_star))
    return buf.getvalue()


def determinism_hash(csv_text: str) -> str:
    """sha256 of the CSV with the wall_time_ms column dropped."""
    reader = csv.reader(io.StringIO(csv_text))
    lines = list(reader)
    if not lines:
        return hashlib.sha256(b"").hexdigest()
    drop = lines[0].index("wall_time_ms") if "wall_time_ms" in lines[0] else None
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    for line in lines:
        w.writerow([c for j, c in enumerate(line) if j != drop])
    return hashlib.sha256(out.getvalue().encode()).hexdigest()


def read_sweep_csv(path) -> list[dict]:
    """Rows as dicts with numeric fields converted; empty cells become NaN."""
    ints = {"seed", "n", "spike_count", "theory_k_alpha", "theory_spike_count"}
    text_cols = {"regime", "error"}
    out = []
    with Path(path).open(newline="") as fh:
        for raw in csv.DictReader(fh):
            rec = {}
            for k, v in raw.items():
                if k in text_cols:
                    rec[k] = v
                elif k in ints:
                    rec[k] = int(v)
                else:
                    rec[k] = float(v) if v != "" else math.nan
            out.append(rec)
    return out


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def theory_records(cfg: ExperimentConfig) -> list[dict]:
    spec = cfg.spec()
    prep = cfg.prep() if cfg.sweep.rmt else None
    measure = None
    if prep is not None and spec.noise_delta > 0:
        from ..theory.rmt import build_label_measure
        measure = build_label_measure(spec)
    recs = []
    for a in cfg.sweep.alphas:
        try:
            recs.append(prediction_record(spec, a, prep, measure))
        except HmiLabError as exc:
            recs.append({"spec": spec.fingerprint(), "alpha": a, "regime": "", "error": str(exc)})
    return recs


def spectrum_name(alpha: float, seed: int) -> str:
    return f"alpha_{alpha:.6g}_seed{seed}.csv"


def emit_outputs(rows: Iterable[SweepRow], cfg: ExperimentConfig, out_dir=None) -> dict[str, Path]:
    """Write the file set and return {logical name: path}."""
    rows = list(rows)
    out = Path(out_dir if out_dir is not None else cfg.output.directory)
    m = cfg.target.m_star
    files: dict[str, Path] = {}
    entries = []
    csv_text = sweep_csv_text(rows, m)
    if "csv" in cfg.output.formats:
        p = out / "sweep.csv"
        _write(p, csv_text)
        files["sweep.csv"] = p
        entries.append({"path": "sweep.csv", "sha256": determinism_hash(csv_text), "hash_excludes": ["wall_time_ms"]})
    if "json" in cfg.output.formats:
        p = out / "theory.json"
        _write(p, json.dumps(theory_records(cfg), indent=2, sort_keys=True) + "\n")
        files["theory.json"] = p
        entries.append({"path": "theory.json", "sha256": _sha(p)})
    for r in rows:
        if r.eigenvalues is None:
            continue
        rel = f"spectra/{spectrum_name(r.alpha, r.seed)}"
        p = out / rel
        try:
            p.parent.mkdir(parents=True, exist_ok=True)
            csv_path, side = write_spectrum(p, r.eigenvalues, top_k=m,
                                            meta={"alpha": r.alpha, "seed": r.seed, "spike_count": r.spike_count,
                                                  "d": cfg.target.d})
        except OSError as exc:
            raise OutputError(f"cannot write {p}: {exc}") from exc
        files[rel] = csv_path
        entries.append({"path": rel, "sha256": _sha(csv_path)})
        entries.append({"path": str(side.relative_to(out)), "sha256": _sha(side)})
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "artifact": "hmilab",
        "artifact_version": __version__,
        "config_name": cfg.name,
        "config_hash": cfg.config_hash(),
        "config": cfg.semantic_dict(),
        "assumptions": {"noise_delta": cfg.target.delta,
                        "noise_delta_note": "label noise variance is a recipe choice, not a published value",
                        "link": cfg.target.link},
        "rows": len(rows),
        "files": entries,
    }
    validate_manifest(manifest)
    p = out / "manifest.json"
    _write(p, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    files["manifest.json"] = p
    return files


def validate_manifest(manifest: dict, root=None) -> None:
    """Check keys and types against MANIFEST_SCHEMA; with ``root`` also check listed files exist."""
    if not isinstance(manifest, dict):
        raise ValidationError("manifest must be a JSON object")
    for key, typ in MANIFEST_SCHEMA.items():
        if key not in manifest:
            raise ValidationError(f"manifest is missing {key!r}")
        if not isinstance(manifest[key], typ) or (typ is int and isinstance(manifest[key], bool)):
            raise ValidationError(f"manifest field {key!r} must be {typ.__name__}")
    extra = set(manifest) - set(MANIFEST_SCHEMA)
    if extra:
        raise ValidationError(f"manifest has unknown fields {sorted(extra)}")
    if manifest["schema_version"] != MANIFEST_SCHEMA_VERSION:
        raise ValidationError("unsupported manifest schema version")
    if len(manifest["config_hash"]) != 64:
        raise ValidationError("config_hash must be a sha256 hex digest")
    for sect in ("target", "estimator", "sweep", "network"):
        if sect not in manifest["config"]:
            raise ValidationError(f"manifest config lacks the {sect!r} block")
    for e in manifest["files"]:
        if not isinstance(e, dict) or not isinstance(e.get("path"), str) or not isinstance(e.get("sha256"), str):
            raise ValidationError("manifest file entries need string path and sha256")
        if root is not None and not (Path(root) / e["path"]).exists():
            raise ValidationError(f"manifest lists missing file {e['path']}")


def load_manifest(path) -> dict:
    path = Path(path)
    m = json.loads(path.read_text())
    validate_manifest(m, path.parent)
    return m
