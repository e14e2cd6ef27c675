"""Run configuration (TOML) and deterministic CSV/JSON artifact writers.

Every data file carries the tool version and a hash of the effective
configuration. Nothing time-dependent is written, so identical configs give
byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import tomli

from . import __version__
from .dynamics import NeuronParams, ParameterError, SynapseParams
from .edf import SteadyStateProtocol
from .eprc import default_perturbation

SIG_DIGITS = 9


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


@dataclass(frozen=True)
class SynapseSpec:
    """Synapse parameters plus the polarity that sets their defaults."""

    polarity: str
    params: dict = field(default_factory=dict)

    def build(self) -> SynapseParams:
        return SynapseParams.of_polarity(self.polarity, **self.params)

    def build_perturbation(self) -> SynapseParams:
        return default_perturbation(self.polarity, **self.params)


@dataclass(frozen=True)
class RunConfig:
    neuron: dict = field(default_factory=dict)
    nominal: SynapseSpec = SynapseSpec("inhibitory")
    perturbation: SynapseSpec = SynapseSpec("excitatory")
    sim: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)

    def neuron_params(self) -> NeuronParams:
        return NeuronParams(**self.neuron)

    def nominal_params(self) -> SynapseParams:
        return self.nominal.build()

    def perturbation_params(self) -> SynapseParams:
        return self.perturbation.build_perturbation()

    def protocol(self) -> SteadyStateProtocol:
        return SteadyStateProtocol(**self.sim)

    def to_dict(self) -> dict:
        return {"neuron": dict(self.neuron),
                "synapse": {"nominal": {"polarity": self.nominal.polarity, **self.nominal.params},
                            "perturbation": {"polarity": self.perturbation.polarity,
                                             **self.perturbation.params}},
                "sim": dict(self.sim), "sweep": dict(self.sweep)}

    def hash(self, extra: dict | None = None) -> str:
        """Short SHA-256 of the canonical JSON of this config (plus ``extra``)."""
        payload = {"config": self.to_dict(), "extra": extra or {}}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_NEURON_KEYS = {f.name for f in fields(NeuronParams)}
_SYNAPSE_KEYS = {f.name for f in fields(SynapseParams)}
_SIM_KEYS = {f.name for f in fields(SteadyStateProtocol)}
_SWEEP_KEYS = {"t_min", "t_max", "t_step", "t_n", "tp_min", "tp_max", "tp_step", "mode"}


def _check_keys(table: dict, allowed: set, where: str) -> dict:
    bad = sorted(set(table) - allowed)
    if bad:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(bad)}")
    return dict(table)


def _synapse(table: dict, default_polarity: str, where: str) -> SynapseSpec:
    table = _check_keys(table, _SYNAPSE_KEYS | {"polarity"}, where)
    polarity = table.pop("polarity", default_polarity)
    if polarity not in ("excitatory", "inhibitory"):
        raise ConfigError(f"[{where}] polarity must be 'excitatory' or 'inhibitory'")
    return SynapseSpec(polarity, table)


def config_from_dict(data: dict) -> RunConfig:
    data = _check_keys(data, {"neuron", "synapse", "sim", "sweep"}, "top level")
    syn = _check_keys(data.get("synapse", {}), {"nominal", "perturbation"}, "synapse")
    cfg = RunConfig(
        neuron=_check_keys(data.get("neuron", {}), _NEURON_KEYS, "neuron"),
        nominal=_synapse(syn.get("nominal", {}), "inhibitory", "synapse.nominal"),
        perturbation=_synapse(syn.get("perturbation", {}), "excitatory", "synapse.perturbation"),
        sim=_check_keys(data.get("sim", {}), _SIM_KEYS, "sim"),
        sweep=_check_keys(data.get("sweep", {}), _SWEEP_KEYS, "sweep"),
    )
    validate(cfg)
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return config_from_dict(data)


def validate(cfg: RunConfig) -> None:
    """Build every parameter object once so that bad values fail early."""
    try:
        cfg.neuron_params()
        cfg.nominal_params()
        cfg.perturbation_params()
        cfg.protocol()
    except (ParameterError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def with_overrides(cfg: RunConfig, *, nominal_polarity: str | None = None,
                   nominal: dict | None = None, perturbation_polarity: str | None = None,
                   perturbation: dict | None = None, sim: dict | None = None,
                   sweep: dict | None = None) -> RunConfig:
    """Apply command-line overrides (``None`` values are ignored)."""

    def merge(base: dict, new: dict | None) -> dict:
        out = dict(base)
        out.update({k: v for k, v in (new or {}).items() if v is not None})
        return out

    # params hold only explicit values; polarity defaults fill the rest at build time
    nom = SynapseSpec(nominal_polarity or cfg.nominal.polarity, merge(cfg.nominal.params, nominal))
    pert = SynapseSpec(perturbation_polarity or cfg.perturbation.polarity,
                       merge(cfg.perturbation.params, perturbation))
    out = replace(cfg, nominal=nom, perturbation=pert, sim=merge(cfg.sim, sim),
                  sweep=merge(cfg.sweep, sweep))
    validate(out)
    return out


# ---------------------------------------------------------------------------
# writers


def fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return f"{v:.{SIG_DIGITS}g}"
    return str(v)


def provenance(config_hash: str) -> str:
    return f"# eventdf {__version__} config {config_hash}"


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]],
              config_hash: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(provenance(config_hash) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def _clean(obj: Any) -> Any:
    if isinstance(obj, float):
        return None if math.isnan(obj) else float(f"{obj:.{SIG_DIGITS}g}")
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item"):  # numpy scalar
        return _clean(obj.item())
    return obj


def write_json(path: str | Path, payload: dict, config_hash: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {**_clean(payload), "config_hash": config_hash, "version": __version__}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Header and rows of a CSV written by :func:`write_csv` (comment lines skipped)."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def protocol_dict(p: SteadyStateProtocol) -> dict:
    return asdict(p)
