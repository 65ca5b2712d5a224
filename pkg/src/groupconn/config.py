"""Declarative experiment configuration.

One JSON document describes a full run; unknown keys are rejected so typos
fail loudly. Command-line ``--set key=value`` overrides use dotted paths
into the same schema. Every run writes its resolved configuration and a
stable hash of it next to the results.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

__all__ = ["ExperimentConfig", "load_config", "apply_overrides", "config_hash"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NetworkSection(_Strict):
    n: int = 1000
    theta: float = 0.3
    k_override: Optional[float] = None
    allow_self: bool = False


class DesignSection(_Strict):
    kind: Literal["bernoulli", "adaptive"] = "bernoulli"
    s_mean: float = 10.0


class NoiseSection(_Strict):
    alpha: float = 0.05
    beta: float = 0.05


class InferenceSection(_Strict):
    entropy: Literal["exact", "quadratic", "none"] = "quadratic"
    sigma: float = 0.1
    mu: float = 0.0
    optimizer: Literal["gd", "adam"] = "adam"
    dual_step: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    max_iters: int = 50
    convergence_tol: float = 1e-8
    threshold: float = 0.5


class OnlineSection(_Strict):
    tau: Optional[int] = 10
    steps_per_test: int = 3
    dual_step: float = 5e-4
    margin: Optional[float] = None
    aggregate: Literal["mean", "min", "random-output"] = "mean"
    log_every: int = 100


class NaiveSection(_Strict):
    mode: Literal["running_mean", "beta_map"] = "running_mean"
    init: float = 0.0
    a: float = 1.0
    b: float = 10.0


class SweepSection(_Strict):
    grid: dict = Field(default_factory=dict)
    seeds: list[int] = Field(default_factory=lambda: [0])
    checkpoints: Optional[list[int]] = None


class ExperimentConfig(_Strict):
    seed: int = 0
    tests: int = 1000
    checkpoints: Optional[list[int]] = None
    mode: Literal["offline", "online", "adaptive", "naive"] = "offline"
    jobs: int = 1
    timing: bool = False
    out_dir: Optional[str] = None
    network: NetworkSection = Field(default_factory=NetworkSection)
    design: DesignSection = Field(default_factory=DesignSection)
    noise_true: NoiseSection = Field(default_factory=NoiseSection)
    noise_assumed: Optional[NoiseSection] = None
    inference: InferenceSection = Field(default_factory=InferenceSection)
    online: OnlineSection = Field(default_factory=OnlineSection)
    naive: NaiveSection = Field(default_factory=NaiveSection)
    sweep: SweepSection = Field(default_factory=SweepSection)

    def resolved_noise_assumed(self) -> NoiseSection:
        return self.noise_assumed if self.noise_assumed is not None else self.noise_true


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Load a JSON config file (defaults when omitted) and apply overrides."""
    data = json.loads(Path(path).read_text()) if path else {}
    if overrides:
        data = apply_overrides(data, overrides)
    return ExperimentConfig.model_validate(data)


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Merge ``section.key=value`` strings into a raw config dict."""
    out = json.loads(json.dumps(data))
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not of the form key=value")
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValueError(f"cannot override through non-object key {part!r}")
        node[parts[-1]] = _parse_value(raw)
    return out


def config_hash(config: ExperimentConfig) -> str:
    """Stable short hash of the resolved configuration.

    Output location and worker count cannot change any result byte, so they
    are excluded from the hash.
    """
    payload = config.model_dump()
    payload.pop("out_dir", None)
    payload.pop("jobs", None)
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]
