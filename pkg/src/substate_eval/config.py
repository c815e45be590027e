"""Run configuration: one backend per stage plus retry, parallelism and path settings.

Example ``config.json``::

    {
      "store": "runs/androidlab",
      "stages": {
        "decomposer": {"provider": "openai", "model": "gpt-4o",
                       "endpoint": "https://api.openai.com/v1", "credential_env": "OPENAI_API_KEY"},
        "reasoner":   {"provider": "gemini", "model": "gemini-2.0-flash-thinking-exp",
                       "endpoint": "https://generativelanguage.googleapis.com/v1beta/openai",
                       "credential_env": "GEMINI_API_KEY"},
        "capturer":   {"provider": "gemini", "model": "gemini-2.0-flash", "...": "..."}
      },
      "decomposer_retries": 2,
      "checker_retries": 1,
      "parallel": 1
    }

Relative paths (the store, scripted backend files) resolve against the
config file's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .gateway import BackendConfig

STAGES = ("decomposer", "reasoner", "capturer")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    stages: dict[str, BackendConfig] = field(
        default_factory=lambda: {stage: BackendConfig() for stage in STAGES}
    )
    store: Path = Path(".")
    decomposer_retries: int = 2
    checker_retries: int = 1
    memory_limit: int = 20
    parallel: int = 1
    transcript: Path | None = None

    def __post_init__(self) -> None:
        missing = [s for s in STAGES if s not in self.stages]
        if missing:
            raise ConfigError(f"no backend configured for stage(s): {', '.join(missing)}")
        extra = sorted(set(self.stages) - set(STAGES))
        if extra:
            raise ConfigError(f"unknown stage(s): {', '.join(extra)}")
        if self.parallel < 1:
            raise ConfigError("parallel must be >= 1")
        if self.decomposer_retries < 0 or self.checker_retries < 0:
            raise ConfigError("retry budgets must be >= 0")

    def backend(self, stage: str) -> BackendConfig:
        return self.stages[stage]


def _resolve(base: Path, value: str | None) -> Path | None:
    if not value:
        return None
    path = Path(value)
    return path if path.is_absolute() else base / path


def load_config(path: Path | str) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    base = path.parent
    known = {"store", "stages", "decomposer_retries", "checker_retries", "memory_limit",
             "parallel", "transcript"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    stages = {}
    for stage, entry in doc.get("stages", {}).items():
        try:
            cfg = BackendConfig.from_dict(entry)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"stage {stage}: {exc}") from exc
        if cfg.provider == "scripted" and cfg.endpoint:
            cfg = replace(cfg, endpoint=str(_resolve(base, cfg.endpoint)))
        stages[stage] = cfg
    return RunConfig(
        stages=stages,
        store=_resolve(base, doc.get("store", ".")) or base,
        decomposer_retries=int(doc.get("decomposer_retries", 2)),
        checker_retries=int(doc.get("checker_retries", 1)),
        memory_limit=int(doc.get("memory_limit", 20)),
        parallel=int(doc.get("parallel", 1)),
        transcript=_resolve(base, doc.get("transcript")),
    )
