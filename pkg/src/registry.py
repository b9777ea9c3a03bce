"""Run-directory layout, experiment-config loading and artifact fingerprints."""

import hashlib
import json
import os
from typing import Optional

import yaml

from src.errors import ArtifactError, ConfigError, FingerprintError, NumericalError
from src.models import ExperimentConfig

LAYOUT = ("corpus", "checkpoints", "calibration", "scores", "reports")
RUN_DIR_ENV = "LSAP_RUN_DIR"


def fingerprint(obj) -> str:
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def file_fingerprint(path: str) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()[:16]


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` overrides; values are parsed as YAML scalars/lists."""
    data = {k: dict(v or {}) for k, v in (data or {}).items()}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        section, key = dotted.split(".", 1)
        data.setdefault(section, {})[key] = yaml.safe_load(raw)
    return data


def load_config(path: Optional[str] = None, overrides: Optional[list[str]] = None) -> ExperimentConfig:
    data: dict = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping of sections")
    return ExperimentConfig.from_dict(apply_overrides(data, overrides or []))


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=None)


class RunDirectory:
    def __init__(self, root: str):
        self.root = root

    def ensure(self) -> "RunDirectory":
        for section in LAYOUT:
            os.makedirs(os.path.join(self.root, section), exist_ok=True)
        return self

    def path(self, section: str, name: str) -> str:
        if section not in LAYOUT:
            raise ValueError(f"unknown run-directory section {section!r}")
        return os.path.join(self.root, section, name)

    @property
    def corpus_dir(self) -> str:
        return os.path.join(self.root, "corpus")

    @property
    def manifest_path(self) -> str:
        return self.path("corpus", "manifest.json")

    @property
    def checkpoint_path(self) -> str:
        return self.path("checkpoints", "denoiser.lsap")

    @property
    def checkpoint_meta_path(self) -> str:
        return self.path("checkpoints", "denoiser.json")

    def calibration_path(self, tag: str = "default") -> str:
        return self.path("calibration", f"{tag}.json")

    def scores_path(self, name: str) -> str:
        return self.path("scores", f"{name}.jsonl")

    def report_path(self, name: str) -> str:
        return self.path("reports", name)

    def require(self, path: str) -> str:
        if not os.path.exists(path):
            raise ArtifactError(f"missing artifact: {path} (run the producing stage first)")
        return path

    def write_json(self, path: str, data: dict) -> str:
        try:
            text = json.dumps(data, indent=2, sort_keys=True, allow_nan=False)
        except ValueError as e:
            raise NumericalError(f"{path}: {e}") from e
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "w") as f:
            f.write(text + "\n")
        return path

    def read_json(self, path: str) -> dict:
        with open(self.require(path)) as f:
            try:
                return json.load(f)
            except json.JSONDecodeError as e:
                raise ArtifactError(f"{path}: malformed JSON ({e})") from e


def check_fingerprint(what: str, expected: str, actual: str) -> None:
    if expected != actual:
        raise FingerprintError(f"{what} fingerprint mismatch: artifact {expected}, config {actual}")
