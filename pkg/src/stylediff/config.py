"""Layered run configuration.

Defaults (matching the benchmark hyperparameter table) < config file
(``key = value`` INI sections) < command-line flags. Unknown sections or keys
are rejected outright, and every value is validated by the owning module's
config type before any work starts.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .backbone import BackboneTrainConfig, DenoiserConfig, NoiseSchedule
from .decompose import StlParams
from .errors import ConfigError
from .guidance import GuidanceConfig, GuidanceTrainConfig, KernelConfig
from .metrics import EvalConfig
from .transform import TransformParams

_INT, _FLOAT, _BOOL, _STR, _OPT_INT, _INT_LIST, _OPT_STR = range(7)

# section -> key -> (type, default)
SCHEMA: dict[str, dict[str, tuple[int, object]]] = {
    "run": {
        "seed": (_INT, 0),
        "output_dir": (_STR, "."),
    },
    "data": {
        "length": (_INT, 24),
        "features": (_INT, 5),
        "samples": (_INT, 2000),
        "stride": (_INT, 1),
        "delimiter": (_STR, ","),
        "columns": (_OPT_STR, None),
    },
    "transform": {
        "embedding": (_INT, 8),
        "delay": (_INT, 3),
        "width": (_INT, 8),
    },
    "stl": {
        "period": (_INT, 24),
        "robust": (_BOOL, True),
        "inner_iterations": (_INT, 2),
        "outer_iterations": (_OPT_INT, None),
        "seasonal_smoother": (_INT, 7),
        "trend_smoother": (_OPT_INT, None),
        "lowpass_smoother": (_OPT_INT, None),
    },
    "diffusion": {
        "steps": (_INT, 18),
        "sigma_min": (_FLOAT, 0.002),
        "sigma_max": (_FLOAT, 80.0),
        "rho": (_FLOAT, 7.0),
        "sigma_data": (_FLOAT, 0.5),
        "base_channels": (_INT, 128),
        "channel_multipliers": (_INT_LIST, (1, 2, 2, 2)),
        "epochs": (_INT, 100),
        "batch_size": (_INT, 128),
        "learning_rate": (_FLOAT, 1e-4),
        "weight_decay": (_FLOAT, 0.0),
        "precision": (_STR, "float64"),
    },
    "guidance": {
        "layers": (_INT, 2),
        "model_dim": (_INT, 64),
        "heads": (_INT, 4),
        "epochs": (_INT, 50),
        "batch_size": (_INT, 128),
        "learning_rate": (_FLOAT, 1e-3),
        "pairs_per_sample": (_INT, 1),
        "precision": (_STR, "float64"),
        "decomposer": (_STR, "stl"),
        "fourier_cutoff": (_INT, 2),
    },
    "evaluation": {
        "histogram_bins": (_INT, 50),
        "smoothing_epsilon": (_FLOAT, 1e-10),
        "replicates": (_INT, 1),
        "classifier_hidden": (_OPT_INT, None),
        "classifier_layers": (_INT, 2),
        "classifier_epochs": (_INT, 20),
        "classifier_batch": (_INT, 128),
        "classifier_lr": (_FLOAT, 1e-2),
        "predictor_hidden": (_OPT_INT, None),
        "predictor_layers": (_INT, 2),
        "predictor_epochs": (_INT, 20),
        "predictor_batch": (_INT, 128),
        "predictor_lr": (_FLOAT, 1e-3),
        "train_fraction": (_FLOAT, 0.8),
    },
}


def _parse_value(kind: int, raw, where: str):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind == _INT:
            return int(text)
        if kind == _FLOAT:
            return float(text)
        if kind == _BOOL:
            lowered = text.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind == _OPT_INT:
            return None if lowered_none(text) else int(text)
        if kind == _INT_LIST:
            return tuple(int(part) for part in text.split(",") if part.strip())
        return None if kind == _OPT_STR and lowered_none(text) else text
    except ValueError as exc:
        raise ConfigError(f"invalid value for {where}: {raw!r} ({exc})") from exc


def lowered_none(text: str) -> bool:
    return text.lower() in ("", "none", "null")


@dataclass
class RunConfig:
    """Fully resolved configuration for one CLI invocation."""

    values: dict[str, dict[str, object]] = field(default_factory=dict)

    def get(self, section: str, key: str):
        return self.values[section][key]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def output_dir(self) -> Path:
        return Path(self.values["run"]["output_dir"])

    def digest(self) -> str:
        lines = [
            f"{section}.{key}={self.values[section][key]!r}"
            for section in sorted(self.values)
            for key in sorted(self.values[section])
        ]
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()

    # typed views, constructed on demand so module validation applies

    def transform_params(self) -> TransformParams:
        t = self.values["transform"]
        return TransformParams(embedding=t["embedding"], delay=t["delay"], width=t["width"])

    def stl_params(self) -> StlParams:
        s = self.values["stl"]
        return StlParams(
            period=s["period"],
            robust=s["robust"],
            inner_iterations=s["inner_iterations"],
            outer_iterations=s["outer_iterations"],
            seasonal_smoother=s["seasonal_smoother"],
            trend_smoother=s["trend_smoother"],
            lowpass_smoother=s["lowpass_smoother"],
        )

    def schedule(self) -> NoiseSchedule:
        d = self.values["diffusion"]
        return NoiseSchedule(
            steps=d["steps"], sigma_min=d["sigma_min"], sigma_max=d["sigma_max"], rho=d["rho"]
        )

    def denoiser_config(self, features: int) -> DenoiserConfig:
        d = self.values["diffusion"]
        t = self.values["transform"]
        return DenoiserConfig(
            in_channels=features,
            image_height=t["embedding"],
            image_width=t["width"],
            base_channels=d["base_channels"],
            channel_multipliers=d["channel_multipliers"],
            sigma_data=d["sigma_data"],
        )

    def backbone_train_config(self) -> BackboneTrainConfig:
        d = self.values["diffusion"]
        return BackboneTrainConfig(
            epochs=d["epochs"],
            batch_size=d["batch_size"],
            learning_rate=d["learning_rate"],
            weight_decay=d["weight_decay"],
            precision=d["precision"],
        )

    def guidance_config(self, features: int, length: int) -> GuidanceConfig:
        g = self.values["guidance"]
        return GuidanceConfig(
            features=features,
            length=length,
            layers=g["layers"],
            model_dim=g["model_dim"],
            heads=g["heads"],
        )

    def guidance_train_config(self) -> GuidanceTrainConfig:
        g = self.values["guidance"]
        return GuidanceTrainConfig(
            epochs=g["epochs"],
            batch_size=g["batch_size"],
            learning_rate=g["learning_rate"],
            pairs_per_sample=g["pairs_per_sample"],
            precision=g["precision"],
        )

    def kernel_config(self, length: int, style_selection="random", style_index=0) -> KernelConfig:
        g = self.values["guidance"]
        return KernelConfig(
            transform=self.transform_params(),
            schedule=self.schedule(),
            length=length,
            decomposer=g["decomposer"],
            stl=self.stl_params(),
            fourier_cutoff=g["fourier_cutoff"],
            style_selection=style_selection,
            style_index=style_index,
        )

    def eval_config(self) -> EvalConfig:
        e = self.values["evaluation"]
        return EvalConfig(
            histogram_bins=e["histogram_bins"],
            smoothing_epsilon=e["smoothing_epsilon"],
            classifier_hidden=e["classifier_hidden"],
            classifier_layers=e["classifier_layers"],
            classifier_epochs=e["classifier_epochs"],
            classifier_batch=e["classifier_batch"],
            classifier_lr=e["classifier_lr"],
            predictor_hidden=e["predictor_hidden"],
            predictor_layers=e["predictor_layers"],
            predictor_epochs=e["predictor_epochs"],
            predictor_batch=e["predictor_batch"],
            predictor_lr=e["predictor_lr"],
            train_fraction=e["train_fraction"],
            replicates=e["replicates"],
        )

    def validate(self) -> None:
        """Run every data-independent module validation."""
        self.transform_params()
        self.stl_params()
        self.schedule()
        self.backbone_train_config()
        self.guidance_train_config()
        self.eval_config()
        self.kernel_config(length=self.values["data"]["length"])
        if self.values["data"]["length"] < 1 or self.values["data"]["features"] < 1:
            raise ConfigError("data.length and data.features must be >= 1")


def load_run_config(
    path: str | Path | None = None,
    overrides: dict[str, dict[str, object]] | None = None,
) -> RunConfig:
    """Resolve defaults, an optional INI file, then explicit overrides."""
    values = {s: {k: default for k, (_, default) in keys.items()} for s, keys in SCHEMA.items()}

    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                kind = SCHEMA[section][key][0]
                values[section][key] = _parse_value(kind, raw, f"{section}.{key}")

    for section, keys in (overrides or {}).items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in keys.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            if value is not None:
                kind = SCHEMA[section][key][0]
                values[section][key] = _parse_value(kind, value, f"{section}.{key}")

    config = RunConfig(values=values)
    config.validate()
    return config
