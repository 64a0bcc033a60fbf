"""Access to the packaged device configs, reference tables and protocols."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .dynamics import ProtocolStage, table_rates
from .errors import ConfigError
from .params import DriveSpec, load_config

BIAS_CURRENT_MA = 10.0


def data_path(name: str) -> Path:
    return Path(str(resources.files("bhcool") / "data" / name))


def nominal_config_path() -> Path:
    return data_path("nominal_device.yaml")


def working_point_path() -> Path:
    return data_path("working_point.yaml")


def protocol_path(name: str = "f1_stabilization") -> Path:
    return data_path(f"protocols/{name}.yaml")


@lru_cache(maxsize=None)
def reference() -> dict:
    return yaml.safe_load(data_path("reference.yaml").read_text())


def reference_array(key: str) -> np.ndarray:
    return np.array(reference()[key], dtype=float)


def natural_rates():
    """``(down, up)`` rate dictionaries (1/us) from the fitted natural time constants."""
    ref = reference()
    return table_rates(ref["natural_down_t1_us"]), table_rates(ref["natural_up_t1_us"], upward=True)


def load_working_point():
    """Calibrated device at the bias point (no flux map)."""
    params, _, _ = load_config(working_point_path())
    return params


def load_protocol(path) -> dict:
    """Parse a protocol file into stages and options."""
    doc = yaml.safe_load(Path(path).read_text())
    if not isinstance(doc, dict) or "stages" not in doc:
        raise ConfigError("stages: missing required field")
    stages = []
    for k, st in enumerate(doc["stages"]):
        drives = []
        for d in st.get("drives") or []:
            if "kind" not in d or "pair" not in d:
                raise ConfigError(f"stages[{k}].drives: each drive needs kind and pair")
            drives.append(DriveSpec(kind=d["kind"], pair=tuple(d["pair"]), nbar=d.get("nbar"), rabi=d.get("rabi_mhz"),
                                    detuning=d.get("detuning_ghz"), rate=d.get("rate_per_us")))
        stages.append(ProtocolStage(tuple(drives), st.get("duration_us"), st.get("name", f"stage {k + 1}")))
    return {
        "stages": stages,
        "cumulative": bool(doc.get("cumulative", True)),
        "coherent_factor": float(doc.get("coherent_factor", 0.5)),
        "stage_duration_us": float(doc.get("stage_duration_us", 20.0)),
    }
