"""
Calibration Artifact and Result Document Manager

This module persists the two kinds of JSON documents produced by the
change-point tool: the calibration artifact written by `calibrate` and read
back by `test` / `locate`, and the result documents written by every other
subcommand.

Calibration Artifact Schema:

```json
{
    "schema_version": "1.0",
    "application_version": "1.0.0",
    "command": "calibrate",
    "grid_size": 10000,
    "reps": 10000,
    "seed": 0,
    "sampler": "markov",
    "alpha_used": 0.05,
    "c_hat": 0.9345,
    "quantile_table": [0.0123, ...],
    "samples": null
}
```

Field Descriptions:
- grid_size, reps, seed: the simulation parameters T_d, B and the seed
- sampler: path sampler used ("markov" or "cholesky")
- alpha_used: level at which the tail constant was fitted
- c_hat: fitted tail constant
- quantile_table: 999 quantiles of max V at probabilities 0.001..0.999
- samples: the sorted B maxima, or null when not embedded (optional)

Determinism:
Documents carry no wall-clock timestamps. Keys are written in insertion
order with two-space indentation and repr float formatting, so identical
inputs give identical bytes. Non-finite floats are written as null.

Example Usage:
```python
artifact = CalibrationArtifact.create(calibration, embed_samples=False)
artifact.save("calibration.json")

calibration = CalibrationArtifact.load("calibration.json").to_calibration()
```
"""

import json
import logging
import math
from typing import Any, Dict, Optional

import numpy as np

from libs.errors import CalibrationError
from libs.null_calibration import QUANTILE_PROBABILITIES, NullCalibration

logger = logging.getLogger(__name__)

# Application version echoed in every document
APPLICATION_VERSION = "1.0.0"

# Version of the JSON layouts described in docs/result_schema.json
SCHEMA_VERSION = "1.0"

REQUIRED_FIELDS = ("grid_size", "reps", "seed", "c_hat", "alpha_used", "quantile_table")

OPTIONAL_DEFAULTS = {
    "sampler": "markov",
    "samples": None,
    "schema_version": SCHEMA_VERSION,
    "application_version": APPLICATION_VERSION,
}


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into plain JSON values."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def dumps_document(document: Dict[str, Any]) -> str:
    """Serialize a document deterministically, ending with a newline."""
    return json.dumps(to_jsonable(document), indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_result_json(document: Dict[str, Any], path: str) -> None:
    """
    Write a result document.

    Raises:
        OSError: the path cannot be written.
    """
    text = dumps_document(document)
    with open(path, "w", encoding="utf-8", newline="\n") as file:
        file.write(text)
    logger.debug("wrote %s", path)


def document_header(command: str) -> Dict[str, Any]:
    """First three keys of every document."""
    return {
        "schema_version": SCHEMA_VERSION,
        "application_version": APPLICATION_VERSION,
        "command": command,
    }


class CalibrationArtifact:
    """
    JSON persistence of a NullCalibration.

    Attributes:
        data (dict): the artifact fields in file order.
    """

    def __init__(self, data: Dict[str, Any]):
        self.data = data

    @classmethod
    def create(cls, calibration: NullCalibration, embed_samples: bool = False) -> "CalibrationArtifact":
        if calibration.c_hat is None or calibration.quantile_table is None:
            raise CalibrationError("only a fitted calibration can be persisted")
        data = document_header("calibrate")
        data.update({
            "grid_size": calibration.grid_size,
            "reps": calibration.reps,
            "seed": calibration.seed,
            "sampler": calibration.sampler,
            "alpha_used": calibration.alpha_used,
            "c_hat": calibration.c_hat,
            "quantile_table": [float(q) for q in calibration.quantile_table],
            "samples": None,
        })
        if embed_samples and calibration.samples is not None:
            data["samples"] = [float(v) for v in calibration.samples]
        return cls(data)

    @classmethod
    def load(cls, path: str) -> "CalibrationArtifact":
        """
        Read and validate an artifact file.

        Raises:
            CalibrationError: missing file, invalid JSON, missing required
                              fields or an inconsistent quantile table.
        """
        try:
            with open(path, "r", encoding="utf-8") as file:
                data = json.load(file)
        except FileNotFoundError:
            raise CalibrationError(f"calibration file not found: {path}") from None
        except (OSError, json.JSONDecodeError) as exc:
            raise CalibrationError(f"cannot read calibration file {path}: {exc}") from None

        if not isinstance(data, dict):
            raise CalibrationError(f"calibration file {path} does not hold a JSON object")
        missing = [name for name in REQUIRED_FIELDS if name not in data]
        if missing:
            raise CalibrationError(f"calibration file {path} lacks field(s): {', '.join(missing)}")
        for name, default in OPTIONAL_DEFAULTS.items():
            data.setdefault(name, default)

        artifact = cls(data)
        artifact._validate(path)
        logger.debug("loaded calibration %s (c_hat=%s)", path, data["c_hat"])
        return artifact

    def _validate(self, path: str) -> None:
        table = self.data["quantile_table"]
        if not isinstance(table, list) or len(table) != len(QUANTILE_PROBABILITIES):
            raise CalibrationError(
                f"{path}: quantile_table must hold {len(QUANTILE_PROBABILITIES)} values"
            )
        if any(b < a for a, b in zip(table, table[1:])):
            raise CalibrationError(f"{path}: quantile_table is not sorted")
        c_hat = self.data["c_hat"]
        if not isinstance(c_hat, (int, float)) or not math.isfinite(c_hat) or c_hat <= 0:
            raise CalibrationError(f"{path}: c_hat must be a positive finite number")
        samples = self.data["samples"]
        if samples is not None and len(samples) != self.data["reps"]:
            raise CalibrationError(f"{path}: {len(samples)} samples for reps={self.data['reps']}")

    def save(self, path: str) -> None:
        """Raises OSError when the path cannot be written."""
        write_result_json(self.data, path)

    def to_calibration(self) -> NullCalibration:
        samples = self.data["samples"]
        return NullCalibration(
            grid_size=int(self.data["grid_size"]),
            reps=int(self.data["reps"]),
            seed=int(self.data["seed"]),
            samples=None if samples is None else np.sort(np.asarray(samples, dtype=np.float64)),
            c_hat=float(self.data["c_hat"]),
            alpha_used=float(self.data["alpha_used"]),
            quantile_table=np.asarray(self.data["quantile_table"], dtype=np.float64),
            sampler=str(self.data["sampler"]),
            source="file",
        )


def calibration_echo(calibration: Optional[NullCalibration], c_hat_default: float) -> Dict[str, Any]:
    """The calibration block of test/locate documents."""
    if calibration is None:
        return {"source": "reference", "grid_size": None, "reps": None, "seed": None,
                "c_hat": c_hat_default, "alpha_used": None}
    return {
        "source": calibration.source,
        "grid_size": calibration.grid_size,
        "reps": calibration.reps,
        "seed": calibration.seed,
        "c_hat": calibration.c_hat,
        "alpha_used": calibration.alpha_used,
    }
