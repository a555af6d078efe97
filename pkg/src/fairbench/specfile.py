"""Parsing of the human-editable cohort-spec document (YAML key-value)."""

from __future__ import annotations

import functools
from importlib import resources
from pathlib import Path

import yaml

from .dataset import GENDERS, NUMERIC_FIELDS, RACES, ClassSpec, CohortSpec, StatBlock
from .errors import ConfigError


def cohort_spec_from_dict(doc: dict) -> CohortSpec:
    if not isinstance(doc, dict) or "classes" not in doc:
        raise ConfigError("cohort spec must be a mapping with a top-level 'classes' key")
    classes = doc["classes"]
    for required in ("ITP", "NonITP"):
        if required not in classes:
            raise ConfigError(f"cohort spec must define class {required!r}")
    return CohortSpec(
        itp=_class_spec(classes["ITP"], "ITP"),
        non_itp=_class_spec(classes["NonITP"], "NonITP"),
    )


def _class_spec(doc: dict, name: str) -> ClassSpec:
    try:
        size = int(doc["size"])
        gender = {str(k): float(v) for k, v in doc["gender"].items()}
        race = {str(k): float(v) for k, v in doc["race"].items()}
        variables = {}
        for var, block in doc["variables"].items():
            variables[str(var)] = StatBlock(
                lo=float(block["min"]),
                hi=float(block["max"]),
                median=None if block.get("median") is None else float(block["median"]),
                mean=None if block.get("mean") is None else float(block["mean"]),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed cohort spec for class {name}: {exc}") from exc
    if set(gender) - set(GENDERS):
        raise ConfigError(f"class {name}: gender keys must be in {GENDERS}")
    if set(race) - set(RACES):
        raise ConfigError(f"class {name}: race keys must be in {RACES}")
    if set(variables) != set(NUMERIC_FIELDS):
        raise ConfigError(f"class {name}: variables must be exactly {sorted(NUMERIC_FIELDS)}")
    return ClassSpec(size=size, gender=gender, race=race, variables=variables)


def load_cohort_spec(path: str | Path) -> CohortSpec:
    with Path(path).open(encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return cohort_spec_from_dict(doc)


@functools.lru_cache(maxsize=1)
def default_cohort_spec() -> CohortSpec:
    """Shipped calibration: 100 ITP + 50 non-ITP with published blood statistics."""
    text = resources.files("fairbench").joinpath("data/default_cohort.yaml").read_text("utf-8")
    return cohort_spec_from_dict(yaml.safe_load(text))
