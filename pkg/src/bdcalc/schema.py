"""JSON schemas for experiment configs and reports, shipped as package data."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

from jsonschema import Draft202012Validator
from jsonschema.exceptions import best_match

from .errors import ConfigurationError

SCHEMA_VERSION = "1"
SCHEMA_NAMES = ("config", "report", "sweep")


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    if name not in SCHEMA_NAMES:
        raise ConfigurationError(f"unknown schema {name!r}", known=list(SCHEMA_NAMES))
    text = resources.files("bdcalc").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


@lru_cache(maxsize=None)
def _validator(name: str) -> Draft202012Validator:
    schema = load_schema(name)
    Draft202012Validator.check_schema(schema)
    return Draft202012Validator(schema)


def pointer(path) -> str:
    """RFC 6901 pointer for a jsonschema error path."""
    parts = [str(p).replace("~", "~0").replace("/", "~1") for p in path]
    return "/" + "/".join(parts) if parts else "/"


def _deepest(error):
    # for if/then and oneOf failures the useful message sits in the context
    while error.context:
        error = best_match(error.context)
    return error


def _offending_path(err) -> list:
    """Path of the error, extended to the key itself for unknown or missing keys."""
    path = list(err.absolute_path)
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        known = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in known)
        if extra:
            path.append(extra[0])
    elif err.validator == "required" and isinstance(err.instance, dict):
        missing = [k for k in err.validator_value if k not in err.instance]
        if missing:
            path.append(missing[0])
    return path


def check(name: str, document) -> None:
    """Raise ``ConfigurationError`` naming the offending key when ``document`` is invalid."""
    err = best_match(_validator(name).iter_errors(document))
    if err is None:
        return
    err = _deepest(err)
    where = pointer(_offending_path(err))
    raise ConfigurationError(f"{name} schema violation at {where}: {err.message}", pointer=where, schema=name)


def is_valid(name: str, document) -> bool:
    return _validator(name).is_valid(document)
