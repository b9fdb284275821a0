"""JSON schemas for machine-readable outputs."""

import json
from functools import lru_cache
from importlib import resources

import jsonschema


@lru_cache(maxsize=None)
def load(name: str) -> dict:
    return json.loads(resources.files(__name__).joinpath(f"{name}.schema.json").read_text())


def validate(doc: dict, name: str) -> None:
    """Raise ``jsonschema.ValidationError`` when ``doc`` does not match schema ``name``."""
    jsonschema.validate(doc, load(name))
