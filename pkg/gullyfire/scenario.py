"""Scenario files: YAML documents validated into a Scenario."""

import hashlib
import json
import logging
import pathlib

import pydantic
import yaml

from gullyfire.config import ConfigurationError
from gullyfire.model import Scenario

logger = logging.getLogger(__name__)


class ScenarioError(ConfigurationError):
    """The scenario file is unreadable or invalid."""


def _describe(error: dict) -> str:
    path = ".".join(str(part) for part in error["loc"]) or "<root>"
    message = error["msg"]
    if error["type"] == "value_error" and "error" in error.get("ctx", {}):
        message = str(error["ctx"]["error"])
        # model validators already name their key
        if error["loc"] == () and ": " in message:
            return message
    return f"{path}: {message}"


def parse_scenario(document: dict, source: str = "<scenario>") -> Scenario:
    if not isinstance(document, dict):
        msg = f"{source}: expected a mapping at the top level"
        logger.error(msg)
        raise ScenarioError(msg)
    try:
        return Scenario.model_validate(document)
    except pydantic.ValidationError as e:
        lines = [_describe(error) for error in e.errors()]
        msg = f"{source}: invalid scenario\n" + "\n".join(lines)
        logger.error(msg)
        raise ScenarioError(msg) from e


def load_scenario(path: str | pathlib.Path, seed: int | None = None) -> Scenario:
    """Read, validate and optionally reseed a scenario file."""
    path = pathlib.Path(path)
    try:
        document = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ScenarioError(f"Cannot read scenario {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ScenarioError(f"Malformed YAML in {path}: {e}") from e
    scenario = parse_scenario(document, str(path))
    if seed is not None:
        scenario = scenario.with_seed(seed)
    logger.info(f"Loaded scenario {path} ({scenario.curve.kind}, {len(scenario.epsilon_list)} epsilon values)")
    return scenario


def scenario_digest(scenario: Scenario) -> str:
    """sha256 of the canonical JSON dump; independent of key order in the file."""
    canonical = json.dumps(scenario.model_dump(mode="json", by_alias=True), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
