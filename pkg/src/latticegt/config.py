"""Run configuration: JSON schema, parsing and writing."""

import json
from dataclasses import asdict, dataclass, field

import jsonschema

from .errors import ConfigError, LatticeError
from .lattice import N_MAX, SubjectPrior, Thresholds, default_label
from .response import ResponseModel
from .tree import AnalysisConfig, Scheme

_probability = {"type": "number", "minimum": 0, "maximum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "subjects": {"type": "integer", "minimum": 1, "maximum": N_MAX},
        "risk": {"type": "number"},
        "priors": {
            "type": "array",
            "minItems": 1,
            "items": {
                "oneOf": [
                    {"type": "number"},
                    {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["risk"],
                        "properties": {"label": {"type": "string", "minLength": 1}, "risk": {"type": "number"}},
                    },
                ]
            },
        },
        "labels": {"type": "array", "items": {"type": "string", "minLength": 1}},
        "sensitivity": _probability,
        "specificity": _probability,
        "dilution_exponent": {"type": "number", "minimum": 0},
        "upper_eps": _probability,
        "lower_eps": _probability,
        "max_stages": {"type": "integer", "minimum": 1},
        "scheme": {"enum": [s.value for s in Scheme]},
        "prune_threshold": _probability,
        "symmetry": {"type": "boolean"},
        "retained_prior_mass": _probability,
        "worker_count": {"type": "integer", "minimum": 0},
        "chunk_exponent_offset": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer"},
    },
}

HISTORY_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "additionalProperties": False,
        "required": ["pool", "response"],
        "properties": {
            "pool": {"type": "array", "minItems": 1, "items": {"type": ["string", "integer"]}},
            "response": {"enum": ["negative", "positive"]},
        },
    },
}


@dataclass(frozen=True)
class RunConfig:
    labels: tuple
    risks: tuple
    sensitivity: float = 1.0
    specificity: float = 1.0
    dilution_exponent: float = 0.0
    upper_eps: float = 0.001
    lower_eps: float = 0.001
    max_stages: int = 6
    scheme: str = "single"
    prune_threshold: float = 0.0
    symmetry: bool = False
    retained_prior_mass: float = 1.0
    worker_count: int = 1
    chunk_exponent_offset: int = 8
    seed: int = 0
    analysis: AnalysisConfig = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        try:
            priors = [SubjectPrior(i, r) for i, r in enumerate(self.risks)]
            analysis = AnalysisConfig(
                priors=priors,
                model=ResponseModel(self.sensitivity, self.specificity, self.dilution_exponent),
                thresholds=Thresholds(self.upper_eps, self.lower_eps),
                max_stages=self.max_stages,
                scheme=Scheme(self.scheme),
                prune_threshold=self.prune_threshold,
                symmetry=self.symmetry,
                retained_prior_mass=self.retained_prior_mass,
            )
        except LatticeError as exc:
            raise ConfigError(str(exc)) from None
        if len(set(self.labels)) != len(self.labels):
            raise ConfigError("subject labels must be distinct")
        object.__setattr__(self, "analysis", analysis)

    def label_of(self, subject_id):
        return self.labels[subject_id]

    def subject_of(self, ref):
        """Subject id from a label or an integer index."""
        if isinstance(ref, int) and not isinstance(ref, bool):
            if 0 <= ref < len(self.labels):
                return ref
        elif ref in self.labels:
            return self.labels.index(ref)
        raise ConfigError(f"unknown subject {ref!r}")

    def to_json(self):
        body = asdict(self)
        body.pop("analysis")
        body.pop("labels")
        body.pop("risks")
        return {"priors": [{"label": lab, "risk": r} for lab, r in zip(self.labels, self.risks)], **body}


def _field_errors(validator, document):
    messages = []
    for err in sorted(validator.iter_errors(document), key=lambda e: list(e.absolute_path)):
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        messages.append(f"{where}: {err.message}")
    return messages


def config_from_dict(document):
    errors = _field_errors(jsonschema.Draft202012Validator(CONFIG_SCHEMA), document)
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    doc = dict(document)
    priors = doc.pop("priors", None)
    subjects = doc.pop("subjects", None)
    risk = doc.pop("risk", None)
    labels = doc.pop("labels", None)
    if priors is not None:
        if subjects is not None or risk is not None:
            raise ConfigError("give either 'priors' or 'subjects' with 'risk', not both")
        risks = [p if isinstance(p, (int, float)) else p["risk"] for p in priors]
        given = [None if isinstance(p, (int, float)) else p.get("label") for p in priors]
    else:
        if subjects is None or risk is None:
            raise ConfigError("config needs 'priors' or both 'subjects' and 'risk'")
        risks = [risk] * subjects
        given = [None] * subjects
    if labels is not None:
        if len(labels) != len(risks):
            raise ConfigError(f"labels: expected {len(risks)} entries, got {len(labels)}")
        given = [g if g is not None else lab for g, lab in zip(given, labels)]
    if len(risks) > N_MAX:
        raise ConfigError(f"subject count unsupported: {len(risks)} (allowed 1..{N_MAX})")
    for i, r in enumerate(risks):
        if not 0.0 < r < 1.0:
            raise ConfigError(f"priors/{i}: invalid prior: risk {r} is not in (0, 1)")
    final_labels = tuple(g if g is not None else default_label(i) for i, g in enumerate(given))
    return RunConfig(labels=final_labels, risks=tuple(float(r) for r in risks), **doc)


def load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None


def parse_config(path):
    return config_from_dict(load_json(path))


def write_config(config, path):
    with open(path, "w") as fh:
        json.dump(config.to_json(), fh, indent=2)
        fh.write("\n")


def parse_history(document, config):
    """``[(subject ids, outcome string), ...]`` from a history JSON document."""
    errors = _field_errors(jsonschema.Draft202012Validator(HISTORY_SCHEMA), document)
    if errors:
        raise ConfigError("invalid history:\n  " + "\n  ".join(errors))
    return [([config.subject_of(ref) for ref in entry["pool"]], entry["response"]) for entry in document]
