"""Declarative rulepack for the no-model rules baseline.

A rulepack adds per-field regex validity and numeric ranges on top of the
structural checks every rules run performs (required fields present, values
coercible to their declared types). The generic default pack is empty.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import RulepackError, UncoercibleValue
from .schema import DataPoint, FieldType, SchemaSpec, coerce_value

_NUMERIC = (FieldType.INTEGER, FieldType.FLOAT)


@dataclass(frozen=True)
class FieldRule:
    pattern: re.Pattern | None = None
    minimum: float | None = None
    maximum: float | None = None


class Rulepack:
    def __init__(self, rules: dict):
        self.rules = rules

    @classmethod
    def from_doc(cls, doc: dict | None, schema: SchemaSpec) -> "Rulepack":
        doc = doc or {}
        if not isinstance(doc, dict):
            raise RulepackError("rulepack must be a JSON object")
        unknown_keys = set(doc) - {"fields"}
        if unknown_keys:
            raise RulepackError(f"unknown rulepack keys: {sorted(unknown_keys)}")
        rules = {}
        for name, spec in (doc.get("fields") or {}).items():
            if name not in schema.field_names:
                raise RulepackError(f"rulepack field {name!r} is not in the schema")
            if not isinstance(spec, dict):
                raise RulepackError(f"rule for {name!r} must be an object")
            pattern = None
            if spec.get("pattern") is not None:
                try:
                    pattern = re.compile(spec["pattern"])
                except re.error as exc:
                    raise RulepackError(f"bad pattern for {name!r}: {exc}")
            minimum, maximum = spec.get("min"), spec.get("max")
            for bound in (minimum, maximum):
                if bound is not None and not isinstance(bound, (int, float)):
                    raise RulepackError(f"bounds for {name!r} must be numeric")
            if (minimum is not None or maximum is not None) and schema.field(
                name
            ).field_type not in _NUMERIC:
                raise RulepackError(f"bounds given for non-numeric field {name!r}")
            rules[name] = FieldRule(pattern, minimum, maximum)
        return cls(rules)

    def check(self, dp: DataPoint, schema: SchemaSpec) -> list[str]:
        """Problem descriptions; an empty list means the row passes."""
        problems = []
        for f in schema.fields:
            raw = dp.values.get(f.name)
            empty = raw is None or (isinstance(raw, str) and not raw.strip())
            if empty:
                if f.required:
                    problems.append(f"{f.name}: required field is empty")
                continue
            try:
                value = coerce_value(raw, f)
            except UncoercibleValue:
                problems.append(f"{f.name}: not a valid {f.field_type.value.lower()}")
                continue
            rule = self.rules.get(f.name)
            if rule is None:
                continue
            if rule.pattern is not None and not rule.pattern.search(str(raw).strip()):
                problems.append(f"{f.name}: fails pattern {rule.pattern.pattern!r}")
            if rule.minimum is not None and value < rule.minimum:
                problems.append(f"{f.name}: below minimum {rule.minimum}")
            if rule.maximum is not None and value > rule.maximum:
                problems.append(f"{f.name}: above maximum {rule.maximum}")
        return problems
