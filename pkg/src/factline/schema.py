"""Dynamic schema model, record validation, value coercion and date normalization.

Everything here is pure and deterministic: the same inputs always produce the
same schema, the same violations and the same canonical values, regardless of
locale or environment.
"""

from __future__ import annotations

import datetime
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from urllib.parse import urlsplit

from .errors import SchemaError, UncoercibleValue, UnparseableDate

__all__ = [
    "FieldType",
    "FieldSpec",
    "SchemaSpec",
    "Origin",
    "DataPoint",
    "Precision",
    "DateValue",
    "Violation",
    "ViolationKind",
    "generate_schema",
    "parse_schema_annotation",
    "validate_record",
    "coerce_record",
    "coerce_value",
    "normalize_date",
    "canonical_string",
    "is_absolute_url",
]


class FieldType(str, Enum):
    TEXT = "TEXT"
    INTEGER = "INTEGER"
    FLOAT = "FLOAT"
    DATE = "DATE"


# Identifier-only names keep every separator used elsewhere (fingerprint "|",
# annotation ":" and ",") out of field names.
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

_TYPE_ALIASES = {
    "text": FieldType.TEXT,
    "int": FieldType.INTEGER,
    "float": FieldType.FLOAT,
    "date": FieldType.DATE,
}


@dataclass(frozen=True)
class FieldSpec:
    name: str
    field_type: FieldType = FieldType.TEXT
    required: bool = True

    def __post_init__(self):
        if not _NAME_RE.match(self.name):
            raise SchemaError(f"invalid field name {self.name!r}")


@dataclass(frozen=True)
class SchemaSpec:
    """Ordered field list plus the user's dataset purpose statement."""

    fields: tuple[FieldSpec, ...]
    dataset_description: str = ""

    def __post_init__(self):
        if not self.fields:
            raise SchemaError("schema needs at least one field")
        seen = set()
        for f in self.fields:
            if f.name in seen:
                raise SchemaError(f"duplicate field name {f.name!r}")
            seen.add(f.name)

    @property
    def field_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields)

    def field(self, name: str) -> FieldSpec:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    @property
    def date_field(self) -> FieldSpec | None:
        """The dedup date field: the field literally named ``date``, if any."""
        for f in self.fields:
            if f.name == "date":
                return f
        return None

    def to_dict(self) -> dict:
        return {
            "dataset_description": self.dataset_description,
            "fields": [
                {"name": f.name, "type": f.field_type.value, "required": f.required}
                for f in self.fields
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SchemaSpec":
        fields = tuple(
            FieldSpec(f["name"], FieldType(f["type"]), f.get("required", True))
            for f in doc["fields"]
        )
        return cls(fields=fields, dataset_description=doc.get("dataset_description", ""))


class Origin(str, Enum):
    INITIAL = "INITIAL"
    REMEDIATED = "REMEDIATED"
    DISCOVERED = "DISCOVERED"


def is_absolute_url(url: str) -> bool:
    try:
        parts = urlsplit(url)
    except ValueError:
        return False
    return parts.scheme in ("http", "https") and bool(parts.netloc)


@dataclass
class DataPoint:
    """One dataset row: schema-field values, provenance and its source page.

    ``values`` holds only schema fields; any extra input columns ride along in
    ``passthrough`` and are never validated.
    """

    row_id: str
    values: dict
    source_url: str
    origin: Origin = Origin.INITIAL
    passthrough: dict = field(default_factory=dict)

    def replaced(self, **changes) -> "DataPoint":
        return replace(self, **changes)


class Precision(str, Enum):
    DAY = "DAY"
    MONTH = "MONTH"
    YEAR = "YEAR"


@dataclass(frozen=True)
class DateValue:
    canonical: str
    precision: Precision

    def truncated(self, precision: Precision) -> "DateValue":
        """This date reduced to ``precision`` (never finer than it already is)."""
        if precision == Precision.YEAR:
            return DateValue(self.canonical[:4], Precision.YEAR)
        if precision == Precision.MONTH:
            if self.precision == Precision.YEAR:
                raise ValueError("cannot refine YEAR to MONTH")
            return DateValue(self.canonical[:7], Precision.MONTH)
        if self.precision != Precision.DAY:
            raise ValueError(f"cannot refine {self.precision} to DAY")
        return self


_MONTH_NAMES = {
    "january": 1, "february": 2, "march": 3, "april": 4, "may": 5,
    "june": 6, "july": 7, "august": 8, "september": 9, "october": 10,
    "november": 11, "december": 12,
    "jan": 1, "feb": 2, "mar": 3, "apr": 4, "jun": 6, "jul": 7,
    "aug": 8, "sep": 9, "sept": 9, "oct": 10, "nov": 11, "dec": 12,
}

_MONTH_ALT = "|".join(sorted(_MONTH_NAMES, key=len, reverse=True))

_ISO_DAY_RE = re.compile(r"^(\d{4})-(\d{1,2})-(\d{1,2})$")
_ISO_MONTH_RE = re.compile(r"^(\d{4})-(\d{1,2})$")
_ISO_YEAR_RE = re.compile(r"^(\d{4})$")
_NAME_DAY_RE = re.compile(rf"^({_MONTH_ALT})\.?\s+(\d{{1,2}}),?\s+(\d{{4}})$", re.IGNORECASE)
_DAY_NAME_RE = re.compile(rf"^(\d{{1,2}})\s+({_MONTH_ALT})\.?\s+(\d{{4}})$", re.IGNORECASE)
_NAME_MONTH_RE = re.compile(rf"^({_MONTH_ALT})\.?\s+(\d{{4}})$", re.IGNORECASE)
_SLASH_RE = re.compile(r"^(\d{1,2})/(\d{1,2})/(\d{4})$")


def _day(year: int, month: int, day: int, raw: str) -> DateValue:
    try:
        datetime.date(year, month, day)
    except ValueError:
        raise UnparseableDate(f"not a real calendar date: {raw!r}")
    return DateValue(f"{year:04d}-{month:02d}-{day:02d}", Precision.DAY)


def _month(year: int, month: int, raw: str) -> DateValue:
    if not 1 <= month <= 12:
        raise UnparseableDate(f"no month {month}: {raw!r}")
    return DateValue(f"{year:04d}-{month:02d}", Precision.MONTH)


def normalize_date(raw: str) -> DateValue:
    """Parse ``raw`` into a canonical date at its native precision.

    Accepts ISO forms (YYYY-MM-DD, YYYY-MM, YYYY), English month-name forms
    ("August 14, 2021", "14 August 2021", "August 2021") and month-first
    MM/DD/YYYY. Never fabricates a day or month the input does not carry.
    Raises UnparseableDate for everything else, including two-digit years and
    ambiguous numeric forms.
    """
    text = str(raw).strip()
    if not text:
        raise UnparseableDate("empty value")

    if m := _ISO_DAY_RE.match(text):
        return _day(int(m[1]), int(m[2]), int(m[3]), text)
    if m := _ISO_MONTH_RE.match(text):
        return _month(int(m[1]), int(m[2]), text)
    if _ISO_YEAR_RE.match(text):
        return DateValue(text, Precision.YEAR)
    if m := _NAME_DAY_RE.match(text):
        return _day(int(m[3]), _MONTH_NAMES[m[1].lower()], int(m[2]), text)
    if m := _DAY_NAME_RE.match(text):
        return _day(int(m[3]), _MONTH_NAMES[m[2].lower()], int(m[1]), text)
    if m := _NAME_MONTH_RE.match(text):
        return _month(int(m[2]), _MONTH_NAMES[m[1].lower()], text)
    if m := _SLASH_RE.match(text):
        month, day = int(m[1]), int(m[2])
        # Both fields plausible as months and different: no safe reading.
        if day <= 12 and day != month:
            raise UnparseableDate(f"ambiguous numeric date: {text!r}")
        return _day(int(m[3]), month, day, text)

    raise UnparseableDate(f"unsupported date form: {raw!r}")


_INT_RE = re.compile(r"^[+-]?\d+$")
_FLOAT_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def _strip_numeric(raw: str) -> str:
    # Thousands separators and surrounding whitespace only; anything else
    # (currency signs, units) is remediation's job, not the formatter's.
    return str(raw).strip().replace(",", "")


def _parse_int(raw) -> int:
    if isinstance(raw, bool):
        raise ValueError("bool is not an integer value")
    if isinstance(raw, int):
        return raw
    if isinstance(raw, float):
        if raw.is_integer():
            return int(raw)
        raise ValueError(f"not an integer: {raw!r}")
    text = _strip_numeric(raw)
    if not _INT_RE.match(text):
        raise ValueError(f"not an integer: {raw!r}")
    return int(text)


def _parse_float(raw) -> float:
    if isinstance(raw, bool):
        raise ValueError("bool is not a number")
    if isinstance(raw, (int, float)):
        return float(raw)
    text = _strip_numeric(raw)
    if not _FLOAT_RE.match(text):
        raise ValueError(f"not a number: {raw!r}")
    return float(text)


def _is_empty(value) -> bool:
    return value is None or (isinstance(value, str) and not value.strip())


def parse_schema_annotation(annotation: str) -> list[tuple[str, FieldType | None]]:
    """Parse the ``name`` / ``name:type`` mini-grammar (comma-separated)."""
    specs: list[tuple[str, FieldType | None]] = []
    tokens = annotation.split(",")
    if not annotation.strip():
        raise SchemaError("empty schema annotation")
    for token in tokens:
        token = token.strip()
        if not token:
            raise SchemaError("empty field entry in schema annotation")
        name, sep, type_name = token.partition(":")
        name = name.strip()
        if not _NAME_RE.match(name):
            raise SchemaError(f"invalid field name {name!r}")
        if sep:
            ftype = _TYPE_ALIASES.get(type_name.strip().lower())
            if ftype is None:
                raise SchemaError(f"unknown type annotation {type_name.strip()!r}")
            specs.append((name, ftype))
        else:
            specs.append((name, None))
    names = [n for n, _ in specs]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise SchemaError(f"duplicate field name {sorted(dupes)[0]!r}")
    return specs


def _infer_type(name: str, samples: list) -> FieldType:
    if name == "date":
        # Keeps the dedup trigger coherent even when samples are year-only
        # strings that would otherwise read as integers.
        return FieldType.DATE
    values = [v for v in samples if not _is_empty(v)]
    if not values:
        return FieldType.TEXT

    def all_parse(parser) -> bool:
        for v in values:
            try:
                parser(v)
            except (ValueError, UnparseableDate):
                return False
        return True

    if all_parse(_parse_int):
        return FieldType.INTEGER
    if all_parse(_parse_float):
        return FieldType.FLOAT
    if all_parse(normalize_date):
        return FieldType.DATE
    return FieldType.TEXT


def generate_schema(
    field_specs: list[str] | str,
    sample_rows: list[dict] | None = None,
    dataset_description: str = "",
) -> SchemaSpec:
    """Build a SchemaSpec from ``name``/``name:type`` entries plus sample rows.

    Explicit annotations win; otherwise the type is inferred deterministically
    from the sample values, with ties broken toward TEXT.
    """
    if isinstance(field_specs, str):
        parsed = parse_schema_annotation(field_specs)
    else:
        parsed = parse_schema_annotation(",".join(field_specs))
    sample_rows = sample_rows or []
    fields = []
    for name, annotated in parsed:
        ftype = annotated or _infer_type(name, [row.get(name) for row in sample_rows])
        fields.append(FieldSpec(name=name, field_type=ftype))
    return SchemaSpec(fields=tuple(fields), dataset_description=dataset_description)


class ViolationKind(str, Enum):
    MISSING = "MISSING"
    TYPE_MISMATCH = "TYPE_MISMATCH"


@dataclass(frozen=True)
class Violation:
    field: str
    kind: ViolationKind


def _value_parses(value, ftype: FieldType) -> bool:
    try:
        if ftype == FieldType.INTEGER:
            _parse_int(value)
        elif ftype == FieldType.FLOAT:
            _parse_float(value)
        elif ftype == FieldType.DATE:
            normalize_date(str(value))
    except (ValueError, UnparseableDate):
        return False
    return True


def validate_record(dp: DataPoint, schema: SchemaSpec) -> list[Violation]:
    """Structural consistency check; an empty list means the record parses."""
    violations = []
    for f in schema.fields:
        value = dp.values.get(f.name)
        if _is_empty(value):
            if f.required:
                violations.append(Violation(f.name, ViolationKind.MISSING))
            continue
        if not _value_parses(value, f.field_type):
            violations.append(Violation(f.name, ViolationKind.TYPE_MISMATCH))
    return violations


def coerce_value(value, spec: FieldSpec):
    """Normalize one value to its declared type; raises UncoercibleValue."""
    try:
        if spec.field_type == FieldType.INTEGER:
            return _parse_int(value)
        if spec.field_type == FieldType.FLOAT:
            return _parse_float(value)
        if spec.field_type == FieldType.DATE:
            return normalize_date(str(value)).canonical
        return str(value).strip()
    except (ValueError, UnparseableDate):
        raise UncoercibleValue(spec.name, value)


def coerce_record(dp: DataPoint, schema: SchemaSpec) -> DataPoint:
    """The formatter core: canonical types for every schema field.

    Idempotent: coercing an already-coerced record is a no-op. Raises
    UncoercibleValue when a value cannot be normalized (the record must then
    be rejected or remediated).
    """
    values = {}
    for f in schema.fields:
        raw = dp.values.get(f.name)
        if _is_empty(raw):
            if f.required:
                raise UncoercibleValue(f.name, "" if raw is None else raw)
            values[f.name] = ""
            continue
        values[f.name] = coerce_value(raw, f)
    return dp.replaced(values=values)


def canonical_string(value, spec: FieldSpec) -> str:
    """Render a coerced value as the canonical string used for fingerprints."""
    if _is_empty(value):
        return ""
    if spec.field_type == FieldType.FLOAT and isinstance(value, float):
        return repr(value)
    return str(value)
