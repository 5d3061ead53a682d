"""Initialization phase: adapt the pipeline to one dataset.

A single model call over a seeded random sample of rows yields per-field
semantics, negative examples and fallacy illustrations; the result is frozen
for the whole run and rendered into downstream prompts.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass

from .errors import ContextError
from .gateway import AgentKind, Gateway, ResponseShape, ShapeField
from .prompting import render
from .schema import DataPoint, SchemaSpec

SAMPLE_SIZE = 10
MAX_NEGATIVE_EXAMPLES = 8
MIN_FALLACY_EXAMPLES = 2


@dataclass(frozen=True)
class FieldContext:
    field: str
    entity_description: str
    temporal_description: str | None
    negative_examples: tuple[str, ...]


@dataclass(frozen=True)
class FallacyExample:
    scenario: str
    why_wrong: str


@dataclass(frozen=True)
class OperationalContext:
    per_field: dict  # field name -> FieldContext, in schema order
    fallacy_examples: tuple[FallacyExample, ...]
    sample_row_ids: tuple[str, ...]
    rng_seed: int

    def to_markdown(self) -> str:
        """Human-readable dump persisted into the run directory."""
        lines = [f"# Operational context (seed {self.rng_seed})", ""]
        lines.append(f"Sample rows: {', '.join(self.sample_row_ids) or '(none)'}")
        lines.append("")
        for fc in self.per_field.values():
            lines.append(f"## {fc.field}")
            lines.append(fc.entity_description)
            if fc.temporal_description:
                lines.append(f"Temporal: {fc.temporal_description}")
            for neg in fc.negative_examples:
                lines.append(f"- not: {neg}")
            lines.append("")
        lines.append("## Fallacy illustrations")
        for fe in self.fallacy_examples:
            lines.append(f"- {fe.scenario} — {fe.why_wrong}")
        return "\n".join(lines) + "\n"


# Padding used when the model returns fewer than MIN_FALLACY_EXAMPLES.
GENERIC_FALLACIES = (
    FallacyExample(
        scenario="The page mentions the same place name as the row, so the "
        "whole row is assumed correct.",
        why_wrong="A shared keyword does not verify the other fields; each "
        "value needs its own support in the text.",
    ),
    FallacyExample(
        scenario="The page describes a similar event in a different year, "
        "and the reviewer accepts the row's date anyway.",
        why_wrong="Matching on event type alone conflates distinct events; "
        "the date makes them different facts.",
    ),
)

_CONTEXT_SHAPE = ResponseShape(
    ShapeField("fields", "list"),
    ShapeField("fallacy_examples", "list"),
)


def _field_list(schema: SchemaSpec) -> str:
    return "\n".join(f"- {f.name} ({f.field_type.value.lower()})" for f in schema.fields)


def sample_rows(dataset: list[DataPoint], seed: int) -> list[DataPoint]:
    """Uniform sample without replacement, reproducible for a given seed."""
    k = min(SAMPLE_SIZE, len(dataset))
    rng = random.Random(seed)
    indexes = sorted(rng.sample(range(len(dataset)), k))
    return [dataset[i] for i in indexes]


async def build_context(
    gateway: Gateway,
    dataset: list[DataPoint],
    schema: SchemaSpec,
    seed: int,
    include_samples: bool = True,
) -> OperationalContext:
    """Run the context phase once; raises ContextError on unusable responses."""
    if not dataset:
        raise ContextError("*", "cannot build context from an empty dataset")
    sampled = sample_rows(dataset, seed) if include_samples else []
    if sampled:
        shown = "\n".join(json.dumps(dp.values, ensure_ascii=False) for dp in sampled)
        sample_section = f"Example rows drawn from the dataset:\n{shown}"
    else:
        sample_section = "No example rows are available; reason from the schema alone."
    prompt = render(
        "context_generator",
        dataset_description=schema.dataset_description,
        field_list=_field_list(schema),
        sample_section=sample_section,
    )
    doc, _ = await gateway.complete_structured(
        AgentKind.CONTEXT_GENERATOR, "context", prompt, _CONTEXT_SHAPE
    )

    by_field = {}
    for item in doc["fields"]:
        if isinstance(item, dict) and isinstance(item.get("field"), str):
            by_field[item["field"]] = item

    per_field = {}
    for f in schema.fields:
        item = by_field.get(f.name)
        if item is None:
            raise ContextError(f.name)
        entity = str(item.get("entity_description") or "").strip()
        if not entity:
            raise ContextError(f.name, f"empty entity description for field {f.name!r}")
        temporal = item.get("temporal_description")
        temporal = str(temporal).strip() if temporal else None
        negatives = [str(n).strip() for n in item.get("negative_examples") or [] if str(n).strip()]
        if not negatives:
            negatives = [f"any value that is not a {f.name} at all"]
        per_field[f.name] = FieldContext(
            field=f.name,
            entity_description=entity,
            temporal_description=temporal,
            negative_examples=tuple(negatives[:MAX_NEGATIVE_EXAMPLES]),
        )

    fallacies = []
    for item in doc["fallacy_examples"]:
        if isinstance(item, dict) and str(item.get("scenario", "")).strip():
            fallacies.append(
                FallacyExample(
                    scenario=str(item["scenario"]).strip(),
                    why_wrong=str(item.get("why_wrong") or "").strip() or "(unexplained)",
                )
            )
    for generic in GENERIC_FALLACIES:
        if len(fallacies) >= MIN_FALLACY_EXAMPLES:
            break
        fallacies.append(generic)

    return OperationalContext(
        per_field=per_field,
        fallacy_examples=tuple(fallacies),
        sample_row_ids=tuple(dp.row_id for dp in sampled),
        rng_seed=seed,
    )


def render_relevancy_fragment(schema: SchemaSpec) -> str:
    """The low-cost fragment: dataset description and field list, nothing else."""
    return (
        f"Dataset description:\n{schema.dataset_description}\n\n"
        f"Schema fields:\n{_field_list(schema)}"
    )


def _field_section(fc: FieldContext, include_examples: bool) -> str:
    lines = [f"Field `{fc.field}`: {fc.entity_description}"]
    if fc.temporal_description:
        lines.append(f"  Temporal context: {fc.temporal_description}")
    if include_examples:
        for neg in fc.negative_examples:
            lines.append(f"  Do not accept: {neg}")
    return "\n".join(lines)


def render_context(
    ctx: OperationalContext | None,
    target: AgentKind,
    schema: SchemaSpec,
    include_examples: bool = True,
) -> str:
    """Deterministic prompt fragment tailored to the consuming agent."""
    if target == AgentKind.RELEVANCY:
        return render_relevancy_fragment(schema)
    if ctx is None:
        return ""
    sections = [
        _field_section(ctx.per_field[f.name], include_examples)
        for f in schema.fields
        if f.name in ctx.per_field
    ]
    fragment = "Dataset-specific rules:\n" + "\n".join(sections)
    if target == AgentKind.FACT_CHECK and include_examples:
        fallacy_lines = [
            f"- {fe.scenario}\n  Why this is wrong: {fe.why_wrong}"
            for fe in ctx.fallacy_examples
        ]
        fragment += "\n\nFallacy illustrations - mistakes to avoid:\n" + "\n".join(fallacy_lines)
    return fragment


def render_integrity_descriptions(ctx: OperationalContext | None, schema: SchemaSpec) -> str:
    lines = []
    for f in schema.fields:
        fc = ctx.per_field.get(f.name) if ctx else None
        desc = fc.entity_description if fc else f"a {f.field_type.value.lower()} value"
        lines.append(f"- {f.name}: {desc}")
    return "\n".join(lines)
