"""Independent O(n^2) dedup reference and random-instance generator.

The reference compares raw value tuples pairwise; it shares no code with the
streaming implementation's fingerprint encoding.
"""

from factline.errors import UnparseableDate
from factline.schema import DataPoint, normalize_date

DATE_POOL = [
    "2020",
    "2021",
    "2020-01",
    "2020-02",
    "2020-01-01",
    "2020-01-02",
    "2021-02-01",
    "",
]


def reference_key(record, schema):
    if schema.date_field is not None:
        non_date = tuple(
            str(record.values.get(f.name)) for f in schema.fields if f.name != "date"
        )
        raw = record.values.get("date") or ""
        if not raw:
            return (non_date, "EMPTY", "")
        date = normalize_date(str(raw))
        return (non_date, date.precision.value, date.canonical)
    return tuple(str(record.values.get(f.name)) for f in schema.fields)


def _incomplete(record, schema):
    return any(
        f.required and not str(record.values.get(f.name) or "").strip()
        for f in schema.fields
    )


def brute_force(records, schema):
    kept = []
    for j, record in enumerate(records):
        if _incomplete(record, schema):
            continue
        try:
            key_j = reference_key(record, schema)
        except UnparseableDate:
            continue
        duplicate = False
        for i in range(j):
            earlier = records[i]
            if _incomplete(earlier, schema):
                continue
            try:
                if reference_key(earlier, schema) == key_j:
                    duplicate = True
                    break
            except UnparseableDate:
                continue
        if not duplicate:
            kept.append(record)
    return kept


def random_instance(rng, schema):
    """Collision-rich small instance: tiny value pools, mixed precisions."""
    n = rng.randint(0, 50)
    records = []
    for i in range(n):
        values = {
            "event": rng.choice(["quake", "flood"]),
            "country": rng.choice(["HT", "CM", ""]),
        }
        if "date" in schema.field_names:
            values["date"] = rng.choice(DATE_POOL)
        records.append(DataPoint(f"r{i}", values, "http://h.test/p"))
    return records
