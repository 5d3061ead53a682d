"""Loading of the versioned prompt template files."""

from functools import lru_cache
from importlib.resources import files
from string import Template


@lru_cache(maxsize=None)
def load_template(name: str) -> Template:
    text = (files("factline") / "prompts" / f"{name}.txt").read_text(encoding="utf-8")
    return Template(text)


def render(name: str, **values) -> str:
    return load_template(name).substitute(**values)


def load_text(name: str) -> str:
    return (files("factline") / "prompts" / f"{name}.txt").read_text(encoding="utf-8")
