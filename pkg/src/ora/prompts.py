"""Prompt template loading.

Templates are plain text files with `{name}` slots, shipped as package data
under `ora/prompts/` and overridable by pointing the CLI at another
directory. Substitution is literal string replacement, so braces inside
embedded code never break rendering.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

TEMPLATE_NAMES = (
    "seed_idea",
    "idea",
    "idea_crossover",
    "code",
    "code_repair",
    "experiment_step",
    "experiment_summary",
    "progressive_summary",
    "long_term",
    "compress",
)


def load_prompts(directory: str | Path | None = None) -> dict[str, str]:
    """Load all templates from `directory`, falling back to the packaged
    defaults for any file it does not provide."""
    templates: dict[str, str] = {}
    package_dir = resources.files(__package__) / "prompts"
    for name in TEMPLATE_NAMES:
        templates[name] = (package_dir / f"{name}.txt").read_text()
    if directory is not None:
        for path in Path(directory).glob("*.txt"):
            templates[path.stem] = path.read_text()
    return templates


def render(template: str, **fields) -> str:
    for key, value in fields.items():
        template = template.replace("{" + key + "}", str(value))
    return template
