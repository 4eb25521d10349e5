"""Bundled default configs: policy file, attribute schema, rule table and
example scenarios."""

from importlib import resources


def text(name: str) -> str:
    return (resources.files(__package__) / name).read_text(encoding="utf-8")


def path(name: str) -> str:
    return str(resources.files(__package__) / name)
