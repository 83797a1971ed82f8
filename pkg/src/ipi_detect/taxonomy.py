"""Three-level label hierarchy for infiltration intents (category > action > subaction)."""

from __future__ import annotations

from dataclasses import dataclass

NIO = "NIO"

# category -> action -> subactions, in canonical order
HIERARCHY: dict[str, dict[str, tuple[str, ...]]] = {
    "Impersonation": {
        "Send content": ("Send reviews", "Send messages", "Send emails", "Comment"),
    },
    "Leakage": {
        "View account": (
            "View account settings",
            "Subscription details",
            "Inspect order history",
            "View browsing history",
            "View payment settings",
        ),
        "View content": (
            "View emails",
            "See one's post history",
            "Watch history",
            "View messages",
            "Inspect files",
        ),
        "Upload content": ("Upload photo", "Upload video"),
    },
    "Modification": {
        "Alter account settings": (
            "Change profile photo",
            "Change email",
            "Change username",
            "Change password",
            "Change address",
        ),
        "Modify content": ("Delete emails", "Modify music list"),
        "Alter files": ("Add a file", "Delete a file", "Modify a file"),
    },
    "Software installation": {
        "Software installation": ("Software installation",),
    },
    NIO: {NIO: (NIO,)},
}

CATEGORIES: tuple[str, ...] = tuple(HIERARCHY)
ACTIONS: tuple[str, ...] = tuple(a for acts in HIERARCHY.values() for a in acts)
SUBACTIONS: tuple[str, ...] = tuple(
    s for acts in HIERARCHY.values() for subs in acts.values() for s in subs
)

_PARENT: dict[str, tuple[str, str]] = {
    s: (a, c) for c, acts in HIERARCHY.items() for a, subs in acts.items() for s in subs
}
_ACTION_CATEGORY: dict[str, str] = {a: c for c, acts in HIERARCHY.items() for a in acts}

GRANULARITIES: dict[str, tuple[str, ...]] = {
    "category": CATEGORIES,
    "action": ACTIONS,
    "subaction": SUBACTIONS,
}


class TaxonomyError(KeyError):
    pass


@dataclass(frozen=True)
class TaxonomyLabel:
    subaction: str
    action: str
    category: str

    @classmethod
    def from_subaction(cls, subaction: str) -> "TaxonomyLabel":
        action, category = taxonomy_lookup(subaction)
        return cls(subaction, action, category)

    @property
    def is_nio(self) -> bool:
        return self.subaction == NIO

    def at(self, granularity: str) -> str:
        if granularity not in GRANULARITIES:
            raise ValueError(f"unknown granularity {granularity!r}")
        return getattr(self, granularity)


def taxonomy_lookup(subaction: str) -> tuple[str, str]:
    """Return ``(action, category)`` for a subaction name."""
    try:
        return _PARENT[subaction]
    except KeyError:
        raise TaxonomyError(f"unknown subaction {subaction!r}") from None


def action_category(action: str) -> str:
    try:
        return _ACTION_CATEGORY[action]
    except KeyError:
        raise TaxonomyError(f"unknown action {action!r}") from None


def class_names(granularity: str) -> tuple[str, ...]:
    try:
        return GRANULARITIES[granularity]
    except KeyError:
        raise ValueError(f"unknown granularity {granularity!r}") from None


def n_classes(granularity: str) -> int:
    return len(class_names(granularity))


def nio_index(granularity: str) -> int:
    return class_names(granularity).index(NIO)


def class_index(name: str, granularity: str) -> int:
    names = class_names(granularity)
    try:
        return names.index(name)
    except ValueError:
        raise TaxonomyError(f"{name!r} is not a {granularity} class") from None


def subaction_to_index(subactions, granularity: str):
    """Vectorised subaction name -> class index at the requested granularity."""
    import numpy as np

    names = class_names(granularity)
    lut = {s: names.index(TaxonomyLabel.from_subaction(s).at(granularity)) for s in SUBACTIONS}
    try:
        return np.asarray([lut[s] for s in subactions], dtype=np.int64)
    except KeyError as exc:
        raise TaxonomyError(f"unknown subaction {exc.args[0]!r}") from None
