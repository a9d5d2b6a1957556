"""Ground-truth attribute vectors for the procedural face dataset.

An :class:`AttributeVector` is the universal oracle of this project: every
rendered image, description, sketch and label map is a deterministic function
of one, so tests can always check behavior against known semantics.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

# Slot order is load-bearing: layer i of the reference generator owns SLOTS[i].
SLOTS = (
    "gender_presentation",
    "skin_tone",
    "hair_color",
    "hair_length",
    "glasses",
    "smile",
    "hat",
    "background_hue",
)

DISCRETE_DOMAINS = {
    "gender_presentation": ("feminine", "masculine"),
    "skin_tone": ("light", "tan", "dark"),
    "hair_color": ("black", "blonde", "red", "gray"),
    "hair_length": ("bald", "short", "long"),
    "glasses": ("none", "glasses"),
    "smile": ("neutral", "smiling"),
    "hat": ("none", "hat"),
}

DISCRETE_SLOTS = tuple(DISCRETE_DOMAINS.keys())


@dataclass(frozen=True)
class AttributeVector:
    """One toy face's semantic ground truth: 7 enum slots plus a hue."""

    gender_presentation: str
    skin_tone: str
    hair_color: str
    hair_length: str
    glasses: str
    smile: str
    hat: str
    background_hue: float

    def __post_init__(self):
        for slot, domain in DISCRETE_DOMAINS.items():
            value = getattr(self, slot)
            if value not in domain:
                raise ValueError(f"{slot}={value!r} not in {domain}")
        if not (0.0 <= self.background_hue < 1.0):
            raise ValueError(f"background_hue {self.background_hue} outside [0, 1)")

    def value(self, slot: str):
        if slot not in SLOTS:
            raise KeyError(slot)
        return getattr(self, slot)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["background_hue"] = float(d["background_hue"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttributeVector":
        return cls(**{k: d[k] for k in SLOTS})


# A partial attribute assignment, e.g. the result of parsing a sentence.
# Keys are slot names, values are enum values (hue never appears: the
# description grammar does not speak about the background).
AttributeQuery = dict


def query_contradicts(query: AttributeQuery, attrs: AttributeVector) -> bool:
    """True if any slot named in the query disagrees with the ground truth."""
    return any(attrs.value(slot) != value for slot, value in query.items())


def sample_attributes(seed: int) -> AttributeVector:
    """Draw one attribute vector, uniform and independent per slot."""
    rng = np.random.default_rng(seed)
    values = {slot: domain[rng.integers(len(domain))] for slot, domain in DISCRETE_DOMAINS.items()}
    values["background_hue"] = float(rng.random())
    return AttributeVector(**values)
