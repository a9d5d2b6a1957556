"""Closed-vocabulary description grammar and its exact inverse parser.

The generator emits templated sentences built from registered phrases; the
parser recovers attribute assignments by longest-first contiguous phrase
matching over the same table plus a user-extensible synonym file. The pair is
adjoint by construction: parsing a generated sentence never contradicts the
attributes it was generated from.
"""

from __future__ import annotations

import json
import re
from importlib import resources

import numpy as np

from .attributes import AttributeVector, AttributeQuery, DISCRETE_DOMAINS
from ..utils import derive_seed

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class GrammarError(ValueError):
    """Raised when the grammar cannot honor a request (e.g. too many distinct sentences)."""


def tokenize(text: str) -> list:
    return _TOKEN_RE.findall(text.lower())


def _canonical_phrases() -> dict:
    """Phrase -> partial attribute map, for every phrase the templates can emit."""
    p = {}
    for word in ("she", "her", "woman", "lady"):
        p[word] = {"gender_presentation": "feminine"}
    for word in ("he", "his", "him", "man", "gentleman"):
        p[word] = {"gender_presentation": "masculine"}
    for tone in DISCRETE_DOMAINS["skin_tone"]:
        p[f"{tone} skin"] = {"skin_tone": tone}
    for color in DISCRETE_DOMAINS["hair_color"]:
        p[f"{color} hair"] = {"hair_color": color}
        p[f"{color} eyebrows"] = {"hair_color": color}
        for length in ("short", "long"):
            p[f"{length} {color} hair"] = {"hair_length": length, "hair_color": color}
    p["short hair"] = {"hair_length": "short"}
    p["long hair"] = {"hair_length": "long"}
    p["bald"] = {"hair_length": "bald"}
    p["glasses"] = {"glasses": "glasses"}
    p["no glasses"] = {"glasses": "none"}
    p["without glasses"] = {"glasses": "none"}
    p["smiling"] = {"smile": "smiling"}
    p["smile"] = {"smile": "smiling"}
    p["not smiling"] = {"smile": "neutral"}
    p["neutral expression"] = {"smile": "neutral"}
    p["hat"] = {"hat": "hat"}
    p["no hat"] = {"hat": "none"}
    p["without a hat"] = {"hat": "none"}
    return p


class Grammar:
    """Phrase table + templates; one instance is shared as the module default."""

    def __init__(self, synonyms: dict | None = None, version: str = "builtin"):
        self.version = version
        self.phrases: dict = {}
        for phrase, mapping in _canonical_phrases().items():
            self._register(phrase, mapping)
        for phrase, mapping in (synonyms or {}).items():
            self._register(phrase, mapping)
        self._max_len = max(len(toks) for toks in self.phrases)

    def _register(self, phrase: str, mapping: dict) -> None:
        toks = tuple(tokenize(phrase))
        if not toks:
            raise GrammarError(f"unparseable phrase {phrase!r}")
        for slot, value in mapping.items():
            if slot not in DISCRETE_DOMAINS or value not in DISCRETE_DOMAINS[slot]:
                raise GrammarError(f"phrase {phrase!r} maps to unknown {slot}={value}")
        self.phrases[toks] = dict(mapping)

    @property
    def vocabulary(self) -> list:
        """Sorted token list covering phrases and template glue words."""
        words = set(_GLUE_WORDS)
        for toks in self.phrases:
            words.update(toks)
        return sorted(words)

    # -- parsing ------------------------------------------------------------

    def parse(self, text: str) -> AttributeQuery:
        """Extract the attribute slots whose phrases occur in `text`.

        Longest phrases win and consume their tokens, so "not smiling" never
        also matches "smiling". Unknown tokens are ignored; the empty query is
        a valid result.
        """
        toks = tokenize(text)
        consumed = [False] * len(toks)
        query: AttributeQuery = {}
        for length in range(min(self._max_len, len(toks)), 0, -1):
            for start in range(0, len(toks) - length + 1):
                if any(consumed[start:start + length]):
                    continue
                window = tuple(toks[start:start + length])
                mapping = self.phrases.get(window)
                if mapping is None:
                    continue
                for i in range(start, start + length):
                    consumed[i] = True
                for slot, value in mapping.items():
                    query.setdefault(slot, value)
        return query

    # -- generation ---------------------------------------------------------

    def describe(self, attrs: AttributeVector, count: int = 10, seed: int = 0) -> list:
        """Generate `count` distinct single-sentence descriptions of `attrs`."""
        if count < 1:
            raise GrammarError("count must be >= 1")
        rng = np.random.default_rng(derive_seed(seed, "describe"))
        pools = []
        for template in _TEMPLATES:
            variants = _template_variants(template, attrs)
            order = rng.permutation(len(variants))
            pools.append([variants[i] for i in order])

        sentences: list = []
        seen = set()
        cursor = [0] * len(pools)
        while len(sentences) < count:
            progressed = False
            for t, pool in enumerate(pools):
                if len(sentences) >= count:
                    break
                while cursor[t] < len(pool):
                    candidate = pool[cursor[t]]
                    cursor[t] += 1
                    if candidate not in seen:
                        seen.add(candidate)
                        sentences.append(candidate)
                        progressed = True
                        break
            if not progressed:
                raise GrammarError(
                    f"grammar can only produce {len(sentences)} distinct sentences, {count} requested")
        return sentences


_GLUE_WORDS = (
    "a", "the", "and", "with", "has", "is", "on", "head",
    "wearing", "wears", "worn", "there", "person", "in", "picture",
)

# Template parts; each sentence mentions the subject (gender) plus >= 1
# attribute phrase, most mention two or three.
_TEMPLATES = (
    ("hair_full",),
    ("skin", "smile"),
    ("glasses", "hat"),
    ("hair_color", "glasses"),
    ("hair_length", "hat"),
    ("smile", "glasses"),
    ("skin", "hair_full"),
    ("hat", "smile"),
    ("glasses", "skin"),
    ("hair_full", "smile"),
    ("skin", "hat"),
    ("hair_color", "skin"),
)

_SUBJECTS = {
    "feminine": ("a woman", "she", "the woman"),
    "masculine": ("a man", "he", "the man"),
}


def _part_variants(part: str, attrs: AttributeVector) -> tuple:
    length, color = attrs.hair_length, attrs.hair_color
    if part == "hair_full":
        if length == "bald":
            return ("is bald", f"is bald and has {color} eyebrows")
        return (f"has {length} {color} hair", f"has {color} hair, worn {length}")
    if part == "hair_color":
        if length == "bald":
            return (f"has {color} eyebrows",)
        return (f"has {color} hair",)
    if part == "hair_length":
        if length == "bald":
            return ("is bald", "has a bald head")
        return (f"has {length} hair",)
    if part == "skin":
        return (f"has {attrs.skin_tone} skin", f"with {attrs.skin_tone} skin")
    if part == "glasses":
        if attrs.glasses == "glasses":
            return ("is wearing glasses", "has glasses on")
        return ("is without glasses", "has no glasses")
    if part == "smile":
        if attrs.smile == "smiling":
            return ("is smiling", "wears a smile")
        return ("has a neutral expression", "is not smiling")
    if part == "hat":
        if attrs.hat == "hat":
            return ("is wearing a hat", "has a hat on")
        return ("is without a hat", "wears no hat")
    raise KeyError(part)


def _template_variants(template: tuple, attrs: AttributeVector) -> list:
    subjects = _SUBJECTS[attrs.gender_presentation]
    parts_options = [_part_variants(p, attrs) for p in template]
    out = []
    for subj in subjects:
        stack = [[]]
        for options in parts_options:
            stack = [prev + [opt] for prev in stack for opt in options]
        for combo in stack:
            body = " and ".join(combo)
            sentence = f"{subj} {body}."
            out.append(sentence[0].upper() + sentence[1:])
    return out


def _load_default_grammar() -> Grammar:
    with resources.files("latentface.data").joinpath("vocab.json").open("r") as fh:
        spec = json.load(fh)
    return Grammar(synonyms=spec.get("synonyms", {}), version=str(spec.get("version", "?")))


_DEFAULT: Grammar | None = None


def default_grammar() -> Grammar:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = _load_default_grammar()
    return _DEFAULT


def describe(attrs: AttributeVector, count: int = 10, seed: int = 0) -> list:
    return default_grammar().describe(attrs, count=count, seed=seed)


def parse_text(text: str) -> AttributeQuery:
    return default_grammar().parse(text)
