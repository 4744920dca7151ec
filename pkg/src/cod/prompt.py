"""Prompt assembly for the translation request and every dictionary/demonstration variant."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

from .lang import Language, prompt_name, resolve
from .lexicon import Lexicon, LexiconEntry, lookup

TRANSLATE_TEMPLATE = "Translate the following text from {src} into {tgt}: {sentence}"
DEFAULT_AUX = ("fra_Latn", "deu_Latn", "por_Latn")
TYPOGRAPHIC = ("‘", "’")
ASCII_QUOTES = ("'", "'")


class MissingResource(ValueError):
    pass


class Variant(str, Enum):
    BASELINE = "baseline"
    MONOLINGUAL = "monolingual"
    BILINGUAL = "bilingual"
    DECOMPOSED = "decomposed"
    COD = "cod"
    FEWSHOT = "fewshot"


@dataclass(frozen=True)
class PromptVariant:
    kind: Variant
    k_shots: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", Variant(self.kind))
        if self.kind is Variant.FEWSHOT and self.k_shots < 1:
            raise ValueError("fewshot needs k_shots >= 1")
        if self.kind is not Variant.FEWSHOT and self.k_shots:
            raise ValueError(f"k_shots only applies to fewshot, not {self.kind.value}")

    @property
    def label(self) -> str:
        return f"fewshot{self.k_shots}" if self.kind is Variant.FEWSHOT else self.kind.value


@dataclass(frozen=True)
class ChainSpec:
    """Languages of a dictionary chain: source first, then target, then auxiliaries.

    ``include_source=False`` renders target-side words only, which is the
    one-language chain (the monolingual dictionary).
    """

    ordered_langs: tuple[Language, ...]
    linking_word: str = "means"
    quotes: tuple[str, str] = TYPOGRAPHIC
    include_source: bool = True

    def __post_init__(self):
        langs = tuple(resolve(l) for l in self.ordered_langs)
        object.__setattr__(self, "ordered_langs", langs)
        if len(langs) < 2:
            raise ValueError("a chain needs at least a source and a target language")
        if len(set(langs)) != len(langs):
            raise ValueError(f"duplicate languages in chain: {[l.code for l in langs]}")

    @classmethod
    def default(
        cls,
        src: Language | str,
        tgt: Language | str,
        aux: Sequence[Language | str] = DEFAULT_AUX,
        length: int | None = None,
        **kwargs,
    ) -> "ChainSpec":
        """Chain of ``length`` languages (default all): 1 is target-only, 2 adds the source, 3+ add auxiliaries.

        Auxiliaries equal to the source or target are skipped.
        """
        src, tgt = resolve(src), resolve(tgt)
        extra = [a for a in (resolve(a) for a in aux) if a not in (src, tgt)]
        langs = [src, tgt, *extra]
        if length is not None:
            if not 1 <= length <= len(langs):
                raise ValueError(f"chain length {length} outside 1..{len(langs)}")
            if length == 1:
                return cls((src, tgt), include_source=False, **kwargs)
            langs = langs[:length]
        return cls(tuple(langs), **kwargs)

    @property
    def source(self) -> Language:
        return self.ordered_langs[0]

    @property
    def target(self) -> Language:
        return self.ordered_langs[1]

    @property
    def length(self) -> int:
        return len(self.ordered_langs) if self.include_source else len(self.ordered_langs) - 1

    def truncated(self, n: int) -> "ChainSpec":
        return ChainSpec(self.ordered_langs[:n], self.linking_word, self.quotes, self.include_source)

    def quote(self, word: str) -> str:
        return f"{self.quotes[0]}{word}{self.quotes[1]}"


@dataclass(frozen=True)
class Prompt:
    text: str
    variant: str
    direction: str
    matched: int = 0
    rendered: int = 0
    skipped: int = 0
    meta: dict = field(default_factory=dict)


def build_translation_prompt(src: Language | str, tgt: Language | str, sentence: str) -> str:
    if not sentence:
        raise ValueError("sentence must be non-empty")
    return TRANSLATE_TEMPLATE.format(
        src=prompt_name(resolve(src)), tgt=prompt_name(resolve(tgt)), sentence=sentence
    )


def _links(entry: LexiconEntry, spec: ChainSpec, require_target: bool) -> list[str] | None:
    """Words after the source word in chain order, or None when the entry is unusable."""
    if require_target and not entry.translations.get(spec.target.code):
        return None
    words = [entry.translations[l.code] for l in spec.ordered_langs[1:] if entry.translations.get(l.code)]
    return words or None


def build_chain_lines(
    entries: Sequence[LexiconEntry], spec: ChainSpec, require_target: bool = True
) -> list[str]:
    """One ``‘w0’ means ‘w1’ means … ‘wk’.`` line per usable entry, in the given order."""
    lines = []
    for entry in entries:
        words = _links(entry, spec, require_target)
        if words is None:
            continue
        if spec.include_source:
            words = [entry.source_word, *words]
        else:
            words = words[:1]
        lines.append(f" {spec.linking_word} ".join(spec.quote(w) for w in words) + ".")
    return lines


def build_decomposed_lines(
    entries: Sequence[LexiconEntry], spec: ChainSpec, require_target: bool = True
) -> list[str]:
    """Per entry, one ``‘w0’ means ‘wi’.`` sentence for each chain language, joined by spaces."""
    lines = []
    for entry in entries:
        words = _links(entry, spec, require_target)
        if words is None:
            continue
        src = spec.quote(entry.source_word)
        lines.append(" ".join(f"{src} {spec.linking_word} {spec.quote(w)}." for w in words))
    return lines


# -- demonstrations -------------------------------------------------------


def char_ngram_cosine(a: str, b: str, n: int = 3) -> float:
    va = Counter(a[i : i + n] for i in range(len(a) - n + 1))
    vb = Counter(b[i : i + n] for i in range(len(b) - n + 1))
    dot = sum(c * vb[g] for g, c in va.items() if g in vb)
    if not dot:
        return 0.0
    norm = math.sqrt(sum(c * c for c in va.values())) * math.sqrt(sum(c * c for c in vb.values()))
    return dot / norm


Scorer = Callable[[str, str], float]


def retrieve_demonstrations(
    query: str,
    corpus: Sequence[tuple[str, str]],
    k: int,
    scorer: Scorer = char_ngram_cosine,
) -> list[tuple[str, str]]:
    """Top-``k`` pairs by ``scorer(query, source)``; ties go to the earlier pair, the query itself is never returned."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(
        ((scorer(query, src), i) for i, (src, _) in enumerate(corpus) if src != query),
        key=lambda t: (-t[0], t[1]),
    )
    return [corpus[i] for _, i in ranked[:k]]


def render_demonstrations(demos: Sequence[tuple[str, str]], src: Language, tgt: Language) -> str:
    return "\n\n".join(f"{prompt_name(src)}: {s}\n{prompt_name(tgt)}: {t}" for s, t in demos)


# -- assembly -------------------------------------------------------------


def assemble_prompt(
    variant: PromptVariant | Variant | str,
    src: Language | str,
    tgt: Language | str,
    sentence: str,
    lex: Lexicon | None = None,
    demos: Sequence[tuple[str, str]] | None = None,
    spec: ChainSpec | None = None,
    hide_target: bool = False,
) -> Prompt:
    """Build the full prompt: optional hint block, then the translation request.

    ``hide_target`` drops the target language from every chain (entries no
    longer need a target link), which keeps reference words out of X->English
    prompts.
    """
    if not isinstance(variant, PromptVariant):
        variant = PromptVariant(Variant(variant))
    src, tgt = resolve(src), resolve(tgt)
    spec = spec or ChainSpec.default(src, tgt)
    if spec.source != src or spec.target != tgt:
        raise ValueError(f"chain {spec.source.code}->{spec.target.code} does not match {src.code}->{tgt.code}")
    request = build_translation_prompt(src, tgt, sentence)
    direction = f"{src.code}-{tgt.code}"
    kind = variant.kind

    if kind is Variant.BASELINE:
        return Prompt(request, variant.label, direction)

    if kind is Variant.FEWSHOT:
        if demos is None:
            raise MissingResource("fewshot needs a demonstration pool")
        chosen = list(demos)[: variant.k_shots]
        block = render_demonstrations(chosen, src, tgt)
        text = f"{block}\n\n{request}" if block else request
        return Prompt(text, variant.label, direction, meta={"demos": len(chosen)})

    if lex is None:
        raise MissingResource(f"{kind.value} needs a lexicon")
    matches = [e for _, e in lookup(lex, sentence)]

    if kind is Variant.MONOLINGUAL:
        spec = ChainSpec((src, tgt), spec.linking_word, spec.quotes, include_source=False)
    elif kind is Variant.BILINGUAL:
        spec = spec.truncated(2)
    builder = build_decomposed_lines if kind is Variant.DECOMPOSED else build_chain_lines
    if hide_target:
        rest = tuple(l for l in spec.ordered_langs if l != tgt)
        if len(rest) < 2 or not spec.include_source:
            lines: list[str] = []
        else:
            lines = builder(matches, replace(spec, ordered_langs=rest), require_target=False)
    else:
        lines = builder(matches, spec)
    text = "\n".join([*lines, request])
    return Prompt(text, variant.label, direction, len(matches), len(lines), len(matches) - len(lines))
