"""Multilingual dictionaries: keyword extraction, polysemy verification, lookup, persistence."""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, NamedTuple

from .backend import Backend, BackendError
from .lang import Language, parse_lang_code, resolve

log = logging.getLogger(__name__)

FORMAT_TAG = "cod-lexicon/1"
EXTRACT_PROMPT = "Extract the words from the following texts: {sentence}"
JUDGE_PROMPT = 'Do "{orig}" and "{back}" have the same meaning? Answer yes or no.'
MAX_TRIES = 3


class FormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class EmptyExtraction(ValueError):
    pass


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def strip_punct(text: str) -> str:
    start, end = 0, len(text)
    while start < end and _is_punct(text[start]):
        start += 1
    while end > start and _is_punct(text[end - 1]):
        end -= 1
    return text[start:end]


def normalize(word: str) -> str:
    """NFC, case-fold, trim surrounding whitespace and punctuation."""
    return strip_punct(unicodedata.normalize("NFC", word).casefold().strip())


def tokenize(sentence: str) -> list[tuple[int, str]]:
    """``(position, normalized token)`` pairs; position indexes the whitespace split."""
    out = []
    for pos, raw in enumerate(sentence.split()):
        tok = normalize(raw)
        if tok:
            out.append((pos, tok))
    return out


@dataclass(frozen=True)
class LexiconEntry:
    source_word: str
    translations: dict[str, str] = field(default_factory=dict)
    verified: bool = False
    tries_used: int = 0

    def __post_init__(self):
        if not self.source_word.strip():
            raise ValueError("source_word must be non-empty")
        if not 0 <= self.tries_used <= MAX_TRIES:
            raise ValueError(f"tries_used {self.tries_used} outside 0..{MAX_TRIES}")

    @property
    def key(self) -> str:
        return normalize(self.source_word)

    def without(self, *codes: str) -> "LexiconEntry":
        return replace(self, translations={k: v for k, v in self.translations.items() if k not in codes})


@dataclass(frozen=True)
class Lexicon:
    source_lang: Language
    entries: dict[str, LexiconEntry] = field(default_factory=dict)
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for key, entry in self.entries.items():
            if key != entry.key:
                raise ValueError(f"key {key!r} does not match normalize({entry.source_word!r})")
            if self.source_lang.code in entry.translations:
                raise ValueError(f"entry {key!r} lists its own source language")

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, word: str) -> bool:
        return normalize(word) in self.entries

    def __getitem__(self, word: str) -> LexiconEntry:
        return self.entries[normalize(word)]

    def keys(self) -> set[str]:
        return set(self.entries)

    @classmethod
    def from_entries(
        cls,
        source_lang: Language | str,
        entries: Iterable[LexiconEntry],
        provenance: dict[str, Any] | None = None,
    ) -> "Lexicon":
        table: dict[str, LexiconEntry] = {}
        for e in entries:
            if e.key in table:
                raise ValueError(f"duplicate key {e.key!r}")
            table[e.key] = e
        return cls(resolve(source_lang), table, dict(provenance or {}))

    def drop_language(self, code: str) -> "Lexicon":
        """Copy with one language removed from every chain (used to prevent reference leakage)."""
        return Lexicon(
            self.source_lang,
            {k: e.without(code) for k, e in self.entries.items()},
            {**self.provenance, "dropped_language": code},
        )

    def pivot(self, new_source: Language | str) -> "Lexicon":
        """Re-key by the ``new_source`` translations; the old source word joins the chain."""
        new_source = resolve(new_source)
        if new_source == self.source_lang:
            return self
        table: dict[str, LexiconEntry] = {}
        for key in sorted(self.entries):
            e = self.entries[key]
            word = e.translations.get(new_source.code, "")
            if not normalize(word):
                continue
            pivoted = LexiconEntry(
                word,
                {**e.without(new_source.code).translations, self.source_lang.code: e.source_word},
                e.verified,
                e.tries_used,
            )
            # distinct source words can share a rendering; keep the first in key order
            table.setdefault(pivoted.key, pivoted)
        return Lexicon(new_source, table, {**self.provenance, "pivoted_from": self.source_lang.code})


def load_stopwords(path: str | Path | None = None) -> set[str]:
    if path is None:
        text = resources.files("cod.data").joinpath("stopwords.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return {normalize(w) for w in text.splitlines() if normalize(w)}


# -- construction ---------------------------------------------------------

_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")


def parse_keywords(reply: str) -> list[str]:
    """Split an extraction reply into unique words, first occurrence wins."""
    words: list[str] = []
    seen: set[str] = set()
    for item in re.split(r"[,;\n]", reply):
        item = _BULLET.sub("", item)
        for raw in item.split():
            word = strip_punct(raw.strip())
            key = normalize(word)
            if key and key not in seen:
                seen.add(key)
                words.append(word)
    return words


def extract_keywords(sentence: str, backend: Backend) -> list[str]:
    if not sentence.strip():
        raise ValueError("sentence must be non-empty")
    words = parse_keywords(backend.chat(EXTRACT_PROMPT.format(sentence=sentence)))
    if not words:
        raise EmptyExtraction(sentence)
    return words


def judge_says_yes(reply: str) -> bool:
    return reply.strip().lstrip("\"'*").lower().startswith("yes")


class Verification(NamedTuple):
    verified: bool
    tries: int
    translation: str | None


def verify_polysemy(
    word: str,
    target: Language | str,
    mt: Backend,
    judge: Backend,
    max_tries: int = MAX_TRIES,
    source: Language | str = "eng_Latn",
    judge_prompt: str = JUDGE_PROMPT,
) -> Verification:
    """Translate, back-translate and ask the judge until it agrees or tries run out.

    Each try asks the MT service for a fresh sample (``attempt`` = try index), so
    retries are distinct cache entries.  Backend errors propagate.
    """
    if not word.strip():
        raise ValueError("word must be non-empty")
    if max_tries < 1:
        raise ValueError("max_tries must be >= 1")
    target, source = resolve(target), resolve(source)
    for attempt in range(max_tries):
        forward = mt.translate_word(word, source, target, attempt=attempt)
        back = mt.translate_word(forward, target, source, attempt=attempt)
        if judge_says_yes(judge.chat(judge_prompt.format(orig=word, back=back))):
            return Verification(True, attempt + 1, forward)
    return Verification(False, max_tries, None)


def build_lexicon(
    corpus: Iterable[str],
    chain_langs: list[Language | str],
    mt: Backend,
    llm: Backend,
    source_lang: Language | str = "eng_Latn",
    verify_lang: Language | str | None = None,
    max_tries: int = MAX_TRIES,
    max_workers: int = 4,
) -> Lexicon:
    """Extract keywords from ``corpus`` and store verified multilingual entries.

    Polysemy is checked against ``verify_lang`` (default: first chain language);
    the translation from the accepted try replaces the plain one for that language.
    """
    source = resolve(source_lang)
    langs = [resolve(l) for l in chain_langs]
    if not langs:
        raise ValueError("chain_langs must be non-empty")
    if source in langs:
        raise ValueError(f"source language {source.code} cannot be a chain language")
    check = resolve(verify_lang) if verify_lang is not None else langs[0]

    sentences = [s for s in corpus if s.strip()]
    keywords: list[str] = []
    seen: set[str] = set()
    extraction_failures = []
    with ThreadPoolExecutor(max_workers) as pool:
        replies = list(pool.map(lambda s: _safe(extract_keywords, s, llm), sentences))
    for i, (words, err) in enumerate(replies):
        if err is not None:
            extraction_failures.append(i)
            continue
        for w in words:
            if normalize(w) not in seen:
                seen.add(normalize(w))
                keywords.append(w)

    def process(word: str) -> tuple[LexiconEntry | None, str | None]:
        try:
            result = verify_polysemy(word, check, mt, llm, max_tries, source)
        except BackendError as exc:
            return None, f"verify: {exc}"
        if not result.verified:
            return None, None
        translations = {}
        for lang in langs:
            if lang == check:
                translations[lang.code] = result.translation
                continue
            try:
                text = mt.translate_word(word, source, lang)
            except BackendError as exc:
                log.warning("MT failed for %r -> %s: %s", word, lang.code, exc)
                continue
            if text:
                translations[lang.code] = text
        if not translations.get(check.code):
            translations.pop(check.code, None)
        return LexiconEntry(word, translations, True, result.tries), None

    with ThreadPoolExecutor(max_workers) as pool:
        results = list(pool.map(process, keywords))

    entries = [e for e, _ in results if e is not None]
    errors = sorted(w for w, (_, err) in zip(keywords, results) if err)
    attempted = len(keywords) - len(errors)
    provenance = {
        "source_lang": source.code,
        "chain_langs": [l.code for l in langs],
        "verify_lang": check.code,
        "max_tries": max_tries,
        "sentences": len(sentences),
        "extraction_failures": extraction_failures,
        "attempted": attempted,
        "verified": len(entries),
        "acceptance_rate": round(len(entries) / attempted, 6) if attempted else 0.0,
        "errors": errors,
        "model": llm.model_id,
        "mt_model": mt.mt_model_id,
    }
    return Lexicon.from_entries(source, entries, provenance)


def _safe(fn, *args):
    try:
        return fn(*args), None
    except (BackendError, EmptyExtraction) as exc:
        return None, exc


# -- querying -------------------------------------------------------------


def truncate_stopwords(lex: Lexicon, stopwords: Iterable[str]) -> Lexicon:
    stop = set(stopwords)
    kept = {k: e for k, e in lex.entries.items() if k not in stop}
    return Lexicon(lex.source_lang, kept, dict(lex.provenance))


def lookup(lex: Lexicon, sentence: str) -> list[tuple[int, LexiconEntry]]:
    """Matched entries in order of first appearance in ``sentence``."""
    found: list[tuple[int, LexiconEntry]] = []
    seen: set[str] = set()
    for pos, tok in tokenize(sentence):
        if tok in lex.entries and tok not in seen:
            seen.add(tok)
            found.append((pos, lex.entries[tok]))
    return found


# -- persistence ----------------------------------------------------------


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def dumps_lexicon(lex: Lexicon) -> str:
    header = {"format": FORMAT_TAG, "provenance": lex.provenance, "source_lang": lex.source_lang.code}
    lines = [_dumps(header)]
    for key in sorted(lex.entries):
        e = lex.entries[key]
        lines.append(
            _dumps(
                {
                    "key": key,
                    "source_word": e.source_word,
                    "translations": e.translations,
                    "tries_used": e.tries_used,
                    "verified": e.verified,
                }
            )
        )
    return "\n".join(lines) + "\n"


def save_lexicon(lex: Lexicon, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps_lexicon(lex), encoding="utf-8", newline="\n")
    return path


def loads_lexicon(text: str) -> Lexicon:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError("missing header record", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"header is not JSON ({exc.msg})", 1) from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_TAG:
        raise FormatError(f"expected format {FORMAT_TAG!r}", 1)
    try:
        source = parse_lang_code(header["source_lang"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad source_lang: {exc}", 1) from None

    entries: dict[str, LexiconEntry] = {}
    for lineno, line in enumerate(lines[1:], 2):
        try:
            rec = json.loads(line)
            entry = LexiconEntry(
                rec["source_word"],
                dict(rec["translations"]),
                bool(rec["verified"]),
                int(rec["tries_used"]),
            )
            key = rec["key"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed entry ({exc})", lineno) from None
        if key != entry.key:
            raise FormatError(f"key {key!r} is not the normalized source word", lineno)
        if key in entries:
            raise FormatError(f"duplicate key {key!r}", lineno)
        if source.code in entry.translations:
            raise FormatError(f"entry {key!r} translates into its own source language", lineno)
        entries[key] = entry
    return Lexicon(source, entries, header.get("provenance") or {})


def load_lexicon(path: str | Path) -> Lexicon:
    return loads_lexicon(Path(path).read_text(encoding="utf-8"))
