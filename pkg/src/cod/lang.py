"""Language registry: FLORES-200 codes, display names, scripts and prompt phrases."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

CODE_PATTERN = re.compile(r"[a-z]{3}_[A-Z][a-z]{3}")


class UnknownLanguage(KeyError):
    """Raised when a well-formed code is missing from the registry."""

    def __init__(self, code: str):
        super().__init__(code)
        self.code = code

    def __str__(self) -> str:
        return f"unknown language code {self.code!r}"


class MalformedCode(ValueError):
    pass


@dataclass(frozen=True)
class Language:
    code: str
    name: str
    script: str
    multi_script: bool = False

    def __str__(self) -> str:
        return self.code


class Registry:
    """Immutable code -> Language mapping loaded from a ``languages.tsv`` file."""

    def __init__(self, rows: list[tuple[str, str, str]]):
        seen_codes: set[str] = set()
        seen_pairs: set[tuple[str, str]] = set()
        for code, name, script in rows:
            if not CODE_PATTERN.fullmatch(code):
                raise MalformedCode(code)
            if code in seen_codes:
                raise ValueError(f"duplicate code {code!r} in registry")
            if (name, script) in seen_pairs:
                raise ValueError(f"duplicate (name, script) pair {(name, script)!r}")
            seen_codes.add(code)
            seen_pairs.add((name, script))
        # a language is multi-script when its ISO-639-3 prefix occurs more than once
        prefixes = Counter(code[:3] for code, _, _ in rows)
        self._by_code = {
            code: Language(code, name, script, prefixes[code[:3]] > 1)
            for code, name, script in sorted(rows)
        }

    @classmethod
    def from_tsv(cls, text: str) -> "Registry":
        rows = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
            rows.append((parts[0], parts[1], parts[2]))
        return cls(rows)

    @classmethod
    def from_path(cls, path: str | Path) -> "Registry":
        return cls.from_tsv(Path(path).read_text(encoding="utf-8"))

    def __contains__(self, code: object) -> bool:
        return code in self._by_code

    def __iter__(self):
        return iter(self._by_code.values())

    def __len__(self) -> int:
        return len(self._by_code)

    def get(self, code: str) -> Language:
        if not CODE_PATTERN.fullmatch(code):
            raise MalformedCode(f"{code!r} does not match xxx_Yyyy")
        try:
            return self._by_code[code]
        except KeyError:
            raise UnknownLanguage(code) from None

    def to_tsv(self) -> str:
        return "".join(f"{l.code}\t{l.name}\t{l.script}\n" for l in self)


@lru_cache(maxsize=1)
def default_registry() -> Registry:
    text = resources.files("cod.data").joinpath("languages.tsv").read_text(encoding="utf-8")
    return Registry.from_tsv(text)


def parse_lang_code(code: str, registry: Registry | None = None) -> Language:
    """Resolve ``code`` against the registry (the bundled one by default)."""
    return (registry or default_registry()).get(code)


def prompt_name(lang: Language) -> str:
    """Name used inside prompts; the script is spelled out only when the name alone is ambiguous."""
    if lang.multi_script:
        return f"{lang.name} with {lang.script} script"
    return lang.name


def resolve(lang: Language | str) -> Language:
    return lang if isinstance(lang, Language) else parse_lang_code(lang)
