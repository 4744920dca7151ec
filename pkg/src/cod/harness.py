"""Experiment orchestration: corpora, per-direction runs, scoring and reports."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .backend import Backend, BackendError, Mode, ReplayMiss
from .lang import Language, parse_lang_code, resolve
from .lexicon import Lexicon, load_lexicon, tokenize
from .metrics import (
    BucketStats,
    KeyMismatch,
    average_scores,
    bleu,
    bucket_stats,
    chrf_pp,
    corpus_chrf_pp,
    read_scores,
    score_deltas,
    sentence_bleu,
)
from .prompt import (
    ASCII_QUOTES,
    DEFAULT_AUX,
    TYPOGRAPHIC,
    ChainSpec,
    PromptVariant,
    Variant,
    assemble_prompt,
    retrieve_demonstrations,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

ENGLISH = "eng_Latn"


class ConfigError(ValueError):
    pass


class LineCountMismatch(ValueError):
    def __init__(self, src_n: int, ref_n: int):
        super().__init__(f"source has {src_n} lines, reference has {ref_n}")
        self.src_n, self.ref_n = src_n, ref_n


class EncodingError(ValueError):
    def __init__(self, path: str | Path, line: int):
        super().__init__(f"{path}:{line}: not valid UTF-8")
        self.path, self.line = path, line


class RunAborted(RuntimeError):
    def __init__(self, direction: str, index: int, cause: BaseException):
        super().__init__(f"{direction}: sentence {index}: {cause}")
        self.direction, self.index, self.cause = direction, index, cause


class FailureBudgetExceeded(RuntimeError):
    pass


# -- corpora --------------------------------------------------------------


@dataclass(frozen=True)
class ParallelCorpus:
    src: Language
    tgt: Language
    pairs: tuple[tuple[str, str], ...]

    @property
    def direction(self) -> str:
        return f"{self.src.code}-{self.tgt.code}"

    def __len__(self) -> int:
        return len(self.pairs)


def read_lines(path: str | Path) -> list[str]:
    raw = Path(path).read_bytes()
    chunks = raw.split(b"\n")
    if chunks and chunks[-1] == b"":
        chunks.pop()
    lines = []
    for lineno, chunk in enumerate(chunks, 1):
        try:
            lines.append(chunk.decode("utf-8").rstrip("\r"))
        except UnicodeDecodeError:
            raise EncodingError(path, lineno) from None
    return lines


def ingest_corpus(
    src_path: str | Path, ref_path: str | Path, src: Language | str, tgt: Language | str
) -> ParallelCorpus:
    sources, refs = read_lines(src_path), read_lines(ref_path)
    if len(sources) != len(refs):
        raise LineCountMismatch(len(sources), len(refs))
    return ParallelCorpus(resolve(src), resolve(tgt), tuple(zip(sources, refs)))


def flores_path(corpus_dir: str | Path, code: str, split: str = "devtest") -> Path:
    return Path(corpus_dir) / f"{code}.{split}"


# -- configuration --------------------------------------------------------


@dataclass
class RunConfig:
    directions: list[tuple[str, str]]
    variant: PromptVariant = field(default_factory=lambda: PromptVariant(Variant.COD))
    aux: tuple[str, ...] = DEFAULT_AUX
    chain_length: int | None = None
    linking_word: str = "means"
    ascii_quotes: bool = False
    model_id: str = "gpt-3.5-turbo"
    temperature: float = 0.0
    max_tokens: int = 512
    mode: Mode = Mode.REPLAY
    corpus_dir: Path | None = None
    split: str = "devtest"
    lexicon: Path | None = None
    cache_dir: Path | None = None
    output: Path | None = None
    max_inflight: int = 4
    max_failures: int = 0
    base_dir: Path = Path(".")

    def chain_for(self, src: Language, tgt: Language) -> ChainSpec:
        return ChainSpec.default(
            src,
            tgt,
            self.aux,
            self.chain_length,
            linking_word=self.linking_word,
            quotes=ASCII_QUOTES if self.ascii_quotes else TYPOGRAPHIC,
        )

    def echo(self) -> dict[str, Any]:
        """Config as plain JSON data, with paths relative to the config file.

        The output path is left out so a report does not depend on where it is written.
        """
        out: dict[str, Any] = {}
        for f in fields(self):
            if f.name in ("base_dir", "output"):
                continue
            value = getattr(self, f.name)
            if isinstance(value, Path):
                value = _relpath(value, self.base_dir)
            elif isinstance(value, PromptVariant):
                value = value.label
            elif isinstance(value, Mode):
                value = value.value
            elif f.name == "directions":
                value = [f"{s}-{t}" for s, t in value]
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out


def _relpath(path: Path, base: Path) -> str:
    try:
        return Path(path).resolve().relative_to(base.resolve()).as_posix()
    except ValueError:
        return Path(path).as_posix()


def parse_direction(text: str) -> tuple[str, str]:
    parts = text.replace("->", "-").split("-")
    if len(parts) != 2:
        raise ConfigError(f"direction {text!r} is not SRC-TGT")
    for code in parts:
        try:
            parse_lang_code(code)
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
    if parts[0] == parts[1]:
        raise ConfigError(f"direction {text!r} has identical source and target")
    return parts[0], parts[1]


def parse_variant(name: str, k_shots: int = 0) -> PromptVariant:
    name = name.strip().lower()
    if name.startswith("fewshot") and name[7:].isdigit():
        name, k_shots = "fewshot", int(name[7:])
    try:
        kind = Variant(name)
    except ValueError:
        raise ConfigError(f"unknown variant {name!r}; choose from {[v.value for v in Variant]}") from None
    try:
        return PromptVariant(kind, k_shots if kind is Variant.FEWSHOT else 0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path, **overrides: Any) -> RunConfig:
    """Read a TOML run manifest; keyword overrides (CLI flags) win over file values."""
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.parent
    model, chain, paths, run = (data.get(k, {}) for k in ("model", "chain", "paths", "run"))

    def rel(value: str | None) -> Path | None:
        return None if value is None else (base / value)

    opts: dict[str, Any] = {
        "model_id": model.get("id", "gpt-3.5-turbo"),
        "temperature": float(model.get("temperature", 0.0)),
        "max_tokens": int(model.get("max_tokens", 512)),
        "aux": tuple(chain.get("aux", DEFAULT_AUX)),
        "chain_length": chain.get("length"),
        "linking_word": chain.get("linking_word", "means"),
        "ascii_quotes": bool(chain.get("ascii_quotes", False)),
        "corpus_dir": rel(paths.get("corpus_dir")),
        "split": paths.get("split", "devtest"),
        "lexicon": rel(paths.get("lexicon")),
        "cache_dir": rel(paths.get("cache")),
        "output": rel(paths.get("output")),
        "max_inflight": int(run.get("max_inflight", 4)),
        "max_failures": int(run.get("max_failures", 0)),
        "base_dir": base,
    }
    variant = run.get("variant", "cod")
    k_shots = int(run.get("k_shots", 0))
    mode = run.get("mode", "replay")
    directions = run.get("directions", [])

    for key, value in overrides.items():
        if value is None:
            continue
        if key == "variant":
            variant = value
        elif key == "k_shots":
            k_shots = value
        elif key == "mode":
            mode = value
        elif key == "directions":
            directions = value
        elif key in ("output", "cache_dir", "lexicon", "corpus_dir"):
            opts[key] = Path(value)
        elif key in opts:
            opts[key] = value
        else:
            raise ConfigError(f"unknown override {key!r}")

    try:
        opts["mode"] = Mode(mode)
    except ValueError:
        raise ConfigError(f"mode must be live, record or replay, not {mode!r}") from None
    if not directions:
        raise ConfigError("no directions configured ([run] directions)")
    cfg = RunConfig(
        directions=[parse_direction(d) for d in directions],
        variant=parse_variant(variant, k_shots),
        **opts,
    )
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if cfg.corpus_dir is None or not cfg.corpus_dir.is_dir():
        raise ConfigError(f"corpus directory {cfg.corpus_dir} does not exist")
    for s, t in cfg.directions:
        for code in (s, t):
            p = flores_path(cfg.corpus_dir, code, cfg.split)
            if not p.is_file():
                raise ConfigError(f"missing corpus file {p}")
    needs_lex = cfg.variant.kind not in (Variant.BASELINE, Variant.FEWSHOT)
    if needs_lex and (cfg.lexicon is None or not cfg.lexicon.is_file()):
        raise ConfigError(f"variant {cfg.variant.label} needs a lexicon file (got {cfg.lexicon})")
    if cfg.mode in (Mode.REPLAY, Mode.RECORD) and cfg.cache_dir is None:
        raise ConfigError(f"mode {cfg.mode.value} needs [paths] cache")
    if cfg.mode is Mode.REPLAY and not cfg.cache_dir.is_dir():
        raise ConfigError(f"replay cache {cfg.cache_dir} does not exist")
    for s, t in cfg.directions:
        try:
            cfg.chain_for(parse_lang_code(s), parse_lang_code(t))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


# -- running --------------------------------------------------------------


@dataclass
class SentenceRecord:
    index: int
    source: str
    reference: str
    prompt: str
    hypothesis: str
    chrfpp: float
    bleu: float
    tokens: int
    matched: int
    rendered: int
    failed: bool = False
    error: str | None = None


@dataclass
class DirectionResult:
    direction: str
    variant: str
    records: list[SentenceRecord]
    chrfpp: float
    bleu: float
    failures: list[int] = field(default_factory=list)
    prompt_chars: int = 0

    def summary(self) -> dict[str, Any]:
        return {
            "direction": self.direction,
            "variant": self.variant,
            "sentences": len(self.records),
            "chrfpp": self.chrfpp,
            "bleu": self.bleu,
            "failures": {"count": len(self.failures), "indices": self.failures},
            "prompt_chars": self.prompt_chars,
        }


@dataclass
class RunReport:
    config: dict[str, Any]
    digest: str
    directions: list[DirectionResult]

    def scores(self, metric: str = "chrfpp") -> dict[str, float]:
        return {d.direction: getattr(d, metric) for d in self.directions}

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RunReport) and asdict(self) == asdict(other)


def prepare_lexicon(lex: Lexicon, src: Language, tgt: Language) -> tuple[Lexicon, bool]:
    """Lexicon keyed on ``src``; for X->English the English words are removed (no reference leakage)."""
    if lex.source_lang != src:
        lex = lex.pivot(src)
    hide = tgt.code == ENGLISH
    if hide:
        lex = lex.drop_language(tgt.code)
    return lex, hide


def run_direction(
    cfg: RunConfig,
    corpus: ParallelCorpus,
    backend: Backend,
    lexicon: Lexicon | None = None,
) -> DirectionResult:
    src, tgt = corpus.src, corpus.tgt
    spec = cfg.chain_for(src, tgt)
    hide = False
    if lexicon is not None:
        lexicon, hide = prepare_lexicon(lexicon, src, tgt)
    variant = cfg.variant
    pool = list(corpus.pairs)

    def one(i: int) -> SentenceRecord:
        source, reference = corpus.pairs[i]
        demos = None
        if variant.kind is Variant.FEWSHOT:
            demos = retrieve_demonstrations(source, pool, variant.k_shots)
        prompt = assemble_prompt(variant, src, tgt, source, lexicon, demos, spec, hide_target=hide)
        failed, error = False, None
        try:
            hypothesis = backend.chat(prompt.text)
        except ReplayMiss as exc:
            raise RunAborted(corpus.direction, i, exc) from exc
        except BackendError as exc:
            hypothesis, failed, error = "", True, str(exc)
        return SentenceRecord(
            index=i,
            source=source,
            reference=reference,
            prompt=prompt.text,
            hypothesis=hypothesis,
            chrfpp=chrf_pp(hypothesis, reference).value,
            bleu=sentence_bleu(hypothesis, reference).value,
            tokens=len(tokenize(source)),
            matched=prompt.matched,
            rendered=prompt.rendered,
            failed=failed,
            error=error,
        )

    with ThreadPoolExecutor(max(1, cfg.max_inflight)) as ex:
        records = list(ex.map(one, range(len(corpus))))

    hyps = [r.hypothesis for r in records]
    refs = [r.reference for r in records]
    return DirectionResult(
        direction=corpus.direction,
        variant=variant.label,
        records=records,
        chrfpp=corpus_chrf_pp(hyps, refs).value if records else 0.0,
        bleu=bleu(hyps, refs).value if records else 0.0,
        failures=[r.index for r in records if r.failed],
        prompt_chars=sum(len(r.prompt) for r in records),
    )


def _digest(cfg: RunConfig, files: Iterable[Path]) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(cfg.echo(), sort_keys=True, ensure_ascii=False).encode())
    for p in sorted(set(files)):
        h.update(_relpath(p, cfg.base_dir).encode())
        h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()


def make_backend(cfg: RunConfig, **kwargs) -> Backend:
    return Backend.from_env(
        cfg.mode,
        cfg.cache_dir,
        model_id=cfg.model_id,
        temperature=cfg.temperature,
        max_tokens=cfg.max_tokens,
        max_inflight=cfg.max_inflight,
        **kwargs,
    )


def run(cfg: RunConfig, backend: Backend | None = None) -> RunReport:
    """Run every configured direction. Failure budgets are checked separately by ``check_failures``."""
    backend = backend or make_backend(cfg)
    lexicon = load_lexicon(cfg.lexicon) if cfg.lexicon and cfg.variant.kind not in (Variant.BASELINE, Variant.FEWSHOT) else None
    inputs: list[Path] = [cfg.lexicon] if lexicon is not None else []
    results = []
    for s, t in cfg.directions:
        sp, tp = flores_path(cfg.corpus_dir, s, cfg.split), flores_path(cfg.corpus_dir, t, cfg.split)
        inputs += [sp, tp]
        corpus = ingest_corpus(sp, tp, s, t)
        results.append(run_direction(cfg, corpus, backend, lexicon))
    return RunReport(cfg.echo(), _digest(cfg, inputs), results)


def check_failures(report: RunReport, budget: int) -> None:
    total = sum(len(d.failures) for d in report.directions)
    if total > budget:
        raise FailureBudgetExceeded(f"{total} failed requests exceed the budget of {budget}")


# -- report files ---------------------------------------------------------


def _line(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def dumps_report(report: RunReport, fmt: str = "jsonl") -> str:
    if fmt == "jsonl":
        lines = [_line({"type": "run", "config": report.config, "digest": report.digest})]
        for d in report.directions:
            lines.append(_line({"type": "direction", **d.summary()}))
            lines += [_line({"type": "sentence", "direction": d.direction, **asdict(r)}) for r in d.records]
        return "\n".join(lines) + "\n"
    if fmt == "tsv":
        rows = ["# metric=chrf++"] + [f"{d.direction}\t{d.chrfpp:.2f}" for d in sorted(report.directions, key=lambda d: d.direction)]
        return "\n".join(rows) + "\n"
    if fmt == "markdown":
        rows = [
            "| Direction | Variant | Sentences | chrF++ | BLEU | Failures |",
            "|---|---|---:|---:|---:|---:|",
        ]
        for d in report.directions:
            rows.append(
                f"| {d.direction} | {d.variant} | {len(d.records)} | {d.chrfpp:.2f} | {d.bleu:.2f} | {len(d.failures)} |"
            )
        return "\n".join(rows) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def emit_report(report: RunReport, path: str | Path, fmt: str = "jsonl") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_report(report, fmt), encoding="utf-8", newline="\n")
    return path


def loads_report(text: str) -> RunReport:
    config: dict[str, Any] | None = None
    digest = ""
    directions: dict[str, DirectionResult] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        kind = None
        try:
            rec = json.loads(line)
            kind = rec.pop("type", None)
            if kind == "run":
                config, digest = rec["config"], rec["digest"]
            elif kind == "direction":
                directions[rec["direction"]] = DirectionResult(
                    direction=rec["direction"],
                    variant=rec["variant"],
                    records=[],
                    chrfpp=rec["chrfpp"],
                    bleu=rec["bleu"],
                    failures=list(rec["failures"]["indices"]),
                    prompt_chars=rec["prompt_chars"],
                )
            elif kind == "sentence":
                directions[rec.pop("direction")].records.append(SentenceRecord(**rec))
            else:
                raise ValueError(f"unknown record type {kind!r}")
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ValueError(f"line {lineno}: bad {kind or 'report'} record: {exc}") from None
    if config is None:
        raise ValueError("report has no run header")
    return RunReport(config, digest, list(directions.values()))


def load_report(path: str | Path) -> RunReport:
    return loads_report(Path(path).read_text(encoding="utf-8"))


def load_scores(path: str | Path, metric: str = "chrfpp") -> dict[str, float]:
    """Direction -> score from either a run report (jsonl) or a score file (tsv)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    first = text.lstrip()[:1]
    if first == "{":
        return loads_report(text).scores(metric)
    file_metric, scores = read_scores(path)
    if file_metric is not None and file_metric != metric:
        raise ValueError(f"{path} holds {file_metric} scores, not {metric}")
    return scores


# -- comparison -----------------------------------------------------------


@dataclass
class Comparison:
    metric: str
    baseline: dict[str, float]
    system: dict[str, float]
    deltas: dict[str, float]
    buckets: BucketStats
    baseline_avg: float
    system_avg: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric,
            "buckets": self.buckets.to_dict(),
            "averages": {"baseline": self.baseline_avg, "system": self.system_avg},
            "directions": [
                {"direction": k, "baseline": self.baseline[k], "system": self.system[k], "delta": self.deltas[k]}
                for k in sorted(self.deltas)
            ],
        }


def compare_runs(
    baseline: RunReport | Mapping[str, float],
    system: RunReport | Mapping[str, float],
    thresholds: Sequence[float] = (5, 10, 20),
    metric: str = "chrfpp",
) -> Comparison:
    base = baseline.scores(metric) if isinstance(baseline, RunReport) else dict(baseline)
    sys_ = system.scores(metric) if isinstance(system, RunReport) else dict(system)
    if set(base) != set(sys_):
        raise KeyMismatch(f"direction sets differ: {sorted(set(base) ^ set(sys_))}")
    return Comparison(
        metric=metric,
        baseline=base,
        system=sys_,
        deltas=score_deltas(base, sys_),
        buckets=bucket_stats(base, sys_, thresholds),
        baseline_avg=average_scores(base),
        system_avg=average_scores(sys_),
    )


def _bucket_label(delta: float, thresholds: Sequence[float]) -> str:
    if delta == 0:
        return "tie"
    sign = "+" if delta > 0 else "-"
    passed = [t for t in sorted(thresholds) if abs(delta) > t]
    return f"{sign}>{passed[-1]:g}" if passed else f"{sign}"


def render_comparison(cmp: Comparison, fmt: str = "markdown") -> str:
    b = cmp.buckets
    name = "chrF++" if cmp.metric == "chrfpp" else "BLEU"
    if fmt == "jsonl":
        return _line(cmp.to_dict()) + "\n"
    if fmt == "tsv":
        rows = [f"# metric={'chrf++' if cmp.metric == 'chrfpp' else 'bleu'}", "direction\tbaseline\tsystem\tdelta"]
        rows += [f"{k}\t{cmp.baseline[k]:.2f}\t{cmp.system[k]:.2f}\t{cmp.deltas[k]:+.2f}" for k in sorted(cmp.deltas)]
        return "\n".join(rows) + "\n"
    if fmt != "markdown":
        raise ValueError(f"unknown report format {fmt!r}")
    ts = b.thresholds
    head = ["# improved"] + [f"> {t:g} points" for t in ts] + ["# degraded"] + [f"> {t:g} points" for t in ts]
    cells = [f"{b.improved}/{b.total}"] + [f"{b.improved_gt[t]}/{b.improved}" for t in ts]
    cells += [f"{b.degraded}/{b.total}"] + [f"{b.degraded_gt[t]}/{b.degraded}" for t in ts]
    out = [
        f"## Changes in {name}",
        "",
        "| " + " | ".join(head) + " | ties |",
        "|" + "---:|" * (len(head) + 1),
        "| " + " | ".join(cells) + f" | {b.ties} |",
        "",
        "## Averages",
        "",
        "| System | " + name + " |",
        "|---|---:|",
        f"| baseline | {cmp.baseline_avg:.2f} |",
        f"| system | {cmp.system_avg:.2f} |",
        "",
        "## Per direction",
        "",
        "| Direction | Baseline | System | Delta | Bucket |",
        "|---|---:|---:|---:|---|",
    ]
    for k in sorted(cmp.deltas):
        d = cmp.deltas[k]
        out.append(f"| {k} | {cmp.baseline[k]:.2f} | {cmp.system[k]:.2f} | {d:+.2f} | {_bucket_label(d, ts)} |")
    return "\n".join(out) + "\n"
