"""Repository ingestion and two-level hygiene filtering.

File-level rules drop non-Python files, tiny files, minified/generated
blobs, non-code payloads, and vendored paths. Repository-level rules
require enough structure for cross-file retrieval and bound the
near-duplicate ratio (SimHash) and the sampled syntax-parse rate.

All thresholds live in FilterConfig and are echoed into every report so
runs are auditable.
"""

from __future__ import annotations

import ast
import json
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import CheckerError

EXCLUDED_DIR_KEYWORDS = (
    "vendor/",
    "third_party/",
    "site-packages/",
    "dist/",
    "build/",
    ".venv/",
    "migrations/",
)

# file-level rejection reasons
REASON_NOT_PYTHON = "not-python"
REASON_EXCLUDED_DIR = "excluded-dir"
REASON_TOO_FEW_LINES = "too-few-lines"
REASON_MAX_LINE = "max-line"
REASON_AVG_LINE = "avg-line"
REASON_ALNUM_DENSITY = "alnum-density"
REASON_IO = "io"
# repository-level rejection reasons
REASON_TOO_FEW_FILES = "too-few-files"
REASON_LOC_RANGE = "loc-range"
REASON_DUP_RATIO = "dup-ratio"
REASON_PARSE_RATE = "parse-rate"
REASON_NO_FILES = "no-files"


@dataclass(frozen=True)
class FilterConfig:
    min_nonempty_lines: int = 10
    max_line_len: int = 300
    max_avg_line_len: float = 120.0
    min_alnum_density: float = 0.35
    excluded_dirs: tuple[str, ...] = EXCLUDED_DIR_KEYWORDS
    min_files: int = 8
    min_total_loc: int = 300
    max_total_loc: int = 50_000
    max_dup_ratio: float = 0.3
    min_parse_rate: float = 0.7
    dup_check_cap: int = 200
    hamming_threshold: int = 3
    syntax_sample_k: int = 20
    seed: int = 13

    def as_dict(self) -> dict:
        return {
            "min_nonempty_lines": self.min_nonempty_lines,
            "max_line_len": self.max_line_len,
            "max_avg_line_len": self.max_avg_line_len,
            "min_alnum_density": self.min_alnum_density,
            "excluded_dirs": list(self.excluded_dirs),
            "min_files": self.min_files,
            "min_total_loc": self.min_total_loc,
            "max_total_loc": self.max_total_loc,
            "max_dup_ratio": self.max_dup_ratio,
            "min_parse_rate": self.min_parse_rate,
            "dup_check_cap": self.dup_check_cap,
            "hamming_threshold": self.hamming_threshold,
            "syntax_sample_k": self.syntax_sample_k,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class SourceFile:
    """Decoded file plus the statistics the filters look at.

    Line lengths are measured after trimming trailing whitespace; the
    average runs over all lines; alphanumeric density is over every
    character of the raw text.
    """

    path: str
    text: str
    nonempty_lines: int
    max_line_len: int
    avg_line_len: float
    alnum_density: float

    @classmethod
    def from_text(cls, path: str, text: str) -> "SourceFile":
        lines = text.splitlines()
        trimmed = [ln.rstrip() for ln in lines]
        nonempty = sum(1 for ln in trimmed if ln)
        max_len = max((len(ln) for ln in trimmed), default=0)
        avg_len = sum(len(ln) for ln in trimmed) / len(trimmed) if trimmed else 0.0
        density = sum(ch.isalnum() for ch in text) / len(text) if text else 0.0
        return cls(path, text, nonempty, max_len, avg_len, density)

    @classmethod
    def from_bytes(cls, path: str, data: bytes) -> "SourceFile":
        # permissive fallback: undecodable bytes are dropped
        return cls.from_text(path, data.decode("utf-8", errors="ignore"))


def file_filter(file: SourceFile, config: FilterConfig = FilterConfig()) -> str | None:
    """Return a rejection reason code, or None to keep the file."""
    path = file.path.replace("\\", "/")
    if not path.endswith(".py"):
        return REASON_NOT_PYTHON
    if any(kw in path for kw in config.excluded_dirs):
        return REASON_EXCLUDED_DIR
    if file.nonempty_lines < config.min_nonempty_lines:
        return REASON_TOO_FEW_LINES
    if file.max_line_len > config.max_line_len:
        return REASON_MAX_LINE
    if file.avg_line_len > config.max_avg_line_len:
        return REASON_AVG_LINE
    if file.alnum_density < config.min_alnum_density:
        return REASON_ALNUM_DENSITY
    return None


# --- SimHash -----------------------------------------------------------------

# splitmix64 finalizer constants; frozen so fingerprints stay stable.
_MIX_1 = 0x9E3779B97F4A7C15
_MIX_2 = 0xBF58476D1CE4E5B9
_MIX_3 = 0x94D049BB133111EB
_U64 = np.uint64


def _mix64(x: np.ndarray) -> np.ndarray:
    z = x + _U64(_MIX_1)
    z = (z ^ (z >> _U64(30))) * _U64(_MIX_2)
    z = (z ^ (z >> _U64(27))) * _U64(_MIX_3)
    return z ^ (z >> _U64(31))


def simhash64(text: str) -> int:
    """64-bit SimHash over 4-byte shingles of the normalized UTF-8 text.

    Normalization collapses every whitespace run to a single space and
    strips the ends, so interior reformatting does not move the
    fingerprint. Shingle hashing is a fixed 64-bit multiply/xor-shift
    mixer (constants above); each shingle occurrence votes on every bit.
    """
    data = " ".join(text.split()).encode("utf-8")
    if not data:
        return 0
    buf = np.frombuffer(data, dtype=np.uint8).astype(np.uint64)
    if len(buf) < 4:
        keys = np.array([int.from_bytes(data, "big")], dtype=np.uint64)
    else:
        keys = (buf[:-3] << _U64(24)) | (buf[1:-2] << _U64(16)) | (buf[2:-1] << _U64(8)) | buf[3:]
    hashes = _mix64(keys)
    n = len(hashes)
    fingerprint = 0
    for b in range(64):
        ones = int(((hashes >> _U64(b)) & _U64(1)).sum())
        if 2 * ones > n:
            fingerprint |= 1 << b
    return fingerprint


def hamming64(a: int, b: int) -> int:
    return bin(a ^ b).count("1")


def near_dup_ratio(files: Sequence[SourceFile], config: FilterConfig = FilterConfig()) -> float:
    """Fraction of files participating in at least one near-duplicate pair.

    Pairwise SimHash comparison over the first `dup_check_cap` files in
    lexicographic path order (the cap needs a defined order to be
    deterministic).
    """
    considered = sorted(files, key=lambda f: f.path)[: config.dup_check_cap]
    m = len(considered)
    if m == 0:
        return 0.0
    prints = [simhash64(f.text) for f in considered]
    dupes: set[int] = set()
    for i in range(m):
        for j in range(i + 1, m):
            if hamming64(prints[i], prints[j]) <= config.hamming_threshold:
                dupes.add(i)
                dupes.add(j)
    return len(dupes) / m


# --- syntax sampling ----------------------------------------------------------


def ast_syntax_checker(file: SourceFile) -> bool:
    """Default checker: does the text parse as Python."""
    try:
        ast.parse(file.text)
        return True
    except (SyntaxError, ValueError):
        return False


def make_command_checker(argv: Sequence[str]) -> Callable[[SourceFile], bool]:
    """Checker that shells out: exit 0 = parses, exit 1 = syntax error.

    The file content is written to a temp file appended as the last
    argument. Any other exit status or launch failure raises CheckerError
    (infrastructure, not a parse verdict).
    """

    def check(file: SourceFile) -> bool:
        with tempfile.NamedTemporaryFile("w", suffix=Path(file.path).suffix, delete=False) as fh:
            fh.write(file.text)
            tmp = fh.name
        try:
            proc = subprocess.run([*argv, tmp], capture_output=True)
        except OSError as exc:
            raise CheckerError(f"cannot run syntax checker {argv!r}: {exc}") from exc
        finally:
            Path(tmp).unlink(missing_ok=True)
        if proc.returncode == 0:
            return True
        if proc.returncode == 1:
            return False
        raise CheckerError(
            f"syntax checker {argv!r} exited {proc.returncode}: {proc.stderr[:200]!r}"
        )

    return check


def syntax_parse_rate(
    files: Sequence[SourceFile],
    k: int | None = None,
    seed: int | None = None,
    checker: Callable[[SourceFile], bool] = ast_syntax_checker,
    config: FilterConfig = FilterConfig(),
) -> float:
    """Parse success rate on a seeded uniform sample of min(k, n) files.

    Sampling uses numpy's PCG64 generator over the path-sorted list; an
    empty list scores 0 (and the repository is rejected downstream).
    """
    k = config.syntax_sample_k if k is None else k
    seed = config.seed if seed is None else seed
    ordered = sorted(files, key=lambda f: f.path)
    n = len(ordered)
    if n == 0:
        return 0.0
    m = min(k, n)
    rng = np.random.default_rng(seed)
    sample = rng.choice(n, size=m, replace=False)
    passed = sum(1 for i in sorted(int(x) for x in sample) if checker(ordered[i]))
    return passed / m


def repo_filter(
    files: Sequence[SourceFile],
    dup_ratio: float,
    parse_rate: float,
    config: FilterConfig = FilterConfig(),
) -> str | None:
    """Return a repository rejection reason code, or None to keep it."""
    if len(files) < config.min_files:
        return REASON_TOO_FEW_FILES
    total_loc = sum(f.nonempty_lines for f in files)
    if not config.min_total_loc <= total_loc <= config.max_total_loc:
        return REASON_LOC_RANGE
    if dup_ratio > config.max_dup_ratio:
        return REASON_DUP_RATIO
    if parse_rate < config.min_parse_rate:
        return REASON_PARSE_RATE
    return None


# --- pipeline ------------------------------------------------------------------


@dataclass
class FilterReport:
    """Audit record of one filtering run; kept + rejected partition the input."""

    kept: list[str]
    rejected: list[tuple[str, str]]
    repo_verdict: str  # "keep" | "reject"
    repo_reason: str | None
    dup_ratio: float
    parse_rate: float
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kept": self.kept,
            "rejected": [{"path": p, "reason": r} for p, r in self.rejected],
            "repo_verdict": self.repo_verdict,
            "repo_reason": self.repo_reason,
            "dup_ratio": self.dup_ratio,
            "parse_rate": self.parse_rate,
            "config": self.config,
        }


def filter_repository(
    files: Iterable[SourceFile],
    config: FilterConfig = FilterConfig(),
    checker: Callable[[SourceFile], bool] = ast_syntax_checker,
    io_errors: Sequence[tuple[str, str]] = (),
) -> tuple[FilterReport, list[SourceFile]]:
    """Run file-level then repository-level filtering over one repository."""
    ordered = sorted(files, key=lambda f: f.path)
    kept: list[SourceFile] = []
    rejected: list[tuple[str, str]] = [(p, REASON_IO) for p, _ in io_errors]
    for f in ordered:
        reason = file_filter(f, config)
        if reason is None:
            kept.append(f)
        else:
            rejected.append((f.path, reason))
    if not kept:
        report = FilterReport(
            [], rejected, "reject", REASON_NO_FILES if not ordered else REASON_TOO_FEW_FILES,
            0.0, 0.0, config.as_dict(),
        )
        return report, []
    dup = near_dup_ratio(kept, config)
    rate = syntax_parse_rate(kept, checker=checker, config=config)
    reason = repo_filter(kept, dup, rate, config)
    report = FilterReport(
        [f.path for f in kept],
        rejected,
        "keep" if reason is None else "reject",
        reason,
        dup,
        rate,
        config.as_dict(),
    )
    return report, kept


def load_repository(root: str | Path) -> tuple[list[SourceFile], list[tuple[str, str]]]:
    """Read every regular file under root (skipping .git); returns files + IO errors."""
    root = Path(root)
    files: list[SourceFile] = []
    errors: list[tuple[str, str]] = []
    for p in sorted(root.rglob("*")):
        if not p.is_file() or ".git" in p.parts:
            continue
        rel = p.relative_to(root).as_posix()
        try:
            files.append(SourceFile.from_bytes(rel, p.read_bytes()))
        except OSError as exc:
            errors.append((rel, str(exc)))
    return files, errors


def write_manifest(files: Iterable[SourceFile], path: str | Path) -> int:
    """Kept-file manifest JSONL: {path, loc, fingerprint-hex}."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for f in files:
            fh.write(
                json.dumps(
                    {"path": f.path, "loc": f.nonempty_lines, "fingerprint": f"{simhash64(f.text):016x}"}
                )
                + "\n"
            )
            n += 1
    return n
