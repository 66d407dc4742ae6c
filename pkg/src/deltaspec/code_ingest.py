"""Kernel source ingestion: file selection plus two-tier function extraction.

Tier 1 parses each candidate definition with pycparser against a typedef
prelude assembled from stub headers, which yields real parameter types. Kernel
code is full of constructs a strict C99 parser rejects (macro-wrapped
definitions, in-body preprocessor blocks), so tier 2 falls back to a
brace-matching scanner that still recovers name, signature text and exact
spans. Unparseable residue that is not function-like is logged, never raised.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import pycparser
from pycparser import c_ast, c_generator
from pycparser.c_parser import ParseError

from .errors import EmptyIndex, InvalidInputs, IoError
from .tokenizer import count_tokens

log = logging.getLogger(__name__)

TIER_SYNTAX = "syntax-tree"
TIER_FALLBACK = "brace-fallback"

DEFAULT_GLOBS = ("net/**/*.c", "net/**/*.h", "netinet/**/*.c", "netinet/**/*.h",
                 "sys/netinet/**/*.c", "sys/netinet/**/*.h")
DEFAULT_KEYWORDS = ("tcp", "ip")

_CONTROL_KEYWORDS = frozenset(
    {"if", "for", "while", "switch", "do", "else", "return", "sizeof"})
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_MACRO_NAME_RE = re.compile(r"[A-Z][A-Z0-9_]*\Z")


@dataclass(frozen=True)
class SourceFile:
    path: str  # tree-relative, forward slashes
    version: str
    content: str
    line_count: int
    token_count: int

    @classmethod
    def load(cls, root: Path, relpath: str, version: str) -> "SourceFile":
        text = (root / relpath).read_text(encoding="utf-8", errors="replace")
        return cls(path=relpath, version=version, content=text,
                   line_count=len(text.splitlines()),
                   token_count=count_tokens(text))


@dataclass(frozen=True)
class Span:
    char_start: int
    char_end: int  # exclusive
    line_start: int  # 1-based, inclusive
    line_end: int


@dataclass(frozen=True)
class CodeFunction:
    name: str
    signature: str  # whitespace-collapsed source text up to the open brace
    params: tuple[tuple[str, str], ...]  # (name, type) pairs; empty for tier 2
    span: Span
    doc_comment: str | None
    file: str
    token_count: int
    extraction_tier: str

    @property
    def fid(self) -> str:
        return f"{self.file}:{self.span.line_start}:{self.name}"

    @property
    def line_count(self) -> int:
        return self.span.line_end - self.span.line_start + 1

    def to_dict(self) -> dict:
        return {
            "fid": self.fid,
            "name": self.name,
            "signature": self.signature,
            "params": [list(p) for p in self.params],
            "span": [self.span.char_start, self.span.char_end,
                     self.span.line_start, self.span.line_end],
            "doc_comment": self.doc_comment,
            "file": self.file,
            "token_count": self.token_count,
            "extraction_tier": self.extraction_tier,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CodeFunction":
        s = d["span"]
        return cls(name=d["name"], signature=d["signature"],
                   params=tuple((p[0], p[1]) for p in d["params"]),
                   span=Span(s[0], s[1], s[2], s[3]),
                   doc_comment=d.get("doc_comment"),
                   file=d["file"], token_count=d["token_count"],
                   extraction_tier=d["extraction_tier"])


@dataclass
class CodebaseIndex:
    version: str
    files: list[SourceFile]
    functions: list[CodeFunction]

    @property
    def total_functions(self) -> int:
        return len(self.functions)

    @property
    def total_lines(self) -> int:
        return sum(f.line_count for f in self.functions)

    def by_fid(self) -> dict[str, CodeFunction]:
        return {f.fid: f for f in self.functions}


@dataclass(frozen=True)
class ExtractionStats:
    version: str
    total_functions: int
    total_lines: int
    selected_functions: float
    selected_lines: float
    function_extraction_rate: float  # percent, one decimal
    line_extraction_rate: float

    @classmethod
    def from_raw(cls, version: str, total_functions: int, total_lines: int,
                 selected_functions: float, selected_lines: float) -> "ExtractionStats":
        if total_functions <= 0:
            raise EmptyIndex("no functions in index; extraction rate undefined")
        if total_lines <= 0:
            raise EmptyIndex("no function lines in index; extraction rate undefined")
        if selected_functions < 0 or selected_lines < 0:
            raise InvalidInputs("selected counts must be nonnegative")
        return cls(
            version=version,
            total_functions=total_functions,
            total_lines=total_lines,
            selected_functions=round(selected_functions, 1),
            selected_lines=round(selected_lines, 1),
            function_extraction_rate=round(100.0 * selected_functions / total_functions, 1),
            line_extraction_rate=round(100.0 * selected_lines / total_lines, 1),
        )

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "total_functions": self.total_functions,
            "total_lines": self.total_lines,
            "selected_functions": self.selected_functions,
            "selected_lines": self.selected_lines,
            "function_extraction_rate": self.function_extraction_rate,
            "line_extraction_rate": self.line_extraction_rate,
        }


def select_protocol_sources(
    tree_root: str | Path,
    version: str,
    *,
    globs: Sequence[str] = DEFAULT_GLOBS,
    keywords: Sequence[str] = DEFAULT_KEYWORDS,
) -> list[SourceFile]:
    """Pick protocol-relevant C files from a source tree.

    A file is kept when its tree-relative path matches one of the globs or
    its stem contains one of the keywords. Results are ordered by path so a
    rerun over the same tree is byte-for-byte identical.
    """
    root = Path(tree_root)
    if not root.is_dir():
        raise IoError(f"source tree root not readable: {root}")
    keep: set[str] = set()
    for pattern in globs:
        for hit in root.glob(pattern):
            if hit.is_file():
                keep.add(hit.relative_to(root).as_posix())
    lowered = [k.lower() for k in keywords]
    for hit in root.rglob("*"):
        if not hit.is_file() or hit.suffix not in (".c", ".h"):
            continue
        stem = hit.stem.lower()
        if any(k in stem for k in lowered):
            keep.add(hit.relative_to(root).as_posix())
    return [SourceFile.load(root, rel, version) for rel in sorted(keep)]


def mask_comments_and_strings(src: str) -> str:
    """Blank out comment and string interiors, preserving length and newlines.

    The scanner tracks brace depth on the masked text so offsets carry over
    to the original unchanged.
    """
    out = list(src)
    n = len(src)
    i = 0
    NORMAL, LINE, BLOCK, STR, CHR = range(5)
    state = NORMAL
    while i < n:
        c = src[i]
        if state == NORMAL:
            if c == "/" and i + 1 < n and src[i + 1] == "/":
                out[i] = out[i + 1] = " "
                state = LINE
                i += 2
                continue
            if c == "/" and i + 1 < n and src[i + 1] == "*":
                out[i] = out[i + 1] = " "
                state = BLOCK
                i += 2
                continue
            if c == '"':
                state = STR
            elif c == "'":
                state = CHR
            i += 1
        elif state == LINE:
            if c == "\n":
                state = NORMAL
            else:
                out[i] = " "
            i += 1
        elif state == BLOCK:
            if c == "*" and i + 1 < n and src[i + 1] == "/":
                out[i] = out[i + 1] = " "
                state = NORMAL
                i += 2
                continue
            if c != "\n":
                out[i] = " "
            i += 1
        else:  # STR or CHR
            quote = '"' if state == STR else "'"
            if c == "\\" and i + 1 < n:
                out[i] = out[i + 1] = " "
                i += 2
                continue
            if c == quote:
                state = NORMAL
            elif c != "\n":
                out[i] = " "
            i += 1
    return "".join(out)


def _mask_preprocessor(masked: str) -> str:
    """Additionally blank preprocessor lines (with continuations) for the
    depth tracker; tier-1 parsing still sees the original text."""
    out: list[str] = []
    lines = masked.split("\n")
    i = 0
    while i < len(lines):
        line = lines[i]
        if line.lstrip().startswith("#"):
            while True:
                cont = lines[i].endswith("\\")
                out.append(" " * len(lines[i]))
                if not cont or i + 1 >= len(lines):
                    break
                i += 1
            i += 1
            continue
        out.append(line)
        i += 1
    return "\n".join(out)


@dataclass(frozen=True)
class _Candidate:
    decl_start: int
    open_brace: int
    close_brace: int  # index of '}'
    name: str
    paren_open: int
    paren_close: int


def _match_brace(text: str, open_idx: int) -> int | None:
    depth = 0
    for i in range(open_idx, len(text)):
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
            if depth == 0:
                return i
    return None


def _scan_candidates(masked: str) -> list[_Candidate]:
    """Propose top-level function-definition regions from masked text."""
    candidates: list[_Candidate] = []
    depth = 0
    i = 0
    n = len(masked)
    last_region_end = -1
    while i < n:
        c = masked[i]
        if c == "{":
            if depth == 0:
                cand = _inspect_open_brace(masked, i, last_region_end)
                if cand is not None:
                    candidates.append(cand)
                    last_region_end = cand.close_brace
                    i = cand.close_brace + 1
                    continue
            depth += 1
        elif c == "}":
            depth = max(0, depth - 1)
        i += 1
    return candidates


def _inspect_open_brace(masked: str, brace_idx: int, prev_end: int) -> _Candidate | None:
    # Walk back over whitespace; a function definition shows ')' just before
    # its body. Anything else (struct/enum/initializer) is rejected here.
    j = brace_idx - 1
    while j >= 0 and masked[j].isspace():
        j -= 1
    if j < 0 or masked[j] != ")":
        return None
    paren_close = j
    depth = 0
    while j >= 0:
        if masked[j] == ")":
            depth += 1
        elif masked[j] == "(":
            depth -= 1
            if depth == 0:
                break
        j -= 1
    if j < 0:
        return None
    paren_open = j
    j -= 1
    while j >= 0 and masked[j].isspace():
        j -= 1
    ident_end = j + 1
    while j >= 0 and (masked[j].isalnum() or masked[j] == "_"):
        j -= 1
    name = masked[j + 1:ident_end]
    if not _IDENT_RE.match(name) or name in _CONTROL_KEYWORDS:
        return None
    # Declaration starts after the previous top-level terminator.
    k = j
    while k > prev_end and masked[k] not in ";}":
        k -= 1
    decl_start = k + 1 if k >= 0 and masked[k] in ";}" else max(prev_end + 1, 0)
    seg = masked[decl_start:j + 1]
    if "=" in seg:  # initializer, not a definition
        return None
    close = _match_brace(masked, brace_idx)
    if close is None:
        return None
    while decl_start < j + 1 and masked[decl_start].isspace():
        decl_start += 1
    return _Candidate(decl_start=decl_start, open_brace=brace_idx,
                      close_brace=close, name=name,
                      paren_open=paren_open, paren_close=paren_close)


def _line_of(src: str, idx: int) -> int:
    return src.count("\n", 0, idx) + 1


def _doc_comment_before(src: str, decl_start: int) -> str | None:
    """Contiguous comment block directly above the declaration, if any."""
    head = src[:decl_start]
    lines = head.split("\n")
    # Drop the partial last line (indentation of the declaration itself).
    if lines and lines[-1].strip() == "":
        lines = lines[:-1]
    else:
        return None
    if not lines or not lines[-1].strip():
        return None  # blank line breaks contiguity
    last = lines[-1].rstrip()
    if last.endswith("*/"):
        block: list[str] = []
        for line in reversed(lines):
            block.append(line)
            if "/*" in line:
                return "\n".join(reversed(block)).strip()
        return None
    if last.lstrip().startswith("//"):
        block = []
        for line in reversed(lines):
            if line.lstrip().startswith("//"):
                block.append(line)
            else:
                break
        return "\n".join(reversed(block)).strip()
    return None


_TYPE_GEN = c_generator.CGenerator()


def _param_pairs(funcdef: c_ast.FuncDef) -> tuple[tuple[str, str], ...]:
    decl = funcdef.decl.type
    args = decl.args
    if args is None:
        return ()
    pairs: list[tuple[str, str]] = []
    for prm in args.params:
        if isinstance(prm, c_ast.Typename):
            rendered = _TYPE_GEN.visit(prm)
            if rendered.strip() == "void":
                continue  # (void) means no parameters
            pairs.append(("", rendered.strip()))
        elif isinstance(prm, c_ast.Decl):
            wrapper = c_ast.Typename(name=None, quals=prm.quals,
                                     align=None, type=prm.type)
            pairs.append((prm.name or "", _TYPE_GEN.visit(wrapper).strip()))
        elif isinstance(prm, c_ast.EllipsisParam):
            pairs.append(("", "..."))
    return tuple(pairs)


def _strip_declname(rendered: str, name: str) -> str:
    # CGenerator renders a Typename built from a Decl's type with the decl
    # name embedded ("struct sock *sk"); peel the name off the tail.
    if name and rendered.endswith(name):
        return rendered[:-len(name)].strip()
    return rendered.strip()


def _try_syntax_tier(region_src: str, prelude: str, name: str) -> c_ast.FuncDef | None:
    source = prelude + "\n" + region_src if prelude else region_src
    parser = pycparser.CParser()
    try:
        ast = parser.parse(source, filename="<region>")
    except (ParseError, AssertionError):
        return None
    for node in ast.ext:
        if isinstance(node, c_ast.FuncDef) and node.decl.name == name:
            return node
    return None


def _fallback_name(masked: str, cand: _Candidate) -> str:
    """Macro-wrapped definitions name the function in their first argument."""
    if _MACRO_NAME_RE.match(cand.name):
        inner = masked[cand.paren_open + 1:cand.paren_close]
        first = inner.split(",", 1)[0].strip()
        if _IDENT_RE.match(first):
            return first
    return cand.name


def extract_functions(
    source: SourceFile,
    *,
    stub_headers: str | Path | None = None,
) -> list[CodeFunction]:
    """Extract function definitions from one file, best tier first.

    ``stub_headers`` names a directory of headers (or one header file) whose
    typedefs stand in for the kernel's own so the strict parser can type the
    regions; without them most regions land in the fallback tier, which is
    functional but loses parameter types.
    """
    src = source.content
    # The strict parser accepts no comments at all, so tier 1 reads the
    # comment-blanked text (same length, same offsets). Preprocessor lines
    # stay visible to it on purpose: an in-body #ifdef is exactly the kind
    # of region that belongs to the fallback tier.
    comment_free = mask_comments_and_strings(src)
    masked = _mask_preprocessor(comment_free)
    prelude = _mask_preprocessor(
        mask_comments_and_strings(_load_prelude(stub_headers)))
    out: list[CodeFunction] = []
    for cand in _scan_candidates(masked):
        region = src[cand.decl_start:cand.close_brace + 1]
        parse_region = comment_free[cand.decl_start:cand.close_brace + 1]
        funcdef = _try_syntax_tier(parse_region, prelude, cand.name)
        if funcdef is not None:
            name = cand.name
            params = _param_pairs(funcdef)
            tier = TIER_SYNTAX
        else:
            name = _fallback_name(masked, cand)
            params = ()
            tier = TIER_FALLBACK
            log.debug("fallback tier for %s in %s", name, source.path)
        sig_src = src[cand.decl_start:cand.open_brace].strip()
        params = tuple((p[0], _strip_declname(p[1], p[0])) for p in params)
        out.append(CodeFunction(
            name=name,
            signature=" ".join(sig_src.split()),
            params=params,
            span=Span(cand.decl_start, cand.close_brace + 1,
                      _line_of(src, cand.decl_start), _line_of(src, cand.close_brace)),
            doc_comment=_doc_comment_before(src, cand.decl_start),
            file=source.path,
            token_count=count_tokens(region),
            extraction_tier=tier,
        ))
    return out


def _load_prelude(stub_headers: str | Path | None) -> str:
    if stub_headers is None:
        return ""
    p = Path(stub_headers)
    if p.is_file():
        return p.read_text()
    if p.is_dir():
        return "\n".join(h.read_text() for h in sorted(p.glob("*.h")))
    raise IoError(f"stub header path not readable: {p}")


def build_index(
    tree_root: str | Path,
    version: str,
    *,
    globs: Sequence[str] = DEFAULT_GLOBS,
    keywords: Sequence[str] = DEFAULT_KEYWORDS,
    stub_headers: str | Path | None = None,
) -> CodebaseIndex:
    files = select_protocol_sources(tree_root, version, globs=globs, keywords=keywords)
    functions: list[CodeFunction] = []
    for f in files:
        functions.extend(extract_functions(f, stub_headers=stub_headers))
    return CodebaseIndex(version=version, files=files, functions=functions)


def compute_extraction_stats(
    index: CodebaseIndex,
    selected: Mapping[object, Iterable[CodeFunction | str]],
) -> ExtractionStats:
    """Corpus means over per-RFC selections, as extraction rates.

    ``selected`` maps each RFC (any hashable key) to the functions retrieval
    chose for it, as CodeFunction records or fids resolvable in the index.
    """
    if index.total_functions == 0:
        raise EmptyIndex(f"index {index.version} has no functions")
    if not selected:
        raise InvalidInputs("no per-RFC selections given")
    lookup = index.by_fid()
    counts: list[int] = []
    lines: list[int] = []
    for _, chosen in sorted(selected.items(), key=lambda kv: str(kv[0])):
        resolved = [lookup[c] if isinstance(c, str) else c for c in chosen]
        counts.append(len(resolved))
        lines.append(sum(f.line_count for f in resolved))
    sf = sum(counts) / len(counts)
    sl = sum(lines) / len(lines)
    return ExtractionStats.from_raw(index.version, index.total_functions,
                                    index.total_lines, sf, sl)
