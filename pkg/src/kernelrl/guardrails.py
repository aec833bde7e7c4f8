"""Rule-based static checks that reject reward-hacking candidates before evaluation.

The rules are data: forbidden substrings (dotted API names, with allowlists),
forbidden identifier tokens, a required entry-class marker, and detection of
classes whose whole body is one `pass` token (reference-inheritance hacks).
Matching is line-oriented and never parses the candidate language; lines that
are entirely comments (`#` first) are excluded, embedded kernel strings are
scanned like ordinary text.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .errors import ContractViolation

KIND_FORBIDDEN_SUBSTRING = "forbidden_substring"
KIND_FORBIDDEN_TOKEN = "forbidden_token"
KIND_REQUIRED_MARKER = "required_marker"
# Extension kind: a class declaration whose body is exactly one `pass` token.
# Not expressible as a plain substring/token rule without banning `pass` globally.
KIND_PASS_ONLY_CLASS = "pass_only_class"

_KNOWN_KINDS = (
    KIND_FORBIDDEN_SUBSTRING,
    KIND_FORBIDDEN_TOKEN,
    KIND_REQUIRED_MARKER,
    KIND_PASS_ONLY_CLASS,
)

_TOKEN_RE = re.compile(rb"[A-Za-z0-9_]+")
_CLASS_HEADER_RE = re.compile(rb"^([ \t]*)class\b[^:\n]*:(.*)$")


@dataclass(frozen=True)
class GuardRule:
    rule_id: str
    kind: str
    pattern: str
    allowlist: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.pattern:
            raise ContractViolation(f"rule {self.rule_id!r} has an empty pattern")
        if self.kind not in _KNOWN_KINDS:
            raise ContractViolation(f"rule {self.rule_id!r} has unknown kind {self.kind!r}")


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[GuardRule, ...]

    def __post_init__(self) -> None:
        ids = [r.rule_id for r in self.rules]
        if len(ids) != len(set(ids)):
            raise ContractViolation("rule_id values must be unique within a RuleSet")


class Violation(NamedTuple):
    rule_id: str
    span: tuple[int, int]  # byte offsets into the utf-8 encoding of the source


@dataclass(frozen=True)
class GuardVerdict:
    accepted: bool
    violations: tuple[Violation, ...]

    def rule_ids(self) -> tuple[str, ...]:
        return tuple(v.rule_id for v in self.violations)


def default_rules(entry_class: str = "ModelNew", strict: bool = False) -> RuleSet:
    """The stock rule set used for real kernel candidates.

    Forbids module-level torch.nn usage (Parameter, init, and Module stay
    allowed), any torch.nn.functional call, try/except fallbacks, and classes
    that merely inherit the reference via a bare `pass` body. Candidates must
    define the entry class. `strict=True` bans the `pass` token outright.
    """
    pass_rule = GuardRule(
        rule_id="pass-only-class",
        kind=KIND_FORBIDDEN_TOKEN if strict else KIND_PASS_ONLY_CLASS,
        pattern="pass",
    )
    return RuleSet(rules=(
        GuardRule(
            rule_id="no-torch-nn",
            kind=KIND_FORBIDDEN_SUBSTRING,
            pattern="torch.nn.",
            allowlist=("torch.nn.Parameter", "torch.nn.init", "torch.nn.Module"),
        ),
        GuardRule(
            rule_id="no-torch-nn-functional",
            kind=KIND_FORBIDDEN_SUBSTRING,
            pattern="torch.nn.functional",
        ),
        GuardRule(rule_id="no-try", kind=KIND_FORBIDDEN_TOKEN, pattern="try"),
        GuardRule(rule_id="no-except", kind=KIND_FORBIDDEN_TOKEN, pattern="except"),
        pass_rule,
        GuardRule(rule_id="define-entry-class", kind=KIND_REQUIRED_MARKER, pattern=entry_class),
    ))


def _line_spans(data: bytes) -> list[tuple[int, int]]:
    """(start, end) byte span of every line, end excluding the newline."""
    spans = []
    start = 0
    while start <= len(data):
        nl = data.find(b"\n", start)
        if nl < 0:
            spans.append((start, len(data)))
            break
        spans.append((start, nl))
        start = nl + 1
    return spans


def _scannable_spans(data: bytes) -> list[tuple[int, int]]:
    """Line spans that participate in matching: full-line comments are skipped."""
    out = []
    for start, end in _line_spans(data):
        stripped = data[start:end].lstrip(b" \t")
        if stripped.startswith(b"#"):
            continue
        out.append((start, end))
    return out


def _find_all(data: bytes, needle: bytes, spans: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    hits = []
    for start, end in spans:
        pos = data.find(needle, start, end)
        while pos >= 0:
            hits.append((pos, pos + len(needle)))
            pos = data.find(needle, pos + 1, end)
    return hits


def _allow_spans(data: bytes, allowlist: tuple[str, ...],
                 spans: list[tuple[int, int]]) -> list[tuple[int, int]]:
    covered: list[tuple[int, int]] = []
    for entry in allowlist:
        covered.extend(_find_all(data, entry.encode("utf-8"), spans))
    return covered


def _is_allowlisted(span: tuple[int, int], allow: list[tuple[int, int]]) -> bool:
    # Longest-match-first: a hit fully inside an allowlisted occurrence never fires.
    return any(span[0] >= a and span[1] <= b for a, b in allow)


def _check_substring(data: bytes, rule: GuardRule,
                     spans: list[tuple[int, int]]) -> list[Violation]:
    allow = _allow_spans(data, rule.allowlist, spans)
    hits = _find_all(data, rule.pattern.encode("utf-8"), spans)
    return [Violation(rule.rule_id, h) for h in hits if not _is_allowlisted(h, allow)]


def _check_token(data: bytes, rule: GuardRule,
                 spans: list[tuple[int, int]]) -> list[Violation]:
    allow = _allow_spans(data, rule.allowlist, spans)
    pattern = rule.pattern.encode("utf-8")
    out = []
    for start, end in spans:
        for m in _TOKEN_RE.finditer(data, start, end):
            if m.group(0) == pattern and not _is_allowlisted((m.start(), m.end()), allow):
                out.append(Violation(rule.rule_id, (m.start(), m.end())))
    return out


def _check_marker(data: bytes, rule: GuardRule,
                  spans: list[tuple[int, int]]) -> list[Violation]:
    # match() anchors at the line start passed via pos, so no ^ is needed.
    header = re.compile(rb"[ \t]*class[ \t]+" + re.escape(rule.pattern.encode("utf-8"))
                        + rb"(?![A-Za-z0-9_])")
    for start, end in spans:
        if header.match(data, start, end):
            return []
    return [Violation(rule.rule_id, (0, 0))]


def _indent_width(line: bytes) -> int:
    return len(line) - len(line.lstrip(b" \t"))


def _strip_trailing_comment(line: bytes) -> bytes:
    # Good enough for body-shape detection; `#` inside strings is out of scope here.
    hash_pos = line.find(b"#")
    if hash_pos >= 0:
        line = line[:hash_pos]
    return line.strip()


def _check_pass_only_class(data: bytes, rule: GuardRule) -> list[Violation]:
    """Flag every class whose (non-comment) body is the single token `pass`."""
    out = []
    lines = _line_spans(data)
    for i, (start, end) in enumerate(lines):
        line = data[start:end]
        m = _CLASS_HEADER_RE.match(line)
        if not m:
            continue
        header_indent = len(m.group(1))
        inline = _strip_trailing_comment(m.group(2))
        if inline:
            if inline == b"pass":
                rel = line.find(b"pass", m.start(2))
                out.append(Violation(rule.rule_id, (start + rel, start + rel + 4)))
            continue
        body: list[tuple[int, bytes]] = []
        for j in range(i + 1, len(lines)):
            bstart, bend = lines[j]
            bline = data[bstart:bend]
            code = _strip_trailing_comment(bline)
            if not code:
                continue
            if _indent_width(bline) <= header_indent:
                break
            body.append((bstart + _indent_width(bline), code))
            if len(body) > 1:
                break
        if len(body) == 1 and body[0][1] == b"pass":
            pos = body[0][0]
            out.append(Violation(rule.rule_id, (pos, pos + 4)))
    return out


def check_candidate(source: str, rules: RuleSet) -> GuardVerdict:
    """Run every rule over the candidate source. Deterministic for fixed inputs."""
    data = source.encode("utf-8")
    spans = _scannable_spans(data)
    violations: list[Violation] = []
    for rule in rules.rules:
        if rule.kind == KIND_FORBIDDEN_SUBSTRING:
            violations.extend(_check_substring(data, rule, spans))
        elif rule.kind == KIND_FORBIDDEN_TOKEN:
            violations.extend(_check_token(data, rule, spans))
        elif rule.kind == KIND_REQUIRED_MARKER:
            violations.extend(_check_marker(data, rule, spans))
        elif rule.kind == KIND_PASS_ONLY_CLASS:
            violations.extend(_check_pass_only_class(data, rule))
    violations.sort(key=lambda v: (v.span, v.rule_id))
    return GuardVerdict(accepted=not violations, violations=tuple(violations))


def rules_to_json(rules: RuleSet) -> str:
    doc = {"rules": [
        {"rule_id": r.rule_id, "kind": r.kind, "pattern": r.pattern,
         "allowlist": list(r.allowlist)}
        for r in rules.rules
    ]}
    return json.dumps(doc, indent=2)


def rules_from_json(text: str) -> RuleSet:
    doc = json.loads(text)
    if not isinstance(doc, dict) or "rules" not in doc:
        raise ContractViolation("rule document must be an object with a 'rules' array")
    rules = []
    for entry in doc["rules"]:
        unknown = set(entry) - {"rule_id", "kind", "pattern", "allowlist"}
        if unknown:
            raise ContractViolation(f"unknown rule fields: {sorted(unknown)}")
        rules.append(GuardRule(
            rule_id=entry["rule_id"],
            kind=entry["kind"],
            pattern=entry["pattern"],
            allowlist=tuple(entry.get("allowlist", ())),
        ))
    return RuleSet(rules=tuple(rules))
