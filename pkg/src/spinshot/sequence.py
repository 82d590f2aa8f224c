"""Pulse-sequence DSL: parser, pretty printer, compiler, duration report.

Grammar (see docs/sequence_grammar.ebnf):

    pulse optical <A|B|C|D|offset MHz/GHz> <duration us/ns> <area pi>
    pulse mw <frequency MHz/GHz> <duration us/ns> <phase deg|pi>
    wait <duration us/ns>
    detect <window us/ns>
    repeat <count> { <statements> }

`#` starts a comment; units are mandatory.  Compilation unrolls repeat
blocks into a flat, strictly sequential timeline of timed events.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

__all__ = [
    "ParseError",
    "CompileError",
    "TimelineCapacityError",
    "OpticalPulse",
    "MwPulse",
    "Wait",
    "Detect",
    "Repeat",
    "SequenceProgram",
    "TimedEvent",
    "Timeline",
    "BlockTiming",
    "DurationReport",
    "parse_sequence",
    "format_sequence",
    "compile_sequence",
    "duration_report",
    "MAX_EVENTS",
    "MAX_NESTING",
    "DEFAULT_OVERHEAD_US",
]

MAX_EVENTS = 10_000_000
MAX_NESTING = 16
# switching overhead between one pulse+gate cycle and the next at max rate
DEFAULT_OVERHEAD_US = 0.08

_TRANSITION_LABELS = ("A", "B", "C", "D")


class ParseError(ValueError):
    def __init__(self, filename, line, col, message):
        super().__init__(f"{filename}:{line}:{col}: {message}")
        self.filename = filename
        self.line = line
        self.col = col


class CompileError(ValueError):
    pass


class TimelineCapacityError(CompileError):
    pass


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OpticalPulse:
    duration_us: float
    area_pi: float
    transition: str | None = None     # one of A-D
    offset_mhz: float | None = None   # literal detuning instead of a label


@dataclass(frozen=True)
class MwPulse:
    frequency_mhz: float
    duration_us: float
    phase_deg: float


@dataclass(frozen=True)
class Wait:
    duration_us: float


@dataclass(frozen=True)
class Detect:
    window_us: float


@dataclass(frozen=True)
class Repeat:
    count: int
    block: tuple


@dataclass(frozen=True)
class SequenceProgram:
    statements: tuple = ()


# ---------------------------------------------------------------------------
# tokenizer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Token:
    text: str
    line: int
    col: int


def _tokenize(text: str, filename: str):
    tokens = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        for match in re.finditer(r"\S+", line):
            word, col = match.group(), match.start() + 1
            # braces may be glued to neighbouring tokens
            while word:
                brace = re.match(r"[{}]", word)
                if brace:
                    tokens.append(_Token(word[0], line_no, col))
                    word, col = word[1:], col + 1
                    continue
                head = re.match(r"[^{}]+", word).group()
                tokens.append(_Token(head, line_no, col))
                word, col = word[len(head):], col + len(head)
    return tokens


class _TokenStream:
    def __init__(self, tokens, filename):
        self.tokens = tokens
        self.filename = filename
        self.pos = 0
        self.last = tokens[-1] if tokens else _Token("", 1, 1)

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self, expected: str):
        tok = self.peek()
        if tok is None:
            raise ParseError(self.filename, self.last.line,
                             self.last.col + len(self.last.text),
                             f"unexpected end of input, expected {expected}")
        self.pos += 1
        return tok

    def error(self, tok: _Token, message: str):
        raise ParseError(self.filename, tok.line, tok.col, message)


_NUMBER = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_DURATION_RE = re.compile(rf"^({_NUMBER})(us|ns)$")
_FREQ_RE = re.compile(rf"^({_NUMBER})(MHz|GHz)$")
_PHASE_RE = re.compile(rf"^({_NUMBER})(deg|pi)$")
_AREA_RE = re.compile(rf"^({_NUMBER})pi$")
_INT_RE = re.compile(r"^\d+$")


def _parse_duration(stream, what):
    tok = stream.next(f"{what} with unit us|ns")
    m = _DURATION_RE.match(tok.text)
    if not m:
        stream.error(tok, f"expected {what} with unit us|ns, got {tok.text!r}")
    value = float(m.group(1))
    if value < 0:
        stream.error(tok, f"{what} must be >= 0")
    return value if m.group(2) == "us" else value * 1e-3


def _parse_frequency_mhz(stream, what):
    tok = stream.next(f"{what} with unit MHz|GHz")
    m = _FREQ_RE.match(tok.text)
    if not m:
        stream.error(tok, f"expected {what} with unit MHz|GHz, got {tok.text!r}")
    value = float(m.group(1))
    return value if m.group(2) == "MHz" else value * 1e3


def _parse_phase_deg(stream):
    tok = stream.next("phase with unit deg|pi")
    m = _PHASE_RE.match(tok.text)
    if not m:
        stream.error(tok, f"expected phase with unit deg|pi, got {tok.text!r}")
    value = float(m.group(1))
    return value if m.group(2) == "deg" else value * 180.0


def _parse_area(stream):
    tok = stream.next("pulse area with unit pi")
    m = _AREA_RE.match(tok.text)
    if not m:
        stream.error(tok, f"expected pulse area with unit pi, got {tok.text!r}")
    value = float(m.group(1))
    if value < 0:
        stream.error(tok, "pulse area must be >= 0")
    return value


def _parse_statements(stream, depth):
    if depth > MAX_NESTING:
        tok = stream.peek() or stream.last
        stream.error(tok, f"nesting depth exceeds {MAX_NESTING}")
    statements = []
    while True:
        tok = stream.peek()
        if tok is None or tok.text == "}":
            return tuple(statements)
        stream.pos += 1
        if tok.text == "pulse":
            statements.append(_parse_pulse(stream))
        elif tok.text == "wait":
            statements.append(Wait(_parse_duration(stream, "wait duration")))
        elif tok.text == "detect":
            statements.append(Detect(_parse_duration(stream, "detection window")))
        elif tok.text == "repeat":
            statements.append(_parse_repeat(stream, depth))
        else:
            stream.error(tok, f"unknown keyword {tok.text!r}")


def _parse_pulse(stream):
    kind = stream.next("channel optical|mw")
    if kind.text == "optical":
        target = stream.next("transition label A-D or detuning with unit")
        transition = offset = None
        if target.text in _TRANSITION_LABELS:
            transition = target.text
        else:
            m = _FREQ_RE.match(target.text)
            if not m:
                stream.error(target, "expected transition label A-D or "
                                     f"detuning with unit MHz|GHz, got {target.text!r}")
            offset = float(m.group(1)) * (1.0 if m.group(2) == "MHz" else 1e3)
        duration = _parse_duration(stream, "pulse duration")
        area = _parse_area(stream)
        return OpticalPulse(duration_us=duration, area_pi=area,
                            transition=transition, offset_mhz=offset)
    if kind.text == "mw":
        frequency = _parse_frequency_mhz(stream, "drive frequency")
        duration = _parse_duration(stream, "pulse duration")
        phase = _parse_phase_deg(stream)
        return MwPulse(frequency_mhz=frequency, duration_us=duration,
                       phase_deg=phase)
    stream.error(kind, f"expected channel optical|mw, got {kind.text!r}")


def _parse_repeat(stream, depth):
    count_tok = stream.next("repeat count")
    if not _INT_RE.match(count_tok.text):
        stream.error(count_tok, f"expected integer repeat count, got {count_tok.text!r}")
    count = int(count_tok.text)
    if count < 1:
        stream.error(count_tok, "repeat count must be >= 1")
    brace = stream.next("'{'")
    if brace.text != "{":
        stream.error(brace, f"expected '{{' after repeat count, got {brace.text!r}")
    block = _parse_statements(stream, depth + 1)
    closing = stream.next("'}'")
    if closing.text != "}":
        stream.error(closing, f"expected '}}', got {closing.text!r}")
    return Repeat(count=count, block=block)


def parse_sequence(text: str, filename: str = "<sequence>") -> SequenceProgram:
    """Parse DSL text; raises ParseError pointing at file:line:col."""
    stream = _TokenStream(_tokenize(text, filename), filename)
    # depth counts enclosing repeat blocks: top level is 0, so up to
    # MAX_NESTING nested repeats are accepted
    statements = _parse_statements(stream, depth=0)
    tok = stream.peek()
    if tok is not None:   # can only be a stray '}'
        stream.error(tok, "unbalanced '}'")
    return SequenceProgram(statements=statements)


# ---------------------------------------------------------------------------
# pretty printer (canonical form; parse(format(parse(x))) == parse(x))
# ---------------------------------------------------------------------------

def _format_statement(stmt, indent):
    pad = "  " * indent
    if isinstance(stmt, OpticalPulse):
        target = stmt.transition if stmt.transition else f"{stmt.offset_mhz!s}MHz"
        return [f"{pad}pulse optical {target} {stmt.duration_us!s}us {stmt.area_pi!s}pi"]
    if isinstance(stmt, MwPulse):
        return [f"{pad}pulse mw {stmt.frequency_mhz!s}MHz "
                f"{stmt.duration_us!s}us {stmt.phase_deg!s}deg"]
    if isinstance(stmt, Wait):
        return [f"{pad}wait {stmt.duration_us!s}us"]
    if isinstance(stmt, Detect):
        return [f"{pad}detect {stmt.window_us!s}us"]
    if isinstance(stmt, Repeat):
        lines = [f"{pad}repeat {stmt.count} {{"]
        for inner in stmt.block:
            lines.extend(_format_statement(inner, indent + 1))
        lines.append(f"{pad}}}")
        return lines
    raise TypeError(f"unknown statement {stmt!r}")


def format_sequence(program: SequenceProgram) -> str:
    lines = []
    for stmt in program.statements:
        lines.extend(_format_statement(stmt, 0))
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# compiler
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimedEvent:
    start_us: float
    duration_us: float
    kind: str            # optical | mw | wait | detect
    params: dict = field(default_factory=dict, compare=False)

    @property
    def end_us(self) -> float:
        return self.start_us + self.duration_us


@dataclass(frozen=True)
class Timeline:
    events: tuple
    total_duration_us: float

    def gates(self):
        return [e for e in self.events if e.kind == "detect"]


def _statement_event_count(stmt) -> int:
    if isinstance(stmt, Repeat):
        return stmt.count * sum(_statement_event_count(s) for s in stmt.block)
    return 1


def _statement_duration(stmt) -> float:
    if isinstance(stmt, Repeat):
        return stmt.count * sum(_statement_duration(s) for s in stmt.block)
    if isinstance(stmt, OpticalPulse) or isinstance(stmt, MwPulse):
        return stmt.duration_us
    if isinstance(stmt, Wait):
        return stmt.duration_us
    if isinstance(stmt, Detect):
        return stmt.window_us
    raise TypeError(f"unknown statement {stmt!r}")


def compile_sequence(program: SequenceProgram, transitions=None) -> Timeline:
    """Unroll to a flat event timeline with absolute start times.

    ``transitions`` (a physics TransitionSet) resolves optical labels
    A-D to absolute frequencies; without it labels stay symbolic.
    """
    total_events = sum(_statement_event_count(s) for s in program.statements)
    if total_events > MAX_EVENTS:
        raise TimelineCapacityError(
            f"unrolled sequence has {total_events} events, "
            f"exceeding the capacity of {MAX_EVENTS}")
    by_label = transitions.by_label() if transitions is not None else {}

    events = []
    cursor = 0.0

    def emit(stmt):
        nonlocal cursor
        if isinstance(stmt, Repeat):
            for _ in range(stmt.count):
                for inner in stmt.block:
                    emit(inner)
            return
        if isinstance(stmt, OpticalPulse):
            params = {
                "transition": stmt.transition,
                "offset_mhz": stmt.offset_mhz,
                "area_pi": stmt.area_pi,
                "frequency_ghz": by_label.get(stmt.transition),
            }
            events.append(TimedEvent(cursor, stmt.duration_us, "optical", params))
            cursor += stmt.duration_us
        elif isinstance(stmt, MwPulse):
            params = {"frequency_mhz": stmt.frequency_mhz,
                      "phase_deg": stmt.phase_deg}
            events.append(TimedEvent(cursor, stmt.duration_us, "mw", params))
            cursor += stmt.duration_us
        elif isinstance(stmt, Wait):
            events.append(TimedEvent(cursor, stmt.duration_us, "wait", {}))
            cursor += stmt.duration_us
        elif isinstance(stmt, Detect):
            events.append(TimedEvent(cursor, stmt.window_us, "detect", {}))
            cursor += stmt.window_us

    for stmt in program.statements:
        emit(stmt)
    return Timeline(events=tuple(events), total_duration_us=cursor)


# ---------------------------------------------------------------------------
# duration report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockTiming:
    label: str
    repetitions: int
    period_us: float
    total_us: float


@dataclass(frozen=True)
class DurationReport:
    total_ms: float
    blocks: tuple
    max_rate: bool
    overhead_us: float


def _active_durations(statements):
    """(pulse time, gate time) inside a block, waits excluded."""
    pulse = gate = 0.0
    for stmt in statements:
        if isinstance(stmt, (OpticalPulse, MwPulse)):
            pulse += stmt.duration_us
        elif isinstance(stmt, Detect):
            gate += stmt.window_us
        elif isinstance(stmt, Repeat):
            p, g = _active_durations(stmt.block)
            pulse += stmt.count * p
            gate += stmt.count * g
    return pulse, gate


def duration_report(program: SequenceProgram, max_rate: bool = False,
                    overhead_us: float = DEFAULT_OVERHEAD_US) -> DurationReport:
    """Wall-clock totals per top-level block.

    ``max_rate`` recomputes every repeat block that pairs pulses with
    detection gates at its fastest repetition period, pulse + gate +
    fixed switching overhead, dropping the waits.
    """
    blocks = []
    total_us = 0.0
    for i, stmt in enumerate(program.statements):
        if isinstance(stmt, Repeat):
            label = f"block {i}: repeat x{stmt.count}"
            period = sum(_statement_duration(s) for s in stmt.block)
            if max_rate:
                pulse, gate = _active_durations(stmt.block)
                if pulse > 0 and gate > 0:
                    period = pulse + gate + overhead_us
            block_total = stmt.count * period
            blocks.append(BlockTiming(label, stmt.count, period, block_total))
        else:
            label = f"block {i}: {type(stmt).__name__.lower()}"
            block_total = _statement_duration(stmt)
            blocks.append(BlockTiming(label, 1, block_total, block_total))
        total_us += block_total
    return DurationReport(total_ms=total_us * 1e-3, blocks=tuple(blocks),
                          max_rate=max_rate, overhead_us=overhead_us)
