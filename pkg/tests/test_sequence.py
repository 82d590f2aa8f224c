import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinshot.physics import EmitterConfig, ZeemanConfig, zeeman_transitions
from spinshot.sequence import (Detect, MwPulse, OpticalPulse, ParseError,
                               Repeat, SequenceProgram, TimelineCapacityError,
                               Wait, compile_sequence, duration_report,
                               format_sequence, parse_sequence)

READOUT_TEXT = ("repeat 500 { pulse optical A 0.02us 0.5pi\n"
                " wait 6.88us\n detect 3us }")


@pytest.fixture(scope="module")
def transitions():
    em = EmitterConfig(194954.05, 0.857, 1.2, 142.0, 13.5)
    return zeeman_transitions(em, ZeemanConfig(0.3))


class TestParse:
    def test_readout_block(self):
        prog = parse_sequence(READOUT_TEXT)
        assert len(prog.statements) == 1
        block = prog.statements[0]
        assert isinstance(block, Repeat)
        assert block.count == 500
        assert len(block.block) == 3
        pulse, wait, detect = block.block
        assert pulse == OpticalPulse(duration_us=0.02, area_pi=0.5,
                                     transition="A")
        assert wait == Wait(6.88)
        assert detect == Detect(3.0)

    def test_empty_input(self):
        assert parse_sequence("").statements == ()
        assert parse_sequence("  \n# only a comment\n").statements == ()

    def test_missing_unit_cites_location(self):
        with pytest.raises(ParseError) as exc:
            parse_sequence("pulse optical A 0.02 0.5pi")
        msg = str(exc.value)
        assert msg.startswith("<sequence>:1:")
        assert "unit" in msg

    def test_unknown_keyword(self):
        with pytest.raises(ParseError) as exc:
            parse_sequence("blorp 3us")
        assert ":1:" in str(exc.value)

    def test_unbalanced_braces(self):
        with pytest.raises(ParseError, match="expected '}'"):
            parse_sequence("repeat 2 { wait 1us")
        with pytest.raises(ParseError, match="unbalanced"):
            parse_sequence("wait 1us }")

    def test_filename_in_error(self):
        with pytest.raises(ParseError) as exc:
            parse_sequence("wait 1parsec", filename="exp.seq")
        assert str(exc.value).startswith("exp.seq:1:")

    def test_comments_and_blank_lines(self):
        prog = parse_sequence("# comment\n\nwait 5us  # trailing\n")
        assert prog.statements == (Wait(5.0),)

    def test_mw_pulse_units(self):
        prog = parse_sequence("pulse mw 3598MHz 2.3us 90deg")
        (mw,) = prog.statements
        assert mw == MwPulse(frequency_mhz=3598.0, duration_us=2.3,
                             phase_deg=90.0)
        (mw_pi,) = parse_sequence("pulse mw 3.598GHz 2300ns 0.5pi").statements
        assert mw_pi.frequency_mhz == pytest.approx(3598.0)
        assert mw_pi.duration_us == pytest.approx(2.3)
        assert mw_pi.phase_deg == pytest.approx(90.0)

    def test_optical_offset_form(self):
        (p,) = parse_sequence("pulse optical -120MHz 0.1us 1pi").statements
        assert p.transition is None
        assert p.offset_mhz == pytest.approx(-120.0)

    def test_nesting_depth_limit(self):
        text = "repeat 2 { " * 17 + "wait 1us" + " }" * 17
        with pytest.raises(ParseError, match="nesting"):
            parse_sequence(text)
        ok = "repeat 2 { " * 16 + "wait 1us" + " }" * 16
        assert parse_sequence(ok)  # exactly at the limit parses

    def test_zero_repeat_rejected(self):
        with pytest.raises(ParseError):
            parse_sequence("repeat 0 { wait 1us }")


# strategies for random programs (idempotence property)
durations = st.floats(min_value=0.001, max_value=500.0,
                      allow_nan=False, allow_infinity=False)
leaf = st.one_of(
    st.builds(Wait, durations),
    st.builds(Detect, durations),
    st.builds(MwPulse, st.floats(min_value=-5000, max_value=5000),
              durations, st.floats(min_value=-360, max_value=360)),
    st.builds(OpticalPulse, durations,
              st.floats(min_value=0.1, max_value=4.0),
              st.sampled_from(["A", "B", "C", "D"])),
    st.builds(lambda d, a, off: OpticalPulse(d, a, offset_mhz=off),
              durations, st.floats(min_value=0.1, max_value=4.0),
              st.floats(min_value=-2000, max_value=2000)),
)
statements = st.recursive(
    leaf,
    lambda inner: st.builds(
        Repeat, st.integers(min_value=1, max_value=5),
        st.lists(inner, min_size=1, max_size=4).map(tuple)),
    max_leaves=12)


class TestPrintRoundTrip:
    @given(stmts=st.lists(statements, max_size=6).map(tuple))
    @settings(max_examples=80)
    def test_parse_print_parse_idempotent(self, stmts):
        prog = SequenceProgram(stmts)
        text = format_sequence(prog)
        reparsed = parse_sequence(text)
        assert reparsed == prog
        assert format_sequence(reparsed) == text

    def test_example_round_trip(self):
        prog = parse_sequence(READOUT_TEXT)
        assert parse_sequence(format_sequence(prog)) == prog


class TestCompile:
    def test_readout_unrolls_to_1500_events(self, transitions):
        tl = compile_sequence(parse_sequence(READOUT_TEXT), transitions)
        assert len(tl.events) == 1500
        assert tl.total_duration_us == pytest.approx(500 * 9.9)

    def test_period_padded_to_10us(self, transitions):
        text = ("repeat 500 { pulse optical A 0.02us 0.5pi\n"
                " wait 6.98us\n detect 3us }")
        tl = compile_sequence(parse_sequence(text), transitions)
        assert tl.total_duration_us == pytest.approx(5000.0)

    def test_pump_probe_event_count(self):
        text = ("repeat 500 { pulse optical C 0.1us 1pi\n wait 1us }\n"
                "pulse optical A 0.2us 1pi\ndetect 3us")
        tl = compile_sequence(parse_sequence(text))
        assert len(tl.events) == 1002
        kinds = [e.kind for e in tl.events]
        assert kinds.count("optical") == 501
        assert kinds.count("detect") == 1

    def test_single_wait(self):
        tl = compile_sequence(parse_sequence("repeat 1 { wait 5us }"))
        assert len(tl.events) == 1
        assert tl.total_duration_us == pytest.approx(5.0)

    def test_label_resolution(self, transitions):
        tl = compile_sequence(parse_sequence("pulse optical A 0.02us 1pi"),
                              transitions)
        (ev,) = tl.events
        assert ev.params["frequency_ghz"] == pytest.approx(
            transitions.freq_a_ghz)

    def test_label_without_transitions_stays_symbolic(self):
        tl = compile_sequence(parse_sequence("pulse optical A 0.02us 1pi"))
        (ev,) = tl.events
        assert ev.params["transition"] == "A"
        assert ev.params["frequency_ghz"] is None

    @given(stmts=st.lists(leaf, min_size=1, max_size=8).map(tuple),
           reps=st.integers(min_value=1, max_value=6))
    @settings(max_examples=60)
    def test_times_sorted_and_durations_sum(self, stmts, reps, transitions):
        prog = SequenceProgram((Repeat(reps, stmts),))
        tl = compile_sequence(prog, transitions)
        starts = [e.start_us for e in tl.events]
        assert starts == sorted(starts)
        total = sum(e.duration_us for e in tl.events)
        assert tl.total_duration_us == pytest.approx(total, rel=1e-12)
        assert len(tl.events) == reps * len(stmts)

    def test_capacity_error(self):
        text = "repeat 4000 { repeat 4000 { wait 1us } }"
        with pytest.raises(TimelineCapacityError):
            compile_sequence(parse_sequence(text))

    def test_gates_accessor(self, transitions):
        tl = compile_sequence(parse_sequence(READOUT_TEXT), transitions)
        gates = tl.gates()
        assert len(gates) == 500
        for ev in gates:
            assert ev.kind == "detect"


class TestDurationReport:
    def test_nominal_readout_duration(self):
        text = ("repeat 71 { pulse optical A 0.02us 1pi\n"
                " detect 3us\n wait 6.98us }")
        rep = duration_report(parse_sequence(text))
        assert rep.total_ms == pytest.approx(0.71, abs=1e-12)

    def test_max_rate_duration(self):
        text = ("repeat 71 { pulse optical A 0.02us 1pi\n"
                " detect 3us\n wait 6.98us }")
        rep = duration_report(parse_sequence(text), max_rate=True)
        # period collapses to pulse + gate + 0.08 us overhead = 3.1 us
        assert rep.total_ms == pytest.approx(71 * 3.1e-3, rel=1e-12)
        assert round(rep.total_ms, 2) == 0.22

    def test_empty_program(self):
        rep = duration_report(parse_sequence(""))
        assert rep.total_ms == 0.0

    def test_max_rate_leaves_gateless_blocks_alone(self):
        text = "repeat 10 { pulse optical A 0.02us 1pi\n wait 1us }"
        assert duration_report(parse_sequence(text), max_rate=True).total_ms \
            == duration_report(parse_sequence(text)).total_ms

    def test_block_breakdown(self):
        text = ("repeat 3 { wait 2us }\nwait 4us\n"
                "repeat 2 { pulse optical A 1us 1pi\n detect 1us }")
        rep = duration_report(parse_sequence(text))
        assert rep.total_ms == pytest.approx((6 + 4 + 4) * 1e-3)
        assert any(b.repetitions == 3 for b in rep.blocks)
