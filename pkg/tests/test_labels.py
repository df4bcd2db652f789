import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hlsed.errors import InvalidParam, LabelSyntaxError, NonPositiveDuration, OverlapWithinClass, UnknownClass
from hlsed.labels import (
    CLASS_NAMES,
    EventList,
    ManifestEntry,
    SoundClass,
    SoundEvent,
    class_mask_for,
    encode_frames,
    format_strong_labels,
    load_manifest,
    parse_strong_labels,
    read_labels,
    save_manifest,
    to_eval_classes,
    write_labels,
)
from oracles import runs

D = 0.016


def test_class_indices_fixed():
    assert [int(c) for c in SoundClass] == list(range(8))
    assert CLASS_NAMES == ["S1", "S2", "Inspiration", "Expiration", "Wheeze", "Crackle", "Rhonchi", "Stridor"]


def test_parse_two_lines_sorted():
    ev, diag = parse_strong_labels("S1 1.000 1.100\nI 0.5 2.0", 10.0)
    assert [(e.label, e.onset, e.offset) for e in ev] == [("Inspiration", 0.5, 2.0), ("S1", 1.0, 1.1)]
    assert diag == []


@pytest.mark.parametrize(
    "text,exc",
    [("S1 2.0 1.0", NonPositiveDuration), ("Q 0 1", UnknownClass), ("S1 0", LabelSyntaxError),
     ("S1 a b", LabelSyntaxError), ("S1 0 1\nS1 0.5 2", OverlapWithinClass), ("S1 0 1 maybe", LabelSyntaxError)],
)
def test_parse_errors(text, exc):
    with pytest.raises(exc):
        parse_strong_labels(text, 10.0)


def test_parse_error_carries_line():
    with pytest.raises(UnknownClass) as info:
        parse_strong_labels("# header\nS1 0 1\nQ 2 3\n", 10.0)
    assert info.value.line == 3


@pytest.mark.parametrize(
    "token,name",
    [("i", "Inspiration"), ("E", "Expiration"), ("D", "Crackle"), ("das", "Crackle"), ("s2", "S2"),
     ("WHEEZE", "Wheeze"), ("st", "Stridor"), ("r", "Rhonchi")],
)
def test_aliases(token, name):
    ev, _ = parse_strong_labels(f"{token} 0 1", 5.0)
    assert ev.events[0].label == name


def test_clamp_and_drop_diagnostics():
    ev, diag = parse_strong_labels("S1 -0.5 0.5\nS2 9.5 11\nI 12 13", 10.0)
    assert [(e.onset, e.offset) for e in ev] == [(0.0, 0.5), (9.5, 10.0)]
    assert len(diag) == 3 and all(d.startswith("line ") for d in diag)


def test_heart_overlap_is_a_diagnostic():
    ev, diag = parse_strong_labels("S1 0 0.2\nS2 0.1 0.3", 1.0)
    assert len(ev) == 2 and any("S1 and S2" in d for d in diag)


def test_format_parse_round_trip(tmp_path):
    ev = EventList([SoundEvent("S1", 0.1, 0.2), SoundEvent("Wheeze", 0.5, 1.25, "pseudo")], 2.0)
    write_labels(tmp_path / "a.txt", ev)
    back = read_labels(tmp_path / "a.txt", 2.0)
    assert [(e.label, e.onset, e.offset) for e in back] == [(e.label, e.onset, e.offset) for e in ev]
    assert [e.origin for e in back] == ["gt", "pseudo"]
    assert format_strong_labels(EventList()) == ""


# -- frame encoding -----------------------------------------------------------

def test_encode_midpoint_example():
    a = encode_frames(EventList([SoundEvent("Inspiration", 0.0, 0.032)], 1.0), 10, D)
    expect = np.zeros((10, 8), np.uint8)
    expect[0:2, 2] = 1
    assert np.array_equal(a, expect)


def test_encode_empty_and_polyphony():
    assert not encode_frames(EventList(), 20, D).any()
    ev = EventList([SoundEvent("S1", 0.0, 0.1), SoundEvent("Inspiration", 0.05, 0.3)], 1.0)
    a = encode_frames(ev, 30, D)
    shared = (a[:, 0] == 1) & (a[:, 2] == 1)
    assert shared.sum() > 0


def test_encode_rejects_aggregates():
    with pytest.raises(InvalidParam):
        encode_frames(EventList([SoundEvent("CAS", 0, 1)], 1.0), 10, D)


def test_encode_clips_beyond_end():
    a = encode_frames(EventList([SoundEvent("S2", 0.1, 5.0)], 5.0), 10, D)
    assert a.shape == (10, 8) and a[-1, 1] == 1


@st.composite
def frame_events(draw, n_frames=60):
    evs = []
    for c in draw(st.lists(st.sampled_from(CLASS_NAMES), max_size=4, unique=True)):
        cuts = sorted(draw(st.lists(st.integers(0, n_frames), min_size=2, max_size=8, unique=True)))
        for a, b in zip(cuts[::2], cuts[1::2]):
            evs.append(SoundEvent(c, a * D, b * D))
    return EventList(evs, n_frames * D)


@given(frame_events(), st.sampled_from(CLASS_NAMES), st.integers(0, 59), st.integers(1, 20))
def test_encode_monotone(ev, extra_class, start, length):
    n = 60
    before = encode_frames(ev, n, D)
    more = EventList(ev.events + [SoundEvent(extra_class, start * D, min(start + length, n) * D)], ev.duration)
    after = encode_frames(more, n, D)
    assert np.all(after >= before)


@given(frame_events())
def test_encode_column_sums_match_durations(ev):
    a = encode_frames(ev, 60, D)
    for c, name in enumerate(CLASS_NAMES):
        events = ev.of_class(name)
        frames = sum(round(e.duration / D) for e in events)
        assert abs(int(a[:, c].sum()) - frames) <= len(events)
        # each event is one maximal run unless it touches a neighbour
        assert len(runs(a[:, c])) <= len(events)


# -- evaluation classes --------------------------------------------------------

def test_hf_lung4_merges_cas():
    ev = EventList([SoundEvent("Wheeze", 1, 2), SoundEvent("Rhonchi", 1.5, 3)], 5)
    out = to_eval_classes(ev, "hf_lung4")
    assert [(e.label, e.onset, e.offset) for e in out] == [("CAS", 1, 3)]


def test_hf_lung4_rename_and_raw8_identity():
    ev = EventList([SoundEvent("Crackle", 0, 0.02), SoundEvent("S1", 0.5, 0.6)], 1)
    out = to_eval_classes(ev, "hf_lung4")
    assert [(e.label, e.onset, e.offset) for e in out] == [("DAS", 0, 0.02), ("S1", 0.5, 0.6)]
    assert to_eval_classes(ev, "raw8").events == ev.events
    with pytest.raises(InvalidParam):
        to_eval_classes(ev, "other")


# -- manifests ----------------------------------------------------------------

def test_manifest_round_trip_resolves_relative_paths(tmp_path):
    entries = [ManifestEntry("a.wav", "a.txt", "train", "gt", "heart"),
               ManifestEntry("b.wav", None, "test", "pseudo", "lung", classes=["Inspiration"])]
    save_manifest(tmp_path / "m" / "set.json", entries)
    back = load_manifest(tmp_path / "m" / "set.json")
    assert back[0].audio == str(tmp_path / "m" / "a.wav")
    assert back[0].supervised_classes() == ["S1", "S2"]
    assert back[1].labels is None and back[1].supervised_classes() == ["Inspiration"]


@pytest.mark.parametrize("item", [{"audio": "a", "split": "dev"}, {"audio": "a", "origin": "x"},
                                  {"audio": "a", "task": "gut"}, {"wav": "a"}])
def test_manifest_validation(tmp_path, item):
    import json

    (tmp_path / "m.json").write_text(json.dumps([item]))
    with pytest.raises(InvalidParam):
        load_manifest(tmp_path / "m.json")


def test_class_mask():
    assert class_mask_for(["S2", "Crackle"]).tolist() == [0, 1, 0, 0, 0, 1, 0, 0]
