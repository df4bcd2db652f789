import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hlsed.decode import estimate_vitals, plausibility_filter
from hlsed.errors import IncompatibleModel, InfeasibleSpec, InvalidParam, MissingAudio, MissingStageInput
from hlsed.labels import (
    HEART_CLASSES,
    LUNG_CLASSES,
    ManifestEntry,
    class_mask_for,
    encode_frames,
    load_manifest,
    read_labels,
    write_labels,
)
from hlsed.metrics import macro_f1, score
from hlsed.model import CrnnConfig, backward, forward, init_weights
from hlsed.pipeline import (
    StrategyConfig,
    SynthSpec,
    gate_task,
    generate_pseudo_labels,
    merge_datasets,
    run_strategy,
    synth_clip,
)
from hlsed.pipeline import strategy
from hlsed.signal import load_audio, log_mel, save_audio
from hlsed.train import afl_loss

TINY = CrnnConfig(channels=(2, 2, 2), gru_hidden=3)


# -- generator -------------------------------------------------------------------------

def test_synth_counts():
    _, ev = synth_clip(SynthSpec(heart_rate=120, duration=10))
    assert ev.count("S1") == 20 and ev.count("S2") == 20
    _, ev = synth_clip(SynthSpec(respiratory_rate=12, duration=30))
    assert ev.count("Inspiration") == 6 and ev.count("Expiration") == 6


@settings(max_examples=25)
@given(st.floats(40, 200), st.floats(6, 35), st.integers(0, 1000))
def test_synth_labels_are_valid_and_self_consistent(hr, rr, seed):
    spec = SynthSpec(heart_rate=hr, respiratory_rate=rr, duration=10, seed=seed, crackle_density=2.0,
                     wheeze_hz=400.0)
    clip, ev = synth_clip(spec)
    assert len(clip.samples) == 40000 and np.max(np.abs(clip.samples)) <= 0.99 + 1e-12
    assert ev.count("S1") == int(10 * hr / 60 + 1e-9)
    for e in ev:
        assert 0 <= e.onset < e.offset <= 10
    if ev.count("Crackle"):
        assert all(e.duration < 0.020 for e in ev.of_class("Crackle"))
    for basis in ("event", "segment", "ji"):
        assert macro_f1(score(ev, ev, basis)) == 1.0


def test_synth_deterministic():
    a, ea = synth_clip(SynthSpec(seed=3))
    b, eb = synth_clip(SynthSpec(seed=3))
    assert np.array_equal(a.samples, b.samples) and ea.events == eb.events


@pytest.mark.parametrize("kw", [dict(heart_rate=240), dict(duration=0), dict(respiratory_rate=80),
                                dict(insp_fraction=0.6, exp_fraction=0.5), dict(insp_band=(300, 2500))])
def test_synth_infeasible(kw):
    with pytest.raises(InfeasibleSpec):
        synth_clip(SynthSpec(**kw))


# -- pseudo labels with an oracle model ----------------------------------------------------

def _write_clip(root, name, **kw):
    clip, ev = synth_clip(SynthSpec(seed=len(name), **kw))
    save_audio(root / f"{name}.wav", clip)
    write_labels(root / f"{name}.txt", ev)
    return ManifestEntry(str(root / f"{name}.wav"), str(root / f"{name}.txt")), clip, ev


@pytest.fixture
def oracle_forward(monkeypatch):
    """Replace the network by a lookup of perfect posteriors per feature matrix."""
    table = {}

    def register(path, ev):
        spec = log_mel(load_audio(path))
        y = encode_frames(ev, spec.values.shape[0], spec.frame_duration)
        table[spec.values.tobytes()] = np.where(y > 0, 0.99, 0.01)

    def fake(w, x, mode="eval"):
        return table[x.values.tobytes()], None

    monkeypatch.setattr(strategy, "forward", fake)
    return register


def test_gate_soundness_audit(tmp_path, oracle_forward):
    corpus = []
    for name, hr, rr in (("ok", 120, 14), ("slow", 30, 14), ("fast", 100, 40), ("calm", 60, 12)):
        entry, clip, ev = _write_clip(tmp_path, name, heart_rate=hr, respiratory_rate=rr)
        oracle_forward(entry.audio, ev)
        corpus.append(entry)
    w = init_weights(TINY)
    for which, task in ((HEART_CLASSES, "heart"), (LUNG_CLASSES, "lung"), (HEART_CLASSES + LUNG_CLASSES, "both")):
        res = generate_pseudo_labels(w, corpus, which, tmp_path / task)
        accepted = {e.audio for e in res.entries}
        for e in res.entries:
            ev = read_labels(e.labels, 10.0)
            assert all(x.origin == "pseudo" for x in ev) and set(ev.labels()) <= set(which)
            assert plausibility_filter(estimate_vitals(ev, 10.0), task)
        for r in res.rejections:
            assert not plausibility_filter(res.vitals[r["clip"]], task)
        assert len(accepted) + len(res.rejections) == 4
    heart = generate_pseudo_labels(w, corpus, HEART_CLASSES, tmp_path / "h2")
    assert {r["clip"]: r["reason"] for r in heart.rejections} == {"slow": "hr_low"}
    lung = generate_pseudo_labels(w, corpus, LUNG_CLASSES, tmp_path / "l2")
    assert {r["clip"]: r["reason"] for r in lung.rejections} == {"fast": "rr_high"}
    assert heart.rejections_csv().splitlines()[0] == "clip,hr,rr,reason"
    counts = [round(v.heart_rate * v.observed_duration / 60) for k, v in heart.vitals.items() if k != "slow"]
    assert heart.totals["S1"] == sum(counts)


def test_pseudo_label_errors(tmp_path):
    w = init_weights(TINY)
    empty = generate_pseudo_labels(w, [], HEART_CLASSES, tmp_path / "e")
    assert empty.entries == [] and empty.rejections == []
    with pytest.raises(MissingAudio):
        generate_pseudo_labels(w, [ManifestEntry(str(tmp_path / "none.wav"))], HEART_CLASSES, tmp_path)
    with pytest.raises(IncompatibleModel):
        generate_pseudo_labels(init_weights(CrnnConfig(n_classes=2, channels=(2, 2, 2), gru_hidden=2)),
                               [], HEART_CLASSES, tmp_path)
    with pytest.raises(InvalidParam):
        generate_pseudo_labels(w, [], ["CAS"], tmp_path)


def test_gate_task():
    assert gate_task(["S1"]) == "heart" and gate_task(["Wheeze", "Inspiration"]) == "lung"
    assert gate_task(["S1", "Expiration"]) == "both"


# -- merge ----------------------------------------------------------------------------------

def test_merge_conserves_gt_and_logs_conflicts(tmp_path):
    entry, _, ev = _write_clip(tmp_path, "a", heart_rate=80, respiratory_rate=15)
    write_labels(tmp_path / "a.txt", ev.only(HEART_CLASSES))
    gt = [ManifestEntry(entry.audio, entry.labels, task="heart"),
          ManifestEntry(*_write_clip(tmp_path, "b")[0].__dict__.values())]
    pl_events = ev.only(LUNG_CLASSES + ["S1"]).with_origin("pseudo")
    write_labels(tmp_path / "a.pl.txt", pl_events, with_origin=True)
    pl = [ManifestEntry(entry.audio, str(tmp_path / "a.pl.txt"), origin="pseudo", classes=["S1"] + LUNG_CLASSES)]
    out = merge_datasets(gt, pl, tmp_path / "m")
    assert len(out.entries) == 2 and out.entries[1] is gt[1]
    merged = read_labels(out.entries[0].labels, 10.0)
    gt_events = [(e.label, e.onset, e.offset) for e in read_labels(tmp_path / "a.txt", 10.0)]
    assert [(e.label, e.onset, e.offset) for e in merged if e.origin == "gt"] == gt_events
    assert {e.label for e in merged if e.origin == "pseudo"} == {"Inspiration", "Expiration"}
    assert out.conflicts == [{"clip": "a", "class": "S1", "dropped": ev.count("S1")}]
    assert out.entries[0].supervised_classes() == ["S1", "S2"] + LUNG_CLASSES
    assert out.conflicts_csv().startswith("clip,class,dropped_pseudo_events\n")


def test_merge_identity_on_empty_pl(tmp_path):
    gt = [_write_clip(tmp_path, n)[0] for n in ("x", "y")]
    assert merge_datasets(gt, [], tmp_path / "m").entries == gt
    with pytest.raises(InvalidParam):
        merge_datasets(gt, [], tmp_path / "m", policy="pl_wins")


# -- masking and stages -----------------------------------------------------------------

def test_masked_columns_get_zero_output_gradients(rng):
    w = init_weights(TINY, dtype=np.float64)
    x = rng.standard_normal((2, 30, 64))
    y = rng.integers(0, 2, (2, 30, 8))
    p, cache = forward(w, x, "train")
    _, dp = afl_loss(p, y, mask=class_mask_for(HEART_CLASSES))
    g = backward(w, cache, dp)
    assert not g["out.W"][:, 2:].any() and not g["out.b"][2:].any()
    assert g["out.W"][:, :2].any()


def test_stage_inputs_required(tmp_path):
    cfg = StrategyConfig(workdir=str(tmp_path / "w"), heart_manifest=str(tmp_path / "h.json"))
    for stage in (1, 2, 3):
        with pytest.raises(MissingStageInput):
            run_strategy(stage, cfg)
    with pytest.raises(InvalidParam):
        run_strategy(4, cfg)


def test_tiny_strategy_runs_end_to_end(tmp_path):
    from hlsed.pipeline import CorpusSpec, build_corpora
    from hlsed.train import TrainConfig

    paths = build_corpora(tmp_path / "c", CorpusSpec(n_heart=2, n_lung=2, n_test=1, n_val=1, duration=2.0,
                                                      hr_range=(70, 90), rr_range=(20, 25)))
    cfg = StrategyConfig(str(tmp_path / "w"), str(paths["heart"]), str(paths["lung"]), model_cfg=TINY,
                         train=TrainConfig(epochs=1, batch_size=2, window_s=2.0))
    s1 = run_strategy(1, cfg)
    assert s1["heart"]["weights"].is_file() and s1["lung"]["weights"].is_file()
    s2 = run_strategy(2, cfg)
    merged = load_manifest(s2["manifest"])
    assert len(merged) == 4
    for name in ("heart_pl_rejections.csv", "lung_pl_rejections.csv", "pl_totals.csv", "conflicts.csv"):
        assert (tmp_path / "w" / "stage2" / name).is_file()
    s3 = run_strategy(3, cfg)
    assert s3["weights"].is_file()
