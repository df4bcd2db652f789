import json

import numpy as np
import pytest

from hlsed import cli
from hlsed.labels import ManifestEntry, save_manifest
from hlsed.signal import read_features


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def synth_dir(tmp_path, capsys):
    code, _, _ = run(capsys, "synth", "--out", tmp_path / "s", "--name", "a", "--hr", 120, "--rr", 18,
                     "--seed", 1)
    assert code == 0
    run(capsys, "synth", "--out", tmp_path / "s", "--name", "b", "--hr", 70, "--rr", 12, "--seed", 2)
    save_manifest(tmp_path / "s" / "gt.json", [ManifestEntry("a.wav", "a.txt"), ManifestEntry("b.wav", "b.txt")])
    return tmp_path / "s"


def test_featurize(tmp_path, capsys, synth_dir):
    code, out, _ = run(capsys, "featurize", synth_dir / "a.wav", "--out", tmp_path / "f")
    assert code == 0 and out.strip().endswith(",622,64")
    assert read_features(tmp_path / "f" / "a.lmel").values.shape == (622, 64)


def test_featurize_empty_list_is_noop(tmp_path, capsys):
    code, out, _ = run(capsys, "featurize", "--out", tmp_path / "f")
    assert code == 0 and out == "" and not (tmp_path / "f").exists()


def test_corrupt_wav_names_file(tmp_path, capsys):
    bad = tmp_path / "broken.wav"
    bad.write_bytes(b"RIFF0000WAVEjunk")
    code, _, err = run(capsys, "featurize", bad, "--out", tmp_path / "f")
    assert code != 0
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("error: CorruptHeader:") and "broken.wav" in lines[0]


def test_missing_file_exits_nonzero(tmp_path, capsys):
    code, _, err = run(capsys, "vitals", tmp_path / "nope.wav", "--labels", tmp_path / "x.txt")
    assert code == 2 and err.startswith("error: NotFound:")


@pytest.mark.parametrize("basis", ["event", "segment", "ji"])
@pytest.mark.parametrize("task", ["heart", "lung", "both"])
def test_eval_self_is_perfect(tmp_path, capsys, synth_dir, basis, task):
    code, out, err = run(capsys, "eval", "--gt", synth_dir / "gt.json", "--pred-dir", synth_dir,
                         "--basis", basis, "--task", task)
    assert code == 0 and err.strip() == "macro_f1=1.000000"
    rows = out.strip().splitlines()
    assert rows[0] == "class,basis,tp,fp,fn,precision,recall,f1"
    assert {r.split(",")[0] for r in rows[1:]} == {"S1", "S2", "Inspiration", "Expiration"}
    assert all(r.endswith(",1.000000") for r in rows[1:])


def test_heart_default_collar(tmp_path, capsys):
    args = cli.build_parser().parse_args(["eval", "--gt", "g", "--pred-dir", "p", "--task", "heart"])
    assert cli._eval_config(args).t_collar == 0.060
    args = cli.build_parser().parse_args(["eval", "--gt", "g", "--pred-dir", "p", "--task", "heart",
                                          "--collar", "0.1"])
    assert cli._eval_config(args).t_collar == 0.1
    # a 50 ms onset shift is a hit, 70 ms a miss
    from hlsed.signal import AudioClip, save_audio

    save_audio(tmp_path / "c.wav", AudioClip(np.zeros(8000), 4000))
    (tmp_path / "c.txt").write_text("S1 1.0 1.1\n")
    save_manifest(tmp_path / "gt.json", [ManifestEntry("c.wav", "c.txt", task="heart")])
    for shift, f1 in ((0.05, "1.000000"), (0.07, "0.000000")):
        (tmp_path / "p").mkdir(exist_ok=True)
        (tmp_path / "p" / "c.txt").write_text(f"S1 {1.0 + shift} {1.1 + shift}\n")
        _, _, err = run(capsys, "eval", "--gt", tmp_path / "gt.json", "--pred-dir", tmp_path / "p",
                        "--task", "heart")
        assert err.strip() == f"macro_f1={f1}"


def test_vitals_oracle_mode(capsys, synth_dir):
    code, out, _ = run(capsys, "vitals", synth_dir / "a.wav", "--labels", synth_dir / "a.txt")
    assert code == 0
    assert out.splitlines() == ["clip,heart_rate,respiratory_rate,duration,decision",
                                "a,120.0,18.0,10.000,accept"]
    code, _, err = run(capsys, "vitals", synth_dir / "a.wav")
    assert code == 2 and "InvalidParam" in err


def test_config_file(tmp_path):
    (tmp_path / "a.ini").write_text("# run settings\nseed = 7\nlr = 0.01\nbatch-size = 3\ndeterministic = yes\n")
    assert cli.read_config(tmp_path / "a.ini") == {"seed": 7, "lr": 0.01, "batch_size": 3, "deterministic": True}
    (tmp_path / "b.ini").write_text("[train]\nepochs = 4\n")
    assert cli.read_config(tmp_path / "b.ini") == {"epochs": 4}
    parser = cli.build_parser()
    args = parser.parse_args(["train", "--manifest", "m", "--run-dir", "r", "--config", str(tmp_path / "a.ini"),
                              "--seed", "3"])
    cli._fill(args, parser._subparsers._group_actions[0].choices["train"])
    # explicit flags beat the file, the file beats defaults
    assert args.seed == 3 and args.lr == 0.01 and args.batch_size == 3 and args.deterministic


@pytest.mark.parametrize("text", ["colour = red\n", "lr = fast\n", "lr\n"])
def test_bad_config_exits_nonzero(tmp_path, capsys, synth_dir, text):
    (tmp_path / "c.ini").write_text(text)
    code, _, err = run(capsys, "vitals", synth_dir / "a.wav", "--labels", synth_dir / "a.txt",
                       "--config", tmp_path / "c.ini")
    assert code == 2 and err.startswith("error: InvalidConfig:")


def test_train_infer_curves_pseudolabel_merge(tmp_path, capsys, synth_dir):
    common = ["--epochs", 1, "--window-s", 2, "--batch-size", 2, "--seed", 5, "--deterministic"]
    for run_dir in ("r1", "r2"):
        code, out, _ = run(capsys, "train", "--manifest", synth_dir / "gt.json", "--run-dir", tmp_path / run_dir,
                           *common)
        assert code == 0 and "epochs=1" in out
    for name in ("weights.hlsw", "history.csv", "config.json"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()
    snapshot = json.loads((tmp_path / "r1" / "config.json").read_text())
    assert snapshot["train"]["seed"] == 5 and snapshot["model"]["arch"] == "crnn"

    weights = tmp_path / "r1" / "weights.hlsw"
    code, out, _ = run(capsys, "infer", "--weights", weights, synth_dir / "a.wav", "--out", tmp_path / "pred")
    assert code == 0 and (tmp_path / "pred" / "a.txt").is_file()
    code, out, _ = run(capsys, "vitals", "--weights", weights, synth_dir / "a.wav", "--task", "heart")
    assert code == 0 and out.splitlines()[1].startswith("a,")

    code, _, _ = run(capsys, "curves", "--weights", weights, "--manifest", synth_dir / "gt.json",
                     "--out-dir", tmp_path / "curves", "--basis", "segment")
    assert code == 0
    pr = (tmp_path / "curves" / "pr.csv").read_text().splitlines()
    assert pr[0] == "class,threshold,precision,recall" and len(pr) == 1 + 4 * 19
    assert (tmp_path / "curves" / "mape.csv").read_text().startswith("class,threshold,mape\n")

    code, out, _ = run(capsys, "pseudolabel", "--weights", weights, "--corpus", synth_dir / "gt.json",
                       "--classes", "I,E", "--out-dir", tmp_path / "pl")
    assert code == 0 and out.startswith("accepted=")
    assert (tmp_path / "pl" / "rejections.csv").read_text().startswith("clip,hr,rr,reason\n")
    code, out, _ = run(capsys, "merge", "--gt", synth_dir / "gt.json", "--pl", tmp_path / "pl" / "pseudo.json",
                       "--out-dir", tmp_path / "merged")
    assert code == 0 and out.startswith("entries=2")


def test_synth_corpus_flag(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "--corpus", "--out", tmp_path / "c", "--duration", 2)
    assert code == 0
    assert [p.split("/")[-1] for p in out.split()] == ["heart.json", "lung.json", "test.json"]
