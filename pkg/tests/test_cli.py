"""
Tests for the ssm2mel command line.
"""

import filecmp

import pytest

from ssm2mel.cli import main
from ssm2mel.config import save_config
from ssm2mel.data import load_dataset, read_tensor
from ssm2mel.model import pearson_r
from ssm2mel.train import load_checkpoint

SYNTH_ARGS = ["--set", "n_subjects=2", "--set", "recordings_per_subject=3", "--set", "n_samples=64",
              "--set", "n_channels=4", "--set", "n_mel=3", "--set", "smoothing=4", "--set", "seed=3"]


@pytest.fixture(autouse=True)
def _isolated_environment(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    for name in ("SSM2MEL_LOG_LEVEL", "SSM2MEL_WORKERS", "SSM2MEL_DEBUG_NUMERICS", "SSM2MEL_LOG_FILE"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def data_dir(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--out", str(out), *SYNTH_ARGS]) == 0
    return out


@pytest.fixture
def run_file(tiny_run_config, tmp_path):
    path = tmp_path / "run.txt"
    save_config(tiny_run_config, path)
    return path


@pytest.fixture
def trained(run_file, data_dir, tmp_path):
    out = tmp_path / "run"
    code = main(["train", "--config", str(run_file), "--data", str(data_dir), "--out", str(out),
                 "--set", "epochs=1"])
    assert code == 0
    return out


class TestSynth:
    def test_writes_every_recording(self, data_dir, capsys):
        recordings = [p for split in ("train", "val", "test") for p in (data_dir / split).iterdir()]
        assert len(recordings) == 6
        assert all((p / "eeg.ssmt").is_file() and (p / "meta.txt").is_file() for p in recordings)
        assert load_dataset(data_dir).counts() == {"train": 4, "val": 1, "test": 1}

    def test_is_reproducible(self, data_dir, tmp_path):
        again = tmp_path / "again"
        assert main(["synth", "--out", str(again), *SYNTH_ARGS]) == 0
        for split in ("train", "val", "test"):
            names = sorted(p.name for p in (data_dir / split).iterdir())
            for name in names:
                _, mismatch, errors = filecmp.cmpfiles(data_dir / split / name, again / split / name,
                                                       ["eeg.ssmt", "mel.ssmt", "meta.txt"], shallow=False)
                assert mismatch == [] and errors == []

    def test_prints_spec(self, tmp_path, capsys):
        main(["synth", "--out", str(tmp_path / "d"), *SYNTH_ARGS])
        out = capsys.readouterr().out
        assert "# synthetic spec" in out
        assert "n_subjects=2" in out

    def test_out_is_required(self):
        with pytest.raises(SystemExit) as err:
            main(["synth"])
        assert err.value.code == 2

    def test_unknown_spec_key(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path / "d"), "--set", "colour=blue"]) == 2


class TestTrain:
    def test_writes_checkpoints_and_metrics(self, trained, capsys):
        assert (trained / "best" / "manifest.txt").is_file()
        assert (trained / "final" / "state.txt").is_file()
        assert len((trained / "metrics.tsv").read_text().splitlines()) == 1

    def test_zero_epochs(self, run_file, data_dir, tmp_path, capsys):
        out = tmp_path / "zero"
        code = main(["train", "--config", str(run_file), "--data", str(data_dir), "--out", str(out),
                     "--set", "epochs=0"])
        assert code == 0
        assert "no epochs run" in capsys.readouterr().out
        assert load_checkpoint(out / "final").epoch == 0

    def test_summary_names_validation_score(self, run_file, data_dir, tmp_path, capsys):
        main(["train", "--config", str(run_file), "--data", str(data_dir), "--out", str(tmp_path / "v"),
              "--set", "epochs=1"])
        out = capsys.readouterr().out
        assert "best val pearson" in out
        assert "best train loss" not in out

    def test_summary_without_validation_split(self, run_file, tmp_path, capsys):
        data = tmp_path / "no_val"
        assert main(["synth", "--out", str(data), *SYNTH_ARGS, "--set", "val_ratio=0"]) == 0
        assert load_dataset(data).counts() == {"train": 5, "val": 0, "test": 1}
        capsys.readouterr()
        code = main(["train", "--config", str(run_file), "--data", str(data), "--out", str(tmp_path / "n"),
                     "--set", "epochs=1"])
        assert code == 0
        out = capsys.readouterr().out
        assert "best train loss" in out and "(no validation split)" in out
        assert "best val pearson" not in out

    def test_unknown_key(self, run_file, data_dir, tmp_path, capsys):
        code = main(["train", "--config", str(run_file), "--data", str(data_dir),
                     "--out", str(tmp_path / "x"), "--set", "learning_rate=1"])
        assert code == 2
        assert "learning_rate" in capsys.readouterr().err

    def test_needs_data(self, run_file, tmp_path):
        assert main(["train", "--config", str(run_file), "--out", str(tmp_path / "x")]) == 2

    def test_missing_dataset(self, run_file, tmp_path):
        code = main(["train", "--config", str(run_file), "--data", str(tmp_path / "absent"),
                     "--out", str(tmp_path / "x")])
        assert code == 3

    def test_resume(self, trained, data_dir, capsys):
        code = main(["train", "--resume", str(trained / "final"), "--set", "epochs=2"])
        assert code == 0
        final = load_checkpoint(trained / "final")
        assert final.epoch == 2 and final.run_config.epochs == 2
        assert [line.split("\t")[0] for line in (trained / "metrics.tsv").read_text().splitlines()] == ["0", "1"]


class TestEval:
    def test_prints_config_and_scores(self, trained, data_dir, capsys):
        capsys.readouterr()
        assert main(["eval", "--checkpoint", str(trained / "best"), "--data", str(data_dir),
                     "--split", "val"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("# run configuration")
        assert "d_model=8" in out
        assert out.strip().splitlines()[-1].startswith("mean\t")
        assert (trained / "best" / "report.txt").is_file()

    def test_dumped_predictions_rescore(self, trained, data_dir, tmp_path):
        dump, report = tmp_path / "pred", tmp_path / "report.txt"
        assert main(["eval", "--checkpoint", str(trained / "best"), "--data", str(data_dir),
                     "--split", "train", "--dump-pred", str(dump), "--report", str(report)]) == 0
        scores = dict(line.split("\t") for line in report.read_text().splitlines())
        for recording in load_dataset(data_dir).train:
            pred = read_tensor(dump / f"{recording.recording_id}.ssmt")
            rescored = pearson_r(pred.data, recording.mel).item()
            assert rescored == pytest.approx(float(scores[recording.recording_id]), abs=1e-6)

    def test_empty_split(self, trained, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        code = main(["eval", "--checkpoint", str(trained / "best"), "--data", str(empty)])
        assert code == 5

    def test_dimension_mismatch(self, trained, tmp_path):
        other = tmp_path / "wide"
        assert main(["synth", "--out", str(other), *SYNTH_ARGS, "--set", "n_channels=5"]) == 0
        code = main(["eval", "--checkpoint", str(trained / "best"), "--data", str(other), "--split", "train"])
        assert code == 5

    def test_missing_checkpoint(self, data_dir, tmp_path):
        assert main(["eval", "--checkpoint", str(tmp_path / "nope"), "--data", str(data_dir)]) == 3

    def test_bad_split_choice(self, trained, data_dir):
        with pytest.raises(SystemExit) as err:
            main(["eval", "--checkpoint", str(trained / "best"), "--data", str(data_dir), "--split", "dev"])
        assert err.value.code == 2


@pytest.mark.slow
class TestSelftest:
    def test_passes(self, capsys):
        assert main(["selftest"]) == 0
        assert "checks passed" in capsys.readouterr().out

    def test_corrupted_backward_fails(self, capsys):
        assert main(["selftest", "--corrupt-op", "matmul"]) == 1
        assert "FAIL" in capsys.readouterr().out
