import json

import numpy as np
import pytest

from ubp.cli import main
from ubp.data.formats import EpochTensor, read_epochs, read_feature_cache, write_epochs
from ubp.data.preprocess import STANDARD_63
from ubp.numkernel import Rng


def run_cli(*argv):
    return main(list(argv))


def write_synth_spec(path, **overrides):
    spec = {
        "n_concepts": 20, "images_per_concept": 2, "trials_per_image": 2,
        "channels": 4, "timepoints": 16, "noise_sigma": 0.5,
        "attention_drift": 0.0, "highfreq_leak": 0.3,
        "seed": 11, "feature_dim": 32,
    }
    spec.update(overrides)
    path.write_text(json.dumps(spec))
    return spec


class TestSynth:
    def test_deterministic_manifests(self, tmp_path):
        spec = tmp_path / "spec.json"
        write_synth_spec(spec)
        assert run_cli("synth", "--spec", str(spec), "--out", str(tmp_path / "a")) == 0
        assert run_cli("synth", "--spec", str(spec), "--out", str(tmp_path / "b")) == 0
        ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
        mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
        assert [x["sha256"] for x in ma["artifacts"]] == [x["sha256"] for x in mb["artifacts"]]

    def test_gallery_arithmetic(self, tmp_path):
        spec = tmp_path / "spec.json"
        write_synth_spec(spec, n_concepts=50, images_per_concept=1, test_fraction=0.2)
        out = tmp_path / "out"
        assert run_cli("synth", "--spec", str(spec), "--out", str(out)) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["gallery_size"] == 10

    def test_invalid_spec_exits_2(self, tmp_path):
        spec = tmp_path / "spec.json"
        write_synth_spec(spec, channels=0)
        assert run_cli("synth", "--spec", str(spec), "--out", str(tmp_path / "x")) == 2

    def test_unknown_key_exits_2(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"n_concepts": 5, "bogus_knob": 1}))
        assert run_cli("synth", "--spec", str(spec), "--out", str(tmp_path / "x")) == 2

    def test_env_seed_override(self, tmp_path, monkeypatch):
        spec = tmp_path / "spec.json"
        write_synth_spec(spec, seed=1)
        monkeypatch.setenv("UBP_SEED", "11")
        assert run_cli("synth", "--spec", str(spec), "--out", str(tmp_path / "env")) == 0
        monkeypatch.delenv("UBP_SEED")
        write_synth_spec(spec, seed=11)
        assert run_cli("synth", "--spec", str(spec), "--out", str(tmp_path / "plain")) == 0
        me = json.loads((tmp_path / "env" / "manifest.json").read_text())
        mp = json.loads((tmp_path / "plain" / "manifest.json").read_text())
        assert [x["sha256"] for x in me["artifacts"]] == [x["sha256"] for x in mp["artifacts"]]


class TestPreprocess:
    def make_file(self, tmp_path, n=10, c=63, t=1000, rate=1000, reps=1):
        gen = Rng(3).gen
        ids = np.repeat(np.arange(n // reps, dtype=np.uint32), reps)
        e = EpochTensor(
            data=gen.normal(size=(n, c, t)).astype(np.float32),
            sample_rate=rate, image_ids=ids, subject_id="s9",
        )
        path = tmp_path / "in.ubpe"
        write_epochs(path, e)
        return path

    def test_noop_byte_identical(self, tmp_path):
        src = self.make_file(tmp_path, n=4, c=5, t=40)
        dst = tmp_path / "out.ubpe"
        assert run_cli("preprocess", "--input", str(src), "--output", str(dst)) == 0
        assert src.read_bytes() == dst.read_bytes()

    def test_reference_pipeline_shape(self, tmp_path):
        src = self.make_file(tmp_path, n=6, c=63, t=1000, rate=1000)
        dst = tmp_path / "out.ubpe"
        code = run_cli("preprocess", "--input", str(src), "--output", str(dst),
                       "--channels", "op17", "--window", "0:1000", "--factor", "4")
        assert code == 0
        out = read_epochs(dst)
        assert out.n_channels == 17
        assert out.n_timepoints == 250
        assert out.sample_rate == 250

    def test_averaging_collapses_repetitions(self, tmp_path):
        src = self.make_file(tmp_path, n=60, c=4, t=20, reps=5)
        dst = tmp_path / "avg.ubpe"
        assert run_cli("preprocess", "--input", str(src), "--output", str(dst),
                       "--average") == 0
        out = read_epochs(dst)
        assert out.n_samples == 12
        assert len(np.unique(out.image_ids)) == 12

    def test_bad_window_exits_1(self, tmp_path):
        src = self.make_file(tmp_path, n=4, c=5, t=40)
        code = run_cli("preprocess", "--input", str(src),
                       "--output", str(tmp_path / "x.ubpe"),
                       "--window", "0:39", "--factor", "2")
        assert code == 1


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    spec = root / "spec.json"
    spec.write_text(json.dumps({
        "n_concepts": 24, "images_per_concept": 10, "trials_per_image": 2,
        "channels": 16, "timepoints": 64, "noise_sigma": 0.0,
        "attention_drift": 0.0, "highfreq_leak": 0.3,
        "seed": 4, "feature_dim": 32, "test_fraction": 0.2,
    }))
    assert run_cli("synth", "--spec", str(spec), "--out", str(root / "data")) == 0
    avg = root / "train_avg.ubpe"
    assert run_cli("preprocess", "--input", str(root / "data" / "train.ubpe"),
                   "--output", str(avg), "--average") == 0
    test_avg = root / "test_avg.ubpe"
    assert run_cli("preprocess", "--input", str(root / "data" / "test.ubpe"),
                   "--output", str(test_avg), "--average") == 0
    cfg = root / "train.json"
    cfg.write_text(json.dumps({
        "train": str(avg), "cache": str(root / "data" / "features.ubpf"),
        "out": str(root / "run"),
        "batch_size": 64, "epochs": 30, "lr": 3e-3, "seed": 4,
        "patience": 40,
    }))
    assert run_cli("train", "--config", str(cfg)) == 0
    return root


class TestTrainEvalReport:
    def test_zero_noise_pipeline_reaches_perfect_retrieval(self, workspace):
        report_path = workspace / "report.json"
        code = run_cli("eval",
                       "--checkpoint", str(workspace / "run" / "checkpoint.ubpc"),
                       "--data", str(workspace / "test_avg.ubpe"),
                       "--cache", str(workspace / "data" / "features.ubpf"),
                       "--out", str(report_path),
                       "--ranks", str(workspace / "ranks.csv"))
        assert code == 0
        report = json.loads(report_path.read_text())
        assert report["top1"] == 100.0
        ranks = (workspace / "ranks.csv").read_text().strip().split("\n")
        assert ranks[0] == "query_id,true_rank,top5_ids"
        assert len(ranks) == report["gallery_size"] + 1

    def test_missing_cache_entry_exits_1_naming_id(self, workspace, capsys, tmp_path):
        cache = read_feature_cache(workspace / "data" / "features.ubpf")
        test = read_epochs(workspace / "test_avg.ubpe")
        victim = int(test.image_ids[0])
        del cache.embeddings[victim]
        from ubp.data.formats import write_feature_cache

        broken = tmp_path / "broken.ubpf"
        write_feature_cache(broken, cache)
        code = run_cli("eval",
                       "--checkpoint", str(workspace / "run" / "checkpoint.ubpc"),
                       "--data", str(workspace / "test_avg.ubpe"),
                       "--cache", str(broken))
        assert code == 1
        assert str(victim) in capsys.readouterr().err

    def test_report_aggregates_with_mean_row(self, workspace, tmp_path, capsys):
        report_path = workspace / "report.json"
        if not report_path.exists():
            run_cli("eval",
                    "--checkpoint", str(workspace / "run" / "checkpoint.ubpc"),
                    "--data", str(workspace / "test_avg.ubpe"),
                    "--cache", str(workspace / "data" / "features.ubpf"),
                    "--out", str(report_path))
        rec = json.loads(report_path.read_text())
        paths = []
        for k in range(3):
            rec2 = dict(rec, subject=f"s{k}")
            p = tmp_path / f"r{k}.json"
            p.write_text(json.dumps(rec2))
            paths.append(str(p))
        out_csv = tmp_path / "summary.csv"
        assert run_cli("report", *paths, "--out", str(out_csv)) == 0
        lines = out_csv.read_text().strip().split("\n")
        assert len(lines) == 5  # header + 3 subjects + mean
        assert lines[0].startswith("subject,")
        assert lines[-1].startswith("mean,")

    def test_train_log_lines_parse(self, workspace):
        lines = (workspace / "run" / "train_log.jsonl").read_text().strip().split("\n")
        for line in lines:
            rec = json.loads(line)
            assert {"epoch", "loss", "lo", "hi", "branch_counts", "val_top1"} <= set(rec)


class TestExtractFeatures:
    def test_rasters_to_cache(self, tmp_path):
        from ubp.data.formats import write_raster
        from conftest import textured_image

        img_dir = tmp_path / "imgs"
        img_dir.mkdir()
        entries = []
        for i in range(3):
            p = img_dir / f"{i}.ubpi"
            write_raster(p, textured_image(seed=i))
            entries.append({"id": i, "path": str(p)})
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps({"images": entries, "dim": 16, "seed": 2}))
        out = tmp_path / "features.ubpf"
        assert run_cli("extract-features", "--images", str(manifest),
                       "--out", str(out)) == 0
        cache = read_feature_cache(out)
        assert cache.n_images == 3
        assert cache.dim == 16
        for entry in cache.embeddings.values():
            for v in entry.values():
                assert abs(np.linalg.norm(v) - 1.0) < 1e-4

    def test_empty_manifest_exits_2(self, tmp_path):
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps({"images": []}))
        assert run_cli("extract-features", "--images", str(manifest),
                       "--out", str(tmp_path / "x.ubpf")) == 2


class TestArgumentHandling:
    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--spec", "x.json", "--out", "y", "--bogus"])
        assert exc.value.code == 2

    def test_help_lists_subcommands(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        for sub in ("synth", "preprocess", "extract-features", "train", "eval", "report"):
            assert sub in text
