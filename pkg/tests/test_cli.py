import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

import app
from cliApp import cli_app
from errors import InsufficientDrawsError
from group.analysis import SubjectPosterior
from models.dti import rtop_of_tensor
from phantom.tensors import single_tensor_phantom
from store.records import SubjectEntry
from store.repository import read_posteriors, save_subject, write_manifest


def _run(*args):
    result = CliRunner().invoke(cli_app, [str(a) for a in args])
    assert result.exit_code == 0, result.output + repr(result.exception)
    return result


def _meta(path):
    return json.loads((path / "meta.json").read_text(encoding="utf-8"))


@pytest.fixture(scope="module")
def dti_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("dti")
    _run("--out", root / "ts", "--seed", 3, "simulate", "--trials", 20)
    _run("--out", root / "fits", "fit", "dti", "--trialset", root / "ts")
    return root


@pytest.fixture(scope="module")
def crossing_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("crossing")
    _run("--out", root / "ts", "simulate", "--angle", 60, "--trials", 3)
    return root


class TestScheme:
    def test_custom_shells(self, tmp_path):
        _run("--out", tmp_path, "scheme", "--shells", "1000,3000", "--dirs", "10,20", "--b0", 2)
        bvals = np.loadtxt(tmp_path / "scheme.bvals")
        assert bvals.shape == (32,)
        assert np.loadtxt(tmp_path / "scheme.bvecs").shape == (3, 32)
        assert _meta(tmp_path)["summary"]["n_measurements"] == 32

    def test_hcp(self, tmp_path):
        _run("--out", tmp_path, "scheme", "--hcp")
        assert _meta(tmp_path)["summary"]["n_measurements"] == 552

    def test_bad_list(self, tmp_path):
        result = CliRunner().invoke(cli_app, ["--out", str(tmp_path), "scheme", "--shells", "1000,abc"])
        assert result.exit_code == 2


class TestSimulate:
    def test_trialset_files(self, dti_run):
        ts = dti_run / "ts"
        for name in ("scheme.bvals", "scheme.bvecs", "latent.csv", "noisy.csv", "truth.json", "meta.json"):
            assert (ts / name).exists()
        assert pd.read_csv(ts / "noisy.csv").shape == (20, 104)
        meta = _meta(ts)
        assert meta["seed"] == 3
        assert meta["trials"] == 20
        assert meta["run"]["command"] == "simulate"
        assert meta["run"]["seed_lineage"] == {"noise": [3, 1]}

    def test_from_scheme_dir(self, tmp_path):
        _run("--out", tmp_path / "s", "scheme", "--shells", "1000", "--dirs", 30, "--b0", 2)
        _run("--out", tmp_path / "ts", "simulate", "--trials", 2, "--scheme-dir", tmp_path / "s")
        assert pd.read_csv(tmp_path / "ts" / "noisy.csv").shape == (2, 32)

    def test_scheme_timing_carried_over(self, tmp_path):
        _run("--out", tmp_path / "s", "scheme", "--shells", "1000", "--dirs", 30, "--b0", 2, "--diffusion-time", 0.05)
        _run("--out", tmp_path / "ts", "simulate", "--trials", 2, "--scheme-dir", tmp_path / "s")
        meta = _meta(tmp_path / "ts")
        assert meta["diffusion_time"] == pytest.approx(0.05)
        assert meta["small_delta"] is None
        truth = json.loads((tmp_path / "ts" / "truth.json").read_text(encoding="utf-8"))
        assert truth["rtop"] == pytest.approx(rtop_of_tensor(single_tensor_phantom().tensors[0], 0.05), rel=1e-12)

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 11, "simulate": {"trials": 4, "noise": "gaussian"}}), encoding="utf-8")
        _run("--config", cfg, "--out", tmp_path / "ts", "simulate")
        meta = _meta(tmp_path / "ts")
        assert meta["trials"] == 4
        assert meta["seed"] == 11
        assert meta["noise"]["kind"] == "gaussian"


class TestFit:
    def test_dti_posteriors(self, dti_run):
        records = read_posteriors(dti_run / "fits" / "posteriors.jsonl")
        assert len(records) == 20
        assert all(r.model == "dti" and r.ok for r in records)
        assert len(records[0].mean) == 7
        summary = _meta(dti_run / "fits")["summary"]
        assert summary == {"n_trials": 20, "n_ok": 20, "n_rejected": 0}

    def test_threads_do_not_change_results(self, dti_run, tmp_path):
        _run("--out", tmp_path, "--threads", 4, "fit", "dti", "--trialset", dti_run / "ts")
        a = read_posteriors(dti_run / "fits" / "posteriors.jsonl")
        b = read_posteriors(tmp_path / "posteriors.jsonl")
        assert [r.mean for r in a] == [r.mean for r in b]

    def test_out_must_differ(self, dti_run):
        assert app.main(["--out", str(dti_run / "ts"), "fit", "dti", "--trialset", str(dti_run / "ts")]) == 2

    def test_csd(self, crossing_run):
        out = crossing_run / "csd"
        _run("--out", out, "fit", "csd", "--trialset", crossing_run / "ts", "--order", 8)
        records = read_posteriors(out / "posteriors.jsonl")
        assert len(records) == 3
        assert len(records[0].mean) == 45
        assert records[0].extras["shell"] == pytest.approx(3000.0)
        assert "n_not_converged" in _meta(out)["summary"]

    def test_qbi(self, crossing_run):
        out = crossing_run / "qbi"
        _run("--out", out, "fit", "qbi", "--trialset", crossing_run / "ts", "--lambda", 0.01)
        records = read_posteriors(out / "posteriors.jsonl")
        assert len(records[0].mean) == 28
        assert records[0].extras["lambda"] == 0.01


class TestPP:
    def test_md(self, dti_run, tmp_path):
        _run("--out", tmp_path, "pp", "md", "--fits", dti_run / "fits", "--draws", 200, "--bias-correct", "--bootstrap", "--bootstrap-draws", 50)
        for name in ("pp_md.csv", "pp_md_bias_corrected.csv", "pp_md_bootstrap.csv", "pp_md.svg", "meta.json"):
            assert (tmp_path / name).exists()
        frame = pd.read_csv(tmp_path / "pp_md.csv")
        assert len(frame) == 99
        assert frame["coverage"].is_monotonic_increasing
        summary = _meta(tmp_path)["summary"]
        assert summary["bayesian"]["n_trials"] == 20
        assert set(_meta(tmp_path)["seed_lineage"]) == {"bootstrap"}
        assert summary["truth"] == pytest.approx(0.7e-3)
        assert 0.0 <= summary["bootstrap_vs_bayesian"] <= 1.0
        assert (tmp_path / "pp_md.svg").read_text(encoding="utf-8").lstrip().startswith("<?xml")

    def test_fa_and_rtop(self, dti_run, tmp_path):
        _run("--out", tmp_path / "fa", "--seed", 5, "pp", "fa", "--fits", dti_run / "fits", "--draws", 100)
        _run("--out", tmp_path / "rtop", "pp", "rtop", "--fits", dti_run / "fits" / "posteriors.jsonl", "--draws", 100)
        assert _meta(tmp_path / "fa")["summary"]["truth"] == pytest.approx(0.8)
        assert _meta(tmp_path / "rtop")["summary"]["truth"] == pytest.approx(0.90e6, rel=0.01)
        assert _meta(tmp_path / "fa")["seed_lineage"] == {"posterior": [5, 2]}

    def test_angle(self, crossing_run, tmp_path):
        fits = crossing_run / "csd_for_pp"
        _run("--out", fits, "fit", "csd", "--trialset", crossing_run / "ts", "--order", 8)
        _run("--out", tmp_path, "pp", "angle", "--fits", fits, "--draws", 20)
        summary = _meta(tmp_path)["summary"]
        assert summary["truth"] == pytest.approx(60.0)
        assert 0.0 < summary["bayesian"]["usable_draw_fraction"] <= 1.0

    def test_too_few_draws(self, dti_run, tmp_path):
        result = CliRunner().invoke(cli_app, ["--out", str(tmp_path), "pp", "fa", "--fits", str(dti_run / "fits"), "--draws", "1"])
        assert isinstance(result.exception, InsufficientDrawsError)
        assert app.main(["--out", str(tmp_path), "pp", "fa", "--fits", str(dti_run / "fits"), "--draws", "1"]) == 2

    def test_quantity_model_mismatch(self, dti_run, tmp_path):
        assert app.main(["--out", str(tmp_path), "pp", "angle", "--fits", str(dti_run / "fits")]) == 2

    def test_missing_fits(self, tmp_path):
        assert app.main(["--out", str(tmp_path), "pp", "md"]) == 2


@pytest.fixture
def manifest_dir(tmp_path):
    rng = np.random.default_rng(0)
    entries = []
    for i in range(6):
        group = "control" if i < 3 else "patient"
        a = 8.0 if group == "control" else 6.0
        sp = SubjectPosterior(f"s{i}", rng.beta(a, 4.0, size=(100, 5)), group)
        entries.append(
            SubjectEntry(
                subject_id=sp.subject_id,
                group=group,
                file=save_subject(sp, tmp_path),
                n_draws=100,
                n_voxels=5,
                seed_lineage=[i, 2],
            )
        )
    write_manifest(entries, tmp_path)
    return tmp_path


class TestGroup:
    def test_weighted(self, manifest_dir, tmp_path_factory):
        out = tmp_path_factory.mktemp("group")
        _run("--out", out, "group", "--manifest", manifest_dir, "--weighted", "--hist-voxel", 0, "--hist-voxel", 3)
        for name in ("group_unweighted.csv", "group_weighted.csv", "weights.csv", "hist_voxel_0.svg", "hist_voxel_3.svg"):
            assert (out / name).exists()
        summary = _meta(out)["summary"]
        assert summary["n_controls"] == 3
        assert summary["n_patients"] == 3
        assert summary["unweighted"]["mean_diff"] > 0.0
        assert set(summary["mean_weights"]) == {f"s{i}" for i in range(6)}
        assert len(summary["control_beta_fits"]["0"]) == 2
        assert _meta(out)["seed_lineage"] == {f"s{i}": [i, 2] for i in range(6)}

    def test_voxel_out_of_range(self, manifest_dir, tmp_path_factory):
        out = tmp_path_factory.mktemp("group_bad")
        assert app.main(["--out", str(out), "group", "--manifest", str(manifest_dir), "--hist-voxel", "5"]) == 2


class TestMain:
    def test_exit_code_for_data_error(self, tmp_path):
        (tmp_path / "ts").mkdir()
        assert app.main(["--out", str(tmp_path / "out"), "fit", "dti", "--trialset", str(tmp_path / "ts")]) == 3

    def test_version(self):
        result = CliRunner().invoke(cli_app, ["--version"])
        assert result.exit_code == 0
        assert "dmri-uncertainty" in result.output
