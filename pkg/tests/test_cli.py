import json
import shutil

import numpy as np
import pytest
from click.testing import CliRunner

from ciqa import load_dictionary, save_dictionary
from ciqa.cli import main

from conftest import SCREEN_TAU, fixture_paths


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def graph_args():
    graph, spec = fixture_paths("tiny_vgg")
    return ["--graph", str(graph), "--spec", str(spec)]


@pytest.fixture(scope="module")
def dict_file(tmp_path_factory, vgg_dictionary):
    path = tmp_path_factory.mktemp("dict") / "tiny_vgg.ciqa"
    save_dictionary(vgg_dictionary, path)
    return path


class TestScore:
    def test_identical_files_score_zero(self, runner, graph_args, desk_corpus):
        ref = desk_corpus["refs"][0]
        result = runner.invoke(main, ["score", ref, ref, *graph_args,
                                      "--mode", "theta"])
        assert result.exit_code == 0, result.output
        doc = json.loads(result.output)
        assert doc["value"] == 0.0

    def test_scores_match_modes(self, runner, graph_args, desk_corpus, dict_file):
        rec = desk_corpus["manifest"].records[0]
        result = runner.invoke(main, ["score", rec.ref_path, rec.dist_path,
                                      *graph_args, "--mode", "gamma",
                                      "--dict", str(dict_file)])
        assert result.exit_code == 0, result.output
        assert json.loads(result.output)["value"] > 0.0

    def test_dim_mismatch_exits_2(self, runner, graph_args, desk_corpus, tmp_path):
        from PIL import Image
        small = tmp_path / "small.png"
        Image.new("RGB", (40, 40)).save(small)
        ref = desk_corpus["refs"][0]
        result = runner.invoke(main, ["score", ref, str(small), *graph_args,
                                      "--mode", "theta"])
        assert result.exit_code == 2
        assert "DimMismatch" in result.output

    def test_missing_dict_in_gamma_mode_exits_2(self, runner, graph_args,
                                                desk_corpus):
        ref = desk_corpus["refs"][0]
        result = runner.invoke(main, ["score", ref, ref, *graph_args,
                                      "--mode", "gamma"])
        assert result.exit_code == 2

    def test_missing_file_exits_2(self, runner, graph_args):
        result = runner.invoke(main, ["score", "nope.png", "also-nope.png",
                                      *graph_args, "--mode", "theta"])
        assert result.exit_code == 2

    def test_tsv_output(self, runner, graph_args, desk_corpus):
        ref = desk_corpus["refs"][0]
        result = runner.invoke(main, ["score", ref, ref, *graph_args,
                                      "--mode", "theta", "--tsv"])
        assert result.exit_code == 0
        assert result.output.strip().split("\t")[0] == "0"

    def test_per_channel_emission(self, runner, graph_args, desk_corpus, dict_file):
        rec = desk_corpus["manifest"].records[0]
        result = runner.invoke(main, ["score", rec.ref_path, rec.dist_path,
                                      *graph_args, "--mode", "gamma",
                                      "--dict", str(dict_file),
                                      "--emit", "per-channel"])
        assert result.exit_code == 0, result.output
        doc = json.loads(result.output)
        assert len(doc["per_channel_cost"]) == 5
        assert len(doc["per_channel_cost"][0]) == 8


class TestScreen:
    def test_screen_writes_roundtrippable_dictionary(self, runner, graph_args,
                                                     desk_corpus, tmp_path):
        out = tmp_path / "dict.ciqa"
        result = runner.invoke(main, ["screen", "--manifest",
                                      str(desk_corpus["csv"]), *graph_args,
                                      "--out", str(out), "--seed", "0",
                                      "--tau-rel", str(SCREEN_TAU)])
        assert result.exit_code == 0, result.output
        d = load_dictionary(out, expected_backbone="tiny_vgg")
        assert d.n_causal() > 0
        assert d.provenance["spec_hash"]

    def test_rerun_is_byte_identical(self, runner, graph_args, desk_corpus,
                                     tmp_path):
        a, b = tmp_path / "a.ciqa", tmp_path / "b.ciqa"
        args = ["screen", "--manifest", str(desk_corpus["csv"]), *graph_args,
                "--seed", "3", "--tau-rel", str(SCREEN_TAU)]
        assert runner.invoke(main, args + ["--out", str(a)]).exit_code == 0
        assert runner.invoke(main, args + ["--out", str(b)]).exit_code == 0
        assert a.read_bytes() == b.read_bytes()

    def test_extreme_tau_warns_near_empty(self, runner, graph_args, desk_corpus,
                                          tmp_path):
        out = tmp_path / "dict.ciqa"
        result = runner.invoke(main, ["screen", "--manifest",
                                      str(desk_corpus["csv"]), *graph_args,
                                      "--out", str(out), "--seed", "0",
                                      "--tau-rel", "0.99"])
        assert result.exit_code == 0, result.output
        assert "warning" in result.output
        assert load_dictionary(out).n_causal() <= 4


class TestBenchmark:
    def test_oracle_scorer_is_perfect(self, runner, graph_args, desk_corpus,
                                      tmp_path):
        out = tmp_path / "bench"
        result = runner.invoke(main, ["benchmark", "--manifest",
                                      str(desk_corpus["csv"]), *graph_args,
                                      "--mode", "theta", "--oracle-scorer",
                                      "--out", str(out)])
        assert result.exit_code == 0, result.output
        report = json.loads((out / "report.json").read_text())
        assert report["plcc"] == pytest.approx(1.0)
        assert report["srcc"] == pytest.approx(1.0)
        assert (out / "scatter.csv").exists()

    def test_empty_manifest_exits_2(self, runner, graph_args, tmp_path):
        bad = tmp_path / "empty.csv"
        bad.write_text("ref,dist,mos\n")
        result = runner.invoke(main, ["benchmark", "--manifest", str(bad),
                                      *graph_args, "--mode", "theta",
                                      "--oracle-scorer", "--out",
                                      str(tmp_path / "o")])
        assert result.exit_code == 2

    def test_real_benchmark_writes_report(self, runner, graph_args, desk_corpus,
                                          dict_file, tmp_path):
        out = tmp_path / "bench"
        result = runner.invoke(main, ["benchmark", "--manifest",
                                      str(desk_corpus["csv"]), *graph_args,
                                      "--mode", "gamma", "--dict", str(dict_file),
                                      "--out", str(out), "--tsv"])
        assert result.exit_code == 0, result.output
        report = json.loads((out / "report.json").read_text())
        assert report["srcc"] > 0.5
        scatter = (out / "scatter.csv").read_text().splitlines()
        assert scatter[0] == "mos_norm,mapped_pred"
        assert len(scatter) == len(desk_corpus["manifest"]) + 1


class TestAblate:
    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # eta mode skips stages
    def test_all_ones_dict_makes_theta_equal_gamma(self, runner, graph_args,
                                                   desk_corpus, tmp_path):
        from ciqa import ConfounderDictionary
        ones = ConfounderDictionary.all_ones("tiny_vgg", (8, 12, 16, 20, 24))
        # eta of an all-ones dict is empty; give it one channel to avoid that
        ones.weights[0][0] = 0.0
        dict_path = tmp_path / "ones.ciqa"
        save_dictionary(ones, dict_path)
        result = runner.invoke(main, ["ablate", "--manifest",
                                      str(desk_corpus["csv"]), *graph_args,
                                      "--dict", str(dict_path),
                                      "--emit", "per-channel"])
        assert result.exit_code == 0, result.output
        table = json.loads(result.output)
        gamma_row, theta_row = table["gamma_causal"], table["theta_all"]
        assert gamma_row["srcc"] == pytest.approx(theta_row["srcc"], abs=0.02)
        partition = table["channel_partition"]
        assert (np.array(partition["gamma_channels"])
                + np.array(partition["eta_channels"])
                == np.array(partition["total_channels"])).all()

    def test_three_rows_reported(self, runner, graph_args, desk_corpus,
                                 dict_file, tmp_path):
        out = tmp_path / "ablation"
        result = runner.invoke(main, ["ablate", "--manifest",
                                      str(desk_corpus["csv"]), *graph_args,
                                      "--dict", str(dict_file), "--out", str(out)])
        assert result.exit_code == 0, result.output
        table = json.loads((out / "ablation.json").read_text())
        assert set(table) >= {"theta_all", "gamma_causal", "eta_complement"}
        for mode in ("theta_all", "gamma_causal", "eta_complement"):
            assert (out / f"scatter_{mode}.csv").exists()


class TestExportMaps:
    def test_zero_intensity_gives_black_maps(self, runner, graph_args,
                                             desk_corpus, tmp_path):
        from PIL import Image
        rec = desk_corpus["manifest"].records[0]
        ispec = tmp_path / "zero.json"
        ispec.write_text(json.dumps({"kind": "additive_gaussian",
                                     "intensity_grid": [0.0],
                                     "draws_per_intensity": 1,
                                     "master_seed": 0}))
        out = tmp_path / "maps"
        result = runner.invoke(main, ["export-maps", rec.ref_path, rec.dist_path,
                                      *graph_args, "--intervention", str(ispec),
                                      "--stages", "1", "--out", str(out)])
        assert result.exit_code == 0, result.output
        files = sorted(out.glob("*.png"))
        assert len(files) == 8  # stage1 channels
        for f in files:
            assert np.asarray(Image.open(f)).max() == 0

    def test_file_count_matches_selected_stages(self, runner, graph_args,
                                                desk_corpus, tmp_path):
        rec = desk_corpus["manifest"].records[0]
        out = tmp_path / "maps"
        result = runner.invoke(main, ["export-maps", rec.ref_path, rec.dist_path,
                                      *graph_args, "--stages", "2,4,5",
                                      "--seed", "1", "--out", str(out)])
        assert result.exit_code == 0, result.output
        files = list(out.glob("*.png"))
        assert len(files) == 12 + 20 + 24  # stages 2, 4, 5 channel counts

    def test_bad_stage_exits_2(self, runner, graph_args, desk_corpus, tmp_path):
        rec = desk_corpus["manifest"].records[0]
        result = runner.invoke(main, ["export-maps", rec.ref_path, rec.dist_path,
                                      *graph_args, "--stages", "9",
                                      "--out", str(tmp_path / "maps")])
        assert result.exit_code == 2


class TestExportScatterAndCorpus:
    def test_export_scatter(self, runner, graph_args, desk_corpus, dict_file,
                            tmp_path):
        out = tmp_path / "scatter.csv"
        result = runner.invoke(main, ["export-scatter", "--manifest",
                                      str(desk_corpus["csv"]), *graph_args,
                                      "--mode", "gamma", "--dict", str(dict_file),
                                      "--out", str(out)])
        assert result.exit_code == 0, result.output
        lines = out.read_text().splitlines()
        assert len(lines) == len(desk_corpus["manifest"]) + 1

    def test_corpus_command(self, runner, tmp_path):
        out = tmp_path / "corpus"
        result = runner.invoke(main, ["corpus", "--out", str(out), "--refs", "2",
                                      "--size", "48", "--levels", "2",
                                      "--kinds", "additive_noise"])
        assert result.exit_code == 0, result.output
        assert (out / "manifest.csv").exists()
        from ciqa import datasets as ds
        manifest = ds.load_csv_manifest(out / "manifest.csv")
        assert len(manifest) == 4
