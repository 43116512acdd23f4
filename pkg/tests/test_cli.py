import json

import numpy as np
import pytest

from sparsemine.cli import (
    load_dictionary_bundle,
    load_survey_bundle,
    main,
    save_survey_bundle,
)
from sparsemine.dataio import read_matrix
from sparsemine.gpr_synth import (
    PulseParams,
    Scatterer,
    SurveyLayout,
    TargetSpec,
    generate_survey,
    layout_to_dict,
)


def small_layout(x=12, y=10):
    targets = (
        TargetSpec(1, (3, 3), 2, (Scatterer(1.2, 1.6e-9, 8e-10),
                                  Scatterer(-0.7, 2.2e-9, 5e-10))),
        TargetSpec(2, (8, 6), 2, (Scatterer(0.9, 3.0e-9, 4e-10),)),
    )
    return SurveyLayout(x_cells=x, y_cells=y, targets=targets,
                        clutter_density=1.5, clutter_amplitude=0.3,
                        noise_sigma=0.02, m_samples=96,
                        class_names=("clutter", "big", "small"))


def write_layout(path, layout):
    with open(path, "w") as fh:
        json.dump(layout_to_dict(layout, PulseParams()), fh)


def test_generate_writes_bundle_and_run_json(tmp_path, capsys):
    layout_path = tmp_path / "layout.json"
    write_layout(layout_path, small_layout())
    out = tmp_path / "survey"
    rc = main(["generate", "--layout", str(layout_path), "--seed", "3",
               "--out", str(out)])
    assert rc == 0
    survey, manifest = load_survey_bundle(out)
    assert survey.profiles.shape == (96, 120)
    assert (tmp_path / "survey.run.json").exists()
    text = capsys.readouterr().out
    assert "120 pixels" in text


def test_generate_same_seed_identical(tmp_path):
    layout_path = tmp_path / "layout.json"
    write_layout(layout_path, small_layout())
    for name in ("a", "b"):
        rc = main(["generate", "--layout", str(layout_path), "--seed", "7",
                   "--out", str(tmp_path / name)])
        assert rc == 0
    a = (tmp_path / "a.spmx").read_bytes()
    b = (tmp_path / "b.spmx").read_bytes()
    assert a == b
    ma = json.loads((tmp_path / "a.manifest.json").read_text())
    mb = json.loads((tmp_path / "b.manifest.json").read_text())
    assert ma == mb


def test_generate_default_layout_has_four_classes(tmp_path):
    rc = main(["generate", "--seed", "1", "--out", str(tmp_path / "d")])
    assert rc == 0
    survey, _ = load_survey_bundle(tmp_path / "d")
    assert set(np.unique(survey.labels)) == {0, 1, 2, 3}
    assert survey.class_names == ("clutter", "large", "medium", "small")


def test_generate_invalid_layout_json_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    rc = main(["generate", "--layout", str(bad), "--out", str(tmp_path / "x")])
    assert rc == 2
    assert "invalid layout" in capsys.readouterr().err


def test_missing_out_flag_is_usage_error(tmp_path):
    rc = main(["generate", "--seed", "1"])
    assert rc == 2


def test_unknown_algo_is_usage_error(tmp_path):
    rc = main(["learn", "--algo", "mod", "--train", "x", "--k", "4",
               "--out", str(tmp_path / "o")])
    assert rc == 2


def test_missing_bundle_is_data_error(tmp_path, capsys):
    rc = main(["learn", "--algo", "ksvd", "--train", str(tmp_path / "nope"),
               "--k", "4", "--out", str(tmp_path / "o")])
    assert rc == 3
    assert "data error" in capsys.readouterr().err


@pytest.fixture(scope="module")
def survey_bundles(tmp_path_factory):
    root = tmp_path_factory.mktemp("bundles")
    layout = small_layout()
    train = generate_survey(layout, PulseParams(), seed=11)
    test = generate_survey(layout, PulseParams(), seed=12)
    save_survey_bundle(root / "train", train, {"seed": 11})
    save_survey_bundle(root / "test", test, {"seed": 12})
    return root


def test_learn_all_algorithms_write_reports(tmp_path, survey_bundles):
    for algo, extra in [
        ("ksvd", ["--nt", "2"]),
        ("odl", ["--nt", "1", "--lambda", "0.1"]),
        ("cbwlsu", []),
        ("dominodl", ["--entropy"]),
    ]:
        out = tmp_path / algo
        rc = main(["learn", "--algo", algo, "--train",
                   str(survey_bundles / "train"), "--k", "24", "--ks", "4",
                   "--seed", "2", "--out", str(out)] + extra)
        assert rc == 0, algo
        dictionary, cfg = load_dictionary_bundle(out)
        assert dictionary.atoms.shape == (96, 24)
        report = json.loads((tmp_path / f"{algo}.report.json").read_text())
        assert report["algorithm"] == algo
        assert report["wall_time_s"] > 0
    dom_report = json.loads((tmp_path / "dominodl.report.json").read_text())
    assert "elements_dropped" in dom_report


def test_learn_entropy_flag_sets_sentinel(tmp_path, survey_bundles):
    out = tmp_path / "dom"
    rc = main(["learn", "--algo", "dominodl", "--train",
               str(survey_bundles / "train"), "--k", "16", "--ks", "4",
               "--entropy", "--out", str(out)])
    assert rc == 0
    _, cfg = load_dictionary_bundle(out)
    assert cfg.delta == "entropy"


def test_sweep_reference_row_and_jobs_identical(tmp_path, survey_bundles):
    ref = {"k": 12, "n_t": 1, "k_s": 4, "seed": 3}
    grid = [ref, {"k": 16, "n_t": 1, "k_s": 4, "seed": 3}]
    (tmp_path / "grid.json").write_text(json.dumps(grid))
    (tmp_path / "ref.json").write_text(json.dumps(ref))
    args = ["sweep", "--algo", "ksvd", "--train", str(survey_bundles / "train"),
            "--grid", str(tmp_path / "grid.json"),
            "--reference", str(tmp_path / "ref.json"), "--alpha", "0.05"]
    rc = main(args + ["--jobs", "1", "--out", str(tmp_path / "s1")])
    assert rc == 0
    rc = main(args + ["--jobs", "4", "--out", str(tmp_path / "s4")])
    assert rc == 0
    rows1 = (tmp_path / "s1.csv").read_text().splitlines()
    rows4 = (tmp_path / "s4.csv").read_text().splitlines()
    # Identical up to wall time, which is inherently nondeterministic.
    strip = lambda row: row.rsplit(",", 1)[0]
    assert [strip(r) for r in rows1] == [strip(r) for r in rows4]
    # A sweep at the reference grid point has zero distance to itself.
    header = rows1[0].split(",")
    first = rows1[1].split(",")
    assert float(first[header.index("ks_distance")]) == 0.0


def test_classify_pipeline_outputs(tmp_path, survey_bundles, capsys):
    dict_out = tmp_path / "dict"
    rc = main(["learn", "--algo", "ksvd", "--train",
               str(survey_bundles / "train"), "--k", "32", "--ks", "4",
               "--nt", "3", "--seed", "5", "--out", str(dict_out)])
    assert rc == 0
    out = tmp_path / "cls"
    rc = main(["classify", "--dict", str(dict_out),
               "--train", str(survey_bundles / "train"),
               "--test", str(survey_bundles / "test"),
               "--cv-folds", "3", "--c-grid", "10",
               "--gamma-grid", "0.125", "1.0",
               "--out", str(out)])
    assert rc == 0
    for suffix in (".map.pgm", ".map.csv", ".confusion.csv", ".pcc.json",
                   ".run.json"):
        assert (tmp_path / ("cls" + suffix)).exists(), suffix
    pcc_doc = json.loads((tmp_path / "cls.pcc.json").read_text())
    assert set(pcc_doc) == {"clutter", "big", "small"}
    grid = (tmp_path / "cls.map.csv").read_text().splitlines()
    assert len(grid) == 10 and len(grid[0].split(",")) == 12


def test_classify_keep_fraction_logs_row_count(tmp_path, survey_bundles, capsys):
    dict_out = tmp_path / "dict"
    main(["learn", "--algo", "ksvd", "--train", str(survey_bundles / "train"),
          "--k", "24", "--ks", "4", "--nt", "2", "--seed", "5",
          "--out", str(dict_out)])
    capsys.readouterr()
    out = tmp_path / "cls"
    rc = main(["classify", "--dict", str(dict_out),
               "--train", str(survey_bundles / "train"),
               "--test", str(survey_bundles / "test"),
               "--keep", "0.5", "--seed", "4",
               "--cv-folds", "2", "--c-grid", "10", "--gamma-grid", "0.25",
               "--out", str(out)])
    assert rc == 0
    assert "48 rows kept" in capsys.readouterr().out  # floor(0.5 * 96)


def test_reconstruct_histogram_sums_to_one(tmp_path, survey_bundles):
    dict_out = tmp_path / "dict"
    main(["learn", "--algo", "ksvd", "--train", str(survey_bundles / "train"),
          "--k", "24", "--ks", "4", "--nt", "2", "--seed", "5",
          "--out", str(dict_out)])
    out = tmp_path / "recon"
    rc = main(["reconstruct", "--dict", str(dict_out),
               "--data", str(survey_bundles / "train"),
               "--bins", "8", "--out", str(out)])
    assert rc == 0
    lines = (tmp_path / "recon.csv").read_text().strip().splitlines()
    assert lines[0] == "bin_low,bin_high,mass"
    assert len(lines) == 9  # honors --bins exactly
    mass = sum(float(row.split(",")[2]) for row in lines[1:])
    assert mass == pytest.approx(1.0, abs=1e-12)


def test_survey_bundle_round_trip_preserves_halos(tmp_path):
    layout = small_layout()
    survey = generate_survey(layout, PulseParams(), seed=9)
    save_survey_bundle(tmp_path / "s", survey, {"seed": 9})
    back, manifest = load_survey_bundle(tmp_path / "s")
    assert np.array_equal(back.profiles, survey.profiles)
    assert np.array_equal(back.labels, survey.labels)
    assert len(back.halos) == len(survey.halos)
    for (c1, p1), (c2, p2) in zip(back.halos, survey.halos):
        assert c1 == c2
        assert np.array_equal(p1, p2)
    assert back.class_names == survey.class_names
