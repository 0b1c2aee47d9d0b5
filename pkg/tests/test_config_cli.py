import pytest
import yaml

from seqtag.cli import main
from seqtag.config import apply_overrides, build_run_config, load_yaml, split_search_section
from seqtag.corpus import corpus_to_conll
from seqtag.exceptions import ConfigError

from conftest import synthetic_bio_corpus


def write_corpus(path, corpus):
    path.write_text(corpus_to_conll(corpus), encoding="utf-8")
    return str(path)


@pytest.fixture
def workspace(tmp_path):
    corpus = synthetic_bio_corpus(n_sentences=12, seed=4)
    train = write_corpus(tmp_path / "train.conll", corpus)
    dev = write_corpus(tmp_path / "dev.conll", synthetic_bio_corpus(n_sentences=4, seed=5))
    test = write_corpus(tmp_path / "test.conll", synthetic_bio_corpus(n_sentences=4, seed=6))
    config = {
        "training": {
            "epochs": 2,
            "batch_size": 4,
            "seed": 1,
            "main_task": "tag",
            "optimizer": {"kind": "adam", "learning_rate": 0.01},
        },
        "tasks": [
            {
                "name": "tag",
                "train": train,
                "dev": dev,
                "test": test,
                "token_column": 0,
                "label_column": 1,
            }
        ],
        "architecture": {"cell": "gru", "shared_layers": [6]},
        "embeddings": {"word_dim": 6},
        "output": {"dir": str(tmp_path / "out")},
    }
    config_path = tmp_path / "run.yaml"
    config_path.write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    return tmp_path, config_path, config


def test_build_run_config_happy_path(workspace):
    _, config_path, _ = workspace
    run_config = build_run_config(load_yaml(config_path))
    assert run_config.training.epochs == 2
    assert run_config.network.cell == "gru"
    assert run_config.task_files[0].label_column == 1


def test_unknown_key_rejected_with_location(workspace):
    _, _, config = workspace
    config["training"]["optimzer"] = {}
    with pytest.raises(ConfigError, match="training.optimzer"):
        build_run_config(config)


def test_unknown_metric_rejected(workspace):
    _, _, config = workspace
    config["evaluation"] = {"metrics": ["accuracy", "bogus"]}
    with pytest.raises(ConfigError, match="bogus"):
        build_run_config(config)


def test_main_task_must_be_declared(workspace):
    _, _, config = workspace
    config["training"]["main_task"] = "missing"
    with pytest.raises(ConfigError):
        build_run_config(config)


def test_apply_overrides_typed():
    raw = {"training": {"epochs": 2, "seed": 0}, "tasks": []}
    out = apply_overrides(raw, ["training.epochs=7", "training.seed=3"])
    assert out["training"]["epochs"] == 7
    assert raw["training"]["epochs"] == 2  # original untouched


def test_apply_overrides_bad_path():
    with pytest.raises(ConfigError):
        apply_overrides({"a": {}}, ["a.b.c=1"])


def test_split_search_section():
    raw = {
        "training": {"epochs": "${e}"},
        "search": {"trials": 3, "variables": {"e": {"kind": "discrete", "start": 1, "end": 5}}},
    }
    search, template = split_search_section(raw)
    assert search["trials"] == 3
    assert "search" not in template
    with pytest.raises(ConfigError):
        split_search_section({"training": {}})


# -- CLI end to end --------------------------------------------------------------------


def test_cli_train_predict_evaluate_roundtrip(workspace, capsys):
    tmp_path, config_path, config = workspace
    out_dir = tmp_path / "out"

    assert main(["train", str(config_path), "--quiet"]) == 0
    captured = capsys.readouterr()
    checkpoint = out_dir / "model.ckpt"
    assert checkpoint.exists()
    assert (out_dir / "train.log").exists()
    log_lines = (out_dir / "train.log").read_text().strip().splitlines()
    assert len(log_lines) == 2  # one per epoch
    assert all(len(line.split("\t")) == 4 for line in log_lines)

    pred_path = tmp_path / "pred.conll"
    assert main(
        ["predict", "--model", str(checkpoint), "--input", config["tasks"][0]["test"],
         "--output", str(pred_path)]
    ) == 0
    pred_text = pred_path.read_text()
    first_line = pred_text.splitlines()[0].split("\t")
    assert len(first_line) == 3  # surface, gold (preserved), predicted

    assert main(
        ["evaluate", "--model", str(checkpoint), "--input", config["tasks"][0]["test"],
         "--task", "tag", "--metrics", "accuracy,f1"]
    ) == 0
    report = capsys.readouterr().out.strip().splitlines()
    assert report[0].startswith("accuracy\t")
    assert report[1].startswith("f1\t")

    assert main(
        ["evaluate", "--predictions", str(pred_path), "--label-column", "1",
         "--pred-column", "2", "--metrics", "accuracy"]
    ) == 0


def test_cli_rerun_same_seed_is_deterministic(workspace, capsys):
    tmp_path, config_path, _ = workspace
    assert main(["train", str(config_path), "--quiet", "--output", str(tmp_path / "a")]) == 0
    capsys.readouterr()
    assert main(["train", str(config_path), "--quiet", "--output", str(tmp_path / "b")]) == 0
    capsys.readouterr()
    a = (tmp_path / "a" / "model.ckpt").read_bytes()
    b = (tmp_path / "b" / "model.ckpt").read_bytes()
    assert a == b


def test_cli_missing_train_file_exits_2(workspace, capsys):
    tmp_path, config_path, config = workspace
    config["tasks"][0]["train"] = str(tmp_path / "absent.conll")
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump(config), encoding="utf-8")
    code = main(["train", str(bad), "--quiet"])
    assert code == 2
    assert not (tmp_path / "out" / "model.ckpt").exists()


def test_cli_bad_config_exits_1(workspace):
    tmp_path, _, config = workspace
    config["architecture"]["cell"] = "transformer"
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump(config), encoding="utf-8")
    assert main(["train", str(bad), "--quiet"]) == 1


def test_cli_unknown_metric_exits_1(workspace):
    tmp_path, config_path, config = workspace
    assert main(["train", str(config_path), "--quiet"]) == 0
    code = main(
        ["evaluate", "--model", str(tmp_path / "out" / "model.ckpt"),
         "--input", config["tasks"][0]["test"], "--metrics", "nope"]
    )
    assert code == 1


def test_cli_set_override(workspace, capsys):
    tmp_path, config_path, _ = workspace
    assert main(
        ["train", str(config_path), "--quiet", "--set", "training.epochs=1",
         "--output", str(tmp_path / "o1")]
    ) == 0
    capsys.readouterr()
    log_lines = (tmp_path / "o1" / "train.log").read_text().strip().splitlines()
    assert len(log_lines) == 1


def test_cli_stats(tmp_path, capsys):
    corpus_path = tmp_path / "c.conll"
    corpus_path.write_text("a\tX\nb\tY\nc\tX\nd\tZ\n\ne\tW\n", encoding="utf-8")
    assert main(["stats", str(corpus_path)]) == 0
    out = capsys.readouterr().out.splitlines()
    header, row = out[0].split("\t"), out[1].split("\t")
    assert header == ["file", "docs", "tokens", "labels", "entropy", "kurtosis"]
    assert row[1] == "2" and row[2] == "5" and row[3] == "4"


def test_cli_stats_single_label_kurtosis_flagged(tmp_path, capsys):
    corpus_path = tmp_path / "c.conll"
    corpus_path.write_text("a\tX\nb\tX\n", encoding="utf-8")
    assert main(["stats", str(corpus_path)]) == 0
    row = capsys.readouterr().out.splitlines()[1]
    assert "undefined" in row
    assert "\t0.000000\t" in row  # entropy 0


def test_cli_derive_subtasks(tmp_path, capsys):
    src = tmp_path / "am.conll"
    src.write_text(
        "Since\tO\nit\tB:P:1:Supp\nkilled\tI:P:1:Supp\ntourism\tB:C:⊥:For\n",
        encoding="utf-8",
    )
    out = tmp_path / "derived.conll"
    assert main(["derive-subtasks", "--input", str(src), "--output", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    cells = lines[1].split("\t")
    # surface, original, ACS, ACI, ARS, ARI
    assert cells == ["it", "B:P:1:Supp", "B-Arg", "B-P", "B-Rel", "B-P:Supp"]


def test_cli_postprocess_am(tmp_path):
    src = tmp_path / "raw.conll"
    src.write_text("a\tO\nb\tI:P:1:Supp\nc\tB:C:⊥:For\n", encoding="utf-8")
    out = tmp_path / "fixed.conll"
    assert main(["postprocess", "--input", str(src), "--variant", "am",
                 "--output", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[1].split("\t")[1] == "B:P:1:Supp"


def test_cli_postprocess_bio_variants(tmp_path, capsys):
    src = tmp_path / "raw.conll"
    src.write_text("a\tO\nb\tI-X\n", encoding="utf-8")
    assert main(["postprocess", "--input", str(src), "--variant", "to_begin"]) == 0
    assert "B-X" in capsys.readouterr().out
    assert main(["postprocess", "--input", str(src), "--variant", "to_outside"]) == 0
    out = capsys.readouterr().out
    assert "I-X" not in out and "B-X" not in out


def test_cli_predict_unlabeled_input(workspace, tmp_path, capsys):
    ws_tmp, config_path, _ = workspace
    assert main(["train", str(config_path), "--quiet"]) == 0
    capsys.readouterr()
    unlabeled = tmp_path / "plain.conll"
    unlabeled.write_text("alpha\nthe\n\nbeta\n", encoding="utf-8")
    assert main(
        ["predict", "--model", str(ws_tmp / "out" / "model.ckpt"), "--input", str(unlabeled)]
    ) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out[0].split("\t")) == 2  # surface + prediction only


def test_cli_results_env_var(workspace, monkeypatch, tmp_path, capsys):
    _, config_path, _ = workspace
    root = tmp_path / "global_results"
    monkeypatch.setenv("SEQTAG_RESULTS", str(root))
    assert main(["train", str(config_path), "--quiet", "--output", "exp"]) == 0
    capsys.readouterr()
    assert (root / "exp" / "model.ckpt").exists()


def test_cli_help_lists_flags(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--set", "--output", "--quiet"):
        assert flag in out


def test_cli_usage_error_exits_1():
    assert main(["predict", "--model"]) == 1


def am_fixture_text():
    rows = [
        ("Since", "O"),
        ("it", "B:P:1:Supp"),
        ("killed", "I:P:1:Supp"),
        ("lives", "I:P:1:Supp"),
        ("tourism", "B:C:⊥:For"),
        ("threatened", "I:C:⊥:For"),
        (".", "O"),
    ]
    return "\n".join(f"{w}\t{l}" for w, l in rows) + "\n"


def test_cli_predict_am_postprocess_yields_valid_structure(tmp_path, capsys):
    train = tmp_path / "am.conll"
    train.write_text(am_fixture_text(), encoding="utf-8")
    config = {
        "training": {"epochs": 2, "batch_size": 2, "seed": 0, "main_task": "am"},
        "tasks": [{"name": "am", "train": str(train)}],
        "architecture": {"cell": "simple", "shared_layers": [4]},
        "embeddings": {"word_dim": 4},
        "output": {"dir": str(tmp_path / "amout")},
    }
    cfg = tmp_path / "am.yaml"
    cfg.write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    assert main(["train", str(cfg), "--quiet"]) == 0
    capsys.readouterr()
    out = tmp_path / "am_pred.conll"
    assert main(
        ["predict", "--model", str(tmp_path / "amout" / "model.ckpt"), "--input", str(train),
         "--output", str(out), "--postprocess", "am"]
    ) == 0
    from seqtag.labels import components_from_labels, parse_am_sequence, rel_to_abs_links

    predicted = [line.split("\t")[2] for line in out.read_text().strip().splitlines()]
    comps = rel_to_abs_links(components_from_labels(parse_am_sequence(predicted)))
    for k, comp in enumerate(comps, start=1):
        assert comp.target is None or (comp.target != k and 1 <= comp.target <= len(comps))


def test_cli_evaluate_overlap_profile(tmp_path, capsys):
    pred = tmp_path / "preds.conll"
    lines = [
        "w\tO\tO",
        "w\tB:P:1:Supp\tB:P:1:Supp",
        "w\tI:P:1:Supp\tI:P:1:Supp",
        "w\tB:C:⊥:For\tB:C:⊥:For",
    ]
    pred.write_text("\n".join(lines) + "\n", encoding="utf-8")
    profile = tmp_path / "profile.csv"
    assert main(
        ["evaluate", "--predictions", str(pred), "--metrics", "c_f1_50",
         "--overlap-profile", str(profile)]
    ) == 0
    rows = profile.read_text().strip().splitlines()
    assert rows[0] == "length,overlap"
    assert rows[1:] == ["2,2", "1,1"]


def test_cli_evaluate_perfect_am_prediction_scores_one(tmp_path, capsys):
    pred = tmp_path / "preds.conll"
    labels = [l.split("\t")[1] for l in am_fixture_text().strip().splitlines()]
    lines = [f"w\t{l}\t{l}" for l in labels]
    pred.write_text("\n".join(lines) + "\n", encoding="utf-8")
    assert main(
        ["evaluate", "--predictions", str(pred),
         "--metrics", "c_f1_50,c_f1_100,r_f1_50,r_f1_100"]
    ) == 0
    report = dict(line.split("\t") for line in capsys.readouterr().out.strip().splitlines())
    assert all(float(report[m]) == 1.0 for m in ("c_f1_50", "c_f1_100", "r_f1_50", "r_f1_100"))


def test_cli_evaluate_g2p_strips_symbols(tmp_path, capsys):
    pred = tmp_path / "g2p.conll"
    rows = [
        ("e", "E", "E"),
        ("x", "g_z", "g_z"),
        ("i", "ε", "ε"),
        ("t", "t", "d"),
    ]
    pred.write_text("\n".join("\t".join(r) for r in rows) + "\n", encoding="utf-8")
    assert main(
        ["evaluate", "--predictions", str(pred),
         "--metrics", "wacc,edit_distance_mean,edit_distance_median"]
    ) == 0
    report = dict(line.split("\t") for line in capsys.readouterr().out.strip().splitlines())
    # "E g z t" vs "E g z d": not equal, one substitution after stripping
    assert float(report["wacc"]) == 0.0
    assert float(report["edit_distance_mean"]) == 1.0
    assert float(report["edit_distance_median"]) == 1.0


def test_cli_search_smoke(workspace, capsys):
    tmp_path, _, config = workspace
    config["training"]["epochs"] = 1
    config["training"]["early_stopping"] = {"task": "tag", "metric": "accuracy", "patience": 2}
    config["architecture"]["shared_layers"] = ["${units}"]
    config["search"] = {
        "trials": 2,
        "seeds_per_trial": 1,
        "master_seed": 3,
        "variables": {"units": {"kind": "discrete", "start": 4, "end": 6}},
    }
    path = tmp_path / "search.yaml"
    path.write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    out_dir = tmp_path / "searchout"
    assert main(["search", str(path), "--output", str(out_dir)]) == 0
    report = (out_dir / "report.tsv").read_text()
    assert report.startswith("trial\t")
    assert (out_dir / "trial_000" / "config.yaml").exists()
    assert (out_dir / "trial_000" / "best.ckpt").exists()
    assert (out_dir / "trial_000" / "seed_0.log").exists()
