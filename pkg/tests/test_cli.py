"""End-to-end command-line flows, driven in process through ``main``.

Exit code contract: 0 success, 1 numeric/verification failures
(incompatible checkpoint, blow-up, failed gradient check), 2 usage and
I/O problems (bad flags, bad schema, missing files).
"""

import json

import numpy as np
import pytest

from compol import cli
from compol import dataio as D
from compol import model as M
from compol import training as TR


GEN_LV = ["--param", "fine_factor=2", "--param", "horizon=1.0",
          "--param", "dt=0.02"]


@pytest.fixture(scope="module")
def lv_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("lv_data")
    code = cli.main(["gen-data", "--system", "lv", "--n", "6",
                     "--resolution", "32", "--seed", "9", "--out", str(out)]
                    + GEN_LV)
    assert code == 0
    return out


@pytest.fixture(scope="module")
def bz_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("bz_data")
    code = cli.main(["gen-data", "--system", "bz", "--n", "2",
                     "--resolution", "32", "--seed", "1", "--out", str(out),
                     "--param", "fine_factor=1", "--param", "horizon=0.1",
                     "--param", "dt=0.002"])
    assert code == 0
    return out


def experiment_doc(data_dir, out_dir, **model_kw):
    model = dict(processes=2, channels=[1, 1], layers=2, width=8, modes=4,
                 aggregation="gru", mix="add", seed=0)
    model.update(model_kw)
    return {
        "system": {"system": "lv", "fine_factor": 2, "horizon": 1.0, "dt": 0.02},
        "data": {"n_train": 4, "n_test": 2, "resolution": 32, "seed": 9},
        "model": model,
        "train": {"epochs": 2, "batch": 2, "lr": 1e-3, "schedule": "cosine"},
        "paths": {"data": str(data_dir), "out": str(out_dir)},
    }


def write_config(path, doc):
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return str(path)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, lv_data):
    out = tmp_path_factory.mktemp("run_gru")
    cfg = tmp_path_factory.mktemp("cfg") / "exp.json"
    write_config(cfg, experiment_doc(lv_data, out))
    assert cli.main(["train", "--config", str(cfg)]) == 0
    return out


# ---------------------------------------------------------------------------
# gen-data


def test_gen_data_reports_and_is_loadable(lv_data, capsys):
    ds = D.load_dataset(lv_data)
    assert ds.n_samples == 6 and ds.processes == 2
    manifest = D.read_manifest(lv_data / D.MANIFEST_FILENAME)
    assert manifest["system"]["system"] == "lv"
    assert manifest["system"]["fine_factor"] == 2


def test_gen_data_rerun_is_byte_identical(lv_data, tmp_path):
    code = cli.main(["gen-data", "--system", "lv", "--n", "6",
                     "--resolution", "32", "--seed", "9",
                     "--out", str(tmp_path)] + GEN_LV)
    assert code == 0
    for name in (D.DATA_FILENAME, D.MANIFEST_FILENAME):
        assert (tmp_path / name).read_bytes() == (lv_data / name).read_bytes()


def test_gen_data_prints_summary(tmp_path, capsys):
    code = cli.main(["gen-data", "--system", "lv", "--n", "1",
                     "--resolution", "32", "--seed", "0",
                     "--out", str(tmp_path)] + GEN_LV)
    out = capsys.readouterr().out
    assert code == 0
    assert "config_hash=" in out
    assert "process 0 (u)" in out and "process 1 (v)" in out


def test_gen_data_zero_samples(tmp_path):
    code = cli.main(["gen-data", "--system", "lv", "--n", "0",
                     "--resolution", "32", "--seed", "0",
                     "--out", str(tmp_path)] + GEN_LV)
    assert code == 0
    assert D.load_dataset(tmp_path).n_samples == 0


def test_gen_data_bad_overrides_are_usage_errors(tmp_path, capsys):
    base = ["gen-data", "--system", "lv", "--n", "1", "--resolution", "32",
            "--seed", "0", "--out", str(tmp_path)]
    assert cli.main(base + ["--param", "nope=1"]) == 2
    assert cli.main(base + ["--param", "du=-0.5"]) == 2
    assert cli.main(base + ["--param", "malformed"]) == 2
    assert "error:" in capsys.readouterr().err


def test_gen_data_unknown_system_rejected_by_parser(tmp_path):
    with pytest.raises(SystemExit) as info:
        cli.main(["gen-data", "--system", "heat", "--n", "1",
                  "--resolution", "32", "--seed", "0", "--out", str(tmp_path)])
    assert info.value.code == 2


# ---------------------------------------------------------------------------
# train


def test_train_writes_artifacts(run_dir):
    resolved = json.loads((run_dir / cli.CONFIG_FILENAME).read_text())
    assert resolved["model_kind"] == "compol-rnn"
    assert resolved["config_hash"] == cli.experiment_hash(resolved)
    head, epochs = TR.read_run_record(run_dir / cli.RECORD_FILENAME)
    assert head["experiment_hash"] == resolved["config_hash"]
    assert head["model_kind"] == "compol-rnn"
    assert (head["n_train"], head["n_test"]) == (4, 2)
    assert len(epochs) == 2
    model, extra = M.load_checkpoint(run_dir / cli.CHECKPOINT_FILENAME)
    assert extra["experiment_hash"] == resolved["config_hash"]
    assert model.config.aggregation == "gru"


def test_train_rerun_reproduces_artifacts(tmp_path, lv_data, run_dir):
    cfg = write_config(tmp_path / "exp.json",
                       experiment_doc(lv_data, tmp_path / "out"))
    assert cli.main(["train", "--config", cfg]) == 0
    a = (tmp_path / "out" / cli.CHECKPOINT_FILENAME).read_bytes()
    b = (run_dir / cli.CHECKPOINT_FILENAME).read_bytes()
    assert a == b
    assert ((tmp_path / "out" / cli.CONFIG_FILENAME).read_bytes()
            == (run_dir / cli.CONFIG_FILENAME).read_bytes())
    # records agree apart from wall-clock timing
    for name in (cli.RECORD_FILENAME,):
        la = (tmp_path / "out" / name).read_text().splitlines()
        lb = (run_dir / name).read_text().splitlines()
        for xa, xb in zip(la, lb):
            da, db = json.loads(xa), json.loads(xb)
            da.pop("wall_ms", None), db.pop("wall_ms", None)
            assert da == db


def test_train_model_flag_overrides_architecture(tmp_path, lv_data):
    cfg = write_config(tmp_path / "exp.json",
                       experiment_doc(lv_data, tmp_path / "out"))
    assert cli.main(["train", "--config", cfg, "--model", "fno-c"]) == 0
    resolved = json.loads((tmp_path / "out" / cli.CONFIG_FILENAME).read_text())
    assert resolved["model_kind"] == "fno-c"
    assert resolved["model"]["processes"] == 1
    assert resolved["model"]["channels"] == [2]
    _, epochs = TR.read_run_record(tmp_path / "out" / cli.RECORD_FILENAME)
    assert len(epochs[0]["test_err"]) == 2  # still scored per process


def test_train_flags_override_config_paths(tmp_path, lv_data):
    doc = experiment_doc(lv_data, tmp_path / "ignored")
    doc["train"]["epochs"] = 1
    cfg = write_config(tmp_path / "exp.json", doc)
    out = tmp_path / "real"
    assert cli.main(["train", "--config", cfg, "--out", str(out)]) == 0
    assert (out / cli.CHECKPOINT_FILENAME).exists()
    assert not (tmp_path / "ignored").exists()


@pytest.mark.parametrize("mutate,phrase", [
    (lambda d: d.update(extras=1), "unknown keys"),
    (lambda d: d["data"].update(shuffle=True), "unknown keys"),
    (lambda d: d.pop("train"), "missing"),
    (lambda d: d["data"].update(n_train=100), "split needs"),
    (lambda d: d["data"].update(resolution=64), "does not match"),
    (lambda d: d["system"].update(system="bz"), "config system"),
    (lambda d: d["model"].update(width=-3), "model section invalid"),
    (lambda d: d["train"].pop("epochs"), "epochs"),
])
def test_train_config_schema_violations(tmp_path, lv_data, capsys, mutate, phrase):
    doc = experiment_doc(lv_data, tmp_path / "out")
    mutate(doc)
    cfg = write_config(tmp_path / "exp.json", doc)
    assert cli.main(["train", "--config", cfg]) == 2
    assert phrase in capsys.readouterr().err


def test_train_missing_config_file(tmp_path, capsys):
    assert cli.main(["train", "--config", str(tmp_path / "nope.json")]) == 2


# ---------------------------------------------------------------------------
# eval


def test_eval_prints_per_process_table(run_dir, lv_data, capsys):
    code = cli.main(["eval", "--checkpoint",
                     str(run_dir / cli.CHECKPOINT_FILENAME),
                     "--data", str(lv_data)])
    out = capsys.readouterr().out
    assert code == 0
    assert "process 0 (u)" in out
    assert "process 1 (v)" in out
    assert "aggregate" in out


def test_eval_refuses_other_system(run_dir, bz_data, capsys):
    code = cli.main(["eval", "--checkpoint",
                     str(run_dir / cli.CHECKPOINT_FILENAME),
                     "--data", str(bz_data)])
    err = capsys.readouterr().err
    assert code == 1
    assert "data_signature=" in err  # names both hashes
    assert err.count("=") >= 2


def test_eval_refuses_other_resolution(run_dir, tmp_path, capsys):
    code = cli.main(["gen-data", "--system", "lv", "--n", "1",
                     "--resolution", "64", "--seed", "9",
                     "--out", str(tmp_path)] + GEN_LV)
    assert code == 0
    code = cli.main(["eval", "--checkpoint",
                     str(run_dir / cli.CHECKPOINT_FILENAME),
                     "--data", str(tmp_path)])
    assert code == 1


def test_eval_accepts_freshly_drawn_test_set(run_dir, tmp_path):
    # same system, new seed: still statistically compatible
    code = cli.main(["gen-data", "--system", "lv", "--n", "2",
                     "--resolution", "32", "--seed", "777",
                     "--out", str(tmp_path)] + GEN_LV)
    assert code == 0
    assert cli.main(["eval", "--checkpoint",
                     str(run_dir / cli.CHECKPOINT_FILENAME),
                     "--data", str(tmp_path)]) == 0


def test_eval_dumps_error_fields(run_dir, lv_data, tmp_path):
    dump = tmp_path / "errors"
    code = cli.main(["eval", "--checkpoint",
                     str(run_dir / cli.CHECKPOINT_FILENAME),
                     "--data", str(lv_data),
                     "--dump-error-fields", str(dump)])
    assert code == 0
    header, fields = D.read_fields(dump / "error_fields.cmpd")
    assert header["groups"] == ["error"]
    assert header["samples"] == 6
    assert fields[0][0][0].shape == (1, 32)
    assert np.all(fields[0][0][0] >= 0)
    meta = D.read_manifest(dump / D.MANIFEST_FILENAME)
    assert meta["data_signature"] == cli.data_signature(
        D.read_manifest(lv_data / D.MANIFEST_FILENAME))


def test_eval_missing_checkpoint(tmp_path, lv_data):
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "no.ckpt"),
                     "--data", str(lv_data)]) == 2


# ---------------------------------------------------------------------------
# export-plot


def test_export_plot_single_run_curves(run_dir, tmp_path):
    out = tmp_path / "curves.csv"
    assert cli.main(["export-plot", "--run", str(run_dir),
                     "--format", "csv", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == ("epoch,lr,train_loss,test_aggregate,"
                        "test_p0,test_p1,config_hash")
    assert len(lines) == 3  # header + 2 epochs
    resolved = json.loads((run_dir / cli.CONFIG_FILENAME).read_text())
    assert lines[1].endswith(resolved["config_hash"])
    # byte-identical on a second export
    out2 = tmp_path / "curves2.csv"
    cli.main(["export-plot", "--run", str(run_dir),
              "--format", "csv", "--out", str(out2)])
    assert out.read_bytes() == out2.read_bytes()


def test_export_plot_comparison_merges_by_model_and_size(
        run_dir, lv_data, tmp_path, capsys):
    # second run of the same model: same (model, n_train) cell
    cfg = write_config(tmp_path / "exp.json",
                       experiment_doc(lv_data, tmp_path / "again"))
    assert cli.main(["train", "--config", cfg]) == 0
    # and one baseline run for a second row
    cfg2 = write_config(tmp_path / "exp2.json",
                        experiment_doc(lv_data, tmp_path / "base"))
    assert cli.main(["train", "--config", cfg2, "--model", "fno-c"]) == 0
    capsys.readouterr()
    assert cli.main(["export-plot", "--format", "csv",
                     "--run", str(run_dir),
                     "--run", str(tmp_path / "again"),
                     "--run", str(tmp_path / "base")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "model,n_train,runs,mean_err,std_err"
    assert len(lines) == 3
    cells = {tuple(l.split(",")[:3]) for l in lines[1:]}
    assert ("compol-rnn", "4", "2") in cells
    assert ("fno-c", "4", "1") in cells


def test_export_plot_missing_run(tmp_path):
    assert cli.main(["export-plot", "--run", str(tmp_path / "ghost"),
                     "--format", "csv"]) == 2


# ---------------------------------------------------------------------------
# gradcheck


def test_gradcheck_tensor_module(capsys):
    assert cli.main(["gradcheck", "--module", "tensor"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out
