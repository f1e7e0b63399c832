import json
import subprocess
import sys

import numpy as np
import pytest
from helpers import REFERENCE_ROWS, REFERENCE_TAU

from modcrit.cli import main
from modcrit.cli.archive import ArchiveError, load_archive, save_archive
from modcrit.cli.config import ConfigError, ExperimentConfig
from modcrit.cli.csvio import read_csv

BASE = {
    "name": "fcn",
    "seed": 3,
    "architecture": {"preset": "fcn_s"},
    "dataset": {"kind": "blobs", "n_classes": 3, "n_per_class": 40, "shape": [1, 6, 6], "separation": 5.0},
    "optimizer": {"epochs": 4, "lr": 0.05, "batch_size": 32, "weight_decay": 0.0},
    "snapshot_epochs": [1, 2],
    "search": {"n_alpha": 3, "n_sigma": 3, "n_mc": 8},
}


def write_config(path, **changes):
    cfg = json.loads(json.dumps(BASE))
    for k, v in changes.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    path.write_text(json.dumps(cfg))
    return path


def train(tmp_path, name="run", out_name=None, **changes):
    cfg = write_config(tmp_path / f"{name}.json", name=name, **changes)
    out = tmp_path / (out_name or name)
    assert main(["train", str(cfg), "--output", str(out)]) == 0
    return out / "archive"


@pytest.fixture(scope="module")
def archive(tmp_path_factory):
    return train(tmp_path_factory.mktemp("cli"))


def read_tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_missing_field_is_named(tmp_path, capsys):
    cfg = json.loads(json.dumps(BASE))
    del cfg["dataset"]["separation"]
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert main(["train", str(path)]) == 1
    assert "dataset.separation" in capsys.readouterr().err


@pytest.mark.parametrize(
    "change, field",
    [
        ({"seed": "x"}, "seed"),
        ({"architecture": {"preset": "vgg"}}, "architecture.preset"),
        ({"optimizer": {"lr": -1}}, "optimizer"),
        ({"bogus": 1}, "bogus"),
    ],
)
def test_invalid_config_fields(change, field):
    cfg = json.loads(json.dumps(BASE))
    for k, v in change.items():
        if isinstance(v, dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict(cfg)
    assert info.value.field.startswith(field)


def test_config_round_trip():
    cfg = ExperimentConfig.from_dict(BASE)
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg and again.config_hash() == cfg.config_hash()


def test_train_writes_epoch_zero_and_final(archive):
    arc = load_archive(archive)
    assert arc.store.epochs == [0, 1, 2, 4]
    log_meta, log_rows = read_csv(archive.parent / "training_log.csv")
    assert [r["epoch"] for r in log_rows] == ["0", "1", "2", "3", "4"] and log_meta["config_hash"] == arc.config_hash


def test_archive_round_trip_is_bitwise(archive, tmp_path):
    arc = load_archive(archive)
    save_archive(arc.store, tmp_path / "copy", arc.config, arc.config_hash)
    again = load_archive(tmp_path / "copy")
    for e in arc.store.epochs:
        for m in arc.graph.module_ids:
            for k, v in arc.store.module(m, e).items():
                assert again.store.module(m, e)[k].tobytes() == v.tobytes()
    assert read_tree(archive) == read_tree(tmp_path / "copy")


def test_corrupt_archive_rejected(archive, tmp_path):
    arc = load_archive(archive)
    save_archive(arc.store, tmp_path / "bad", arc.config, arc.config_hash)
    blob = next((tmp_path / "bad").rglob("*.bin"))
    blob.write_bytes(blob.read_bytes()[:-8])
    with pytest.raises(ArchiveError):
        load_archive(tmp_path / "bad")
    assert main(["rewind", str(tmp_path / "bad")]) == 1


def test_rerun_is_byte_identical(tmp_path):
    a = train(tmp_path, "a")
    b = train(tmp_path, "a", out_name="b")
    assert read_tree(a) == read_tree(b)


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("MODCRIT_OUTPUT_ROOT", str(tmp_path / "root"))
    cfg = write_config(tmp_path / "c.json", output_dir="rel")
    assert main(["train", str(cfg)]) == 0
    assert (tmp_path / "root" / "rel" / "archive" / "manifest.json").is_file()


def test_rewind_final_column_equals_baseline(archive, tmp_path):
    out = tmp_path / "rw.csv"
    assert main(["rewind", str(archive), "--out", str(out)]) == 0
    meta, rows = read_csv(out)
    final = [r for r in rows if r["epoch"] == "4"]
    assert len(final) == 3 and all(r["value"] == r["baseline"] for r in final)
    assert {"config_hash", "seed", "tool_version"} <= set(meta)


def test_unknown_module_lists_valid_ids(archive, capsys):
    assert main(["valley", str(archive), "--module", "relu1"]) == 1
    err = capsys.readouterr().err
    assert "fc1, fc2, fc3" in err


def test_path_and_valley(archive, tmp_path):
    assert main(["path", str(archive), "--alphas", "5", "--out", str(tmp_path / "p.csv")]) == 0
    _, prow = read_csv(tmp_path / "p.csv")
    assert [r["alpha"] for r in prow] == ["0.0", "0.25", "0.5", "0.75", "1.0"]
    assert main(["valley", str(archive), "--module", "fc2", "--alphas", "3", "--noise", "2", "--out", str(tmp_path / "v.csv")]) == 0
    _, vrows = read_csv(tmp_path / "v.csv")
    clean = [r for r in vrows if r["draw"] == "-1"]
    assert len(vrows) == 9 and all(float(r["y"]) == 0.0 for r in clean)


def test_spectrum_delta_kernel(tmp_path):
    k = np.zeros((3, 3))
    k[1, 1] = 1.0
    np.save(tmp_path / "k.npy", k)
    out = tmp_path / "s.csv"
    assert main(["spectrum", "--kernel", str(tmp_path / "k.npy"), "--input-size", "5", "--out", str(out)]) == 0
    _, rows = read_csv(out)
    assert len(rows) == 25 and all(float(r["singular_value"]) == pytest.approx(1.0, abs=1e-12) for r in rows)
    assert main(["spectrum", "--kernel", str(tmp_path / "k.npy")]) == 1


def test_spectrum_and_cka_on_archive(archive, tmp_path):
    assert main(["spectrum", str(archive), "--module", "fc1", "--out", str(tmp_path / "s.csv")]) == 0
    assert main(["cka", str(archive), "--module", "fc2", "--probes", "fc1", "fc3", "--out", str(tmp_path / "c.csv")]) == 0
    _, rows = read_csv(tmp_path / "c.csv")
    upstream = [float(r["cka"]) for r in rows if r["probe"] == "fc1"]
    assert upstream == pytest.approx([1.0] * len(upstream), abs=1e-12)


def test_criticality_untrained_is_zero(tmp_path):
    arc = train(tmp_path, "flat", optimizer={"epochs": 0}, snapshot_epochs=[])
    out = tmp_path / "c.csv"
    assert main(["criticality", str(arc), "--epsilon", "1.0", "--out", str(out)]) == 0
    _, curve = read_csv(tmp_path / "c_curve.csv")
    assert float(curve[0]["mu_net"]) == 0.0


def test_criticality_two_epsilons_non_increasing(archive, tmp_path):
    out = tmp_path / "c.csv"
    code = main(["criticality", str(archive), "--epsilon", "0.3", "0.1", "--joint", "--out", str(out)])
    _, curve = read_csv(tmp_path / "c_curve.csv")
    mus = [np.inf if r["mu_net"] == "n/a" else float(r["mu_net"]) for r in curve]
    assert [r["epsilon"] for r in curve] == ["0.1", "0.3"]
    assert mus[0] >= mus[1]
    assert code == (2 if np.isinf(mus).any() else 0)
    _, rows = read_csv(out)
    assert {r["module"] for r in rows} == {"fc1", "fc2", "fc3", "NETWORK", "JOINT"}


def test_criticality_infeasible_exit_code(archive, tmp_path):
    assert main(["criticality", str(archive), "--epsilon", "0.0", "--out", str(tmp_path / "c.csv")]) == 2
    _, curve = read_csv(tmp_path / "c_curve.csv")
    assert curve[0]["mu_net"] == "n/a"


def test_rank_identical_archives_gives_na(archive, tmp_path, capsys):
    out = tmp_path / "r.csv"
    assert main(["rank", str(archive), str(archive), "--out", str(out)]) == 0
    meta, rows = read_csv(out)
    tau = rows[-1]
    assert tau["network"] == "kendall_tau"
    assert all(tau[m] == "n/a" for m in ("PFN", "PSN", "DtI", "NoP", "SoSP", "PacBayes", "NetCriticality"))
    assert "tau-a" in meta["kendall_tau"]


def test_rank_reference_table(tmp_path):
    cols = ["network", "GE", "PFN", "PSN", "DtI", "NoP", "SoSP", "PacBayes", "NetCriticality"]
    lines = [",".join(cols)] + [",".join([r[0]] + [repr(float(v)) for v in r[1:]]) for r in REFERENCE_ROWS]
    (tmp_path / "t.csv").write_text("\n".join(lines) + "\n")
    out = tmp_path / "r.csv"
    assert main(["rank", "--table", str(tmp_path / "t.csv"), "--out", str(out)]) == 0
    _, rows = read_csv(out)
    tau = {k: float(v) for k, v in rows[-1].items() if k in REFERENCE_TAU}
    # PFN, PSN and PacBayes agree with the published row to two decimals
    for m in ("PFN", "PSN", "PacBayes"):
        assert round(tau[m], 2) == REFERENCE_TAU[m]
    assert len(rows) == 10


def test_rank_measure_proportional_to_ge(tmp_path):
    lines = ["network,GE,M", "a,0.1,2.0", "b,0.3,6.0", "c,0.2,4.0"]
    (tmp_path / "t.csv").write_text("\n".join(lines) + "\n")
    assert main(["rank", "--table", str(tmp_path / "t.csv"), "--out", str(tmp_path / "r.csv")]) == 0
    _, rows = read_csv(tmp_path / "r.csv")
    assert float(rows[-1]["M"]) == 1.0


def test_rank_refuses_incompatible_datasets(archive, tmp_path, capsys):
    other = train(tmp_path, "other", dataset={"separation": 2.0})
    assert main(["rank", str(archive), str(other)]) == 1
    assert "incompatible datasets" in capsys.readouterr().err


def test_rank_needs_two_networks(archive):
    assert main(["rank", str(archive)]) == 1


def test_console_script_usage_exit_code():
    res = subprocess.run([sys.executable, "-m", "modcrit.cli.main", "rewind"], capture_output=True, text=True)
    assert res.returncode == 1 and "usage" in res.stderr
