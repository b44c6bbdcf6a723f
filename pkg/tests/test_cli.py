import csv

import pytest

from conftest import make_fake_mnist
from normlab import cli


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_bad_arguments_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["mnist", "--batch-size", "many"])
    assert exc.value.code == 1


def test_bn_batch_one_is_config_error(tmp_path, capsys):
    assert cli.main(["mnist", "--norm", "batch", "--batch-size", "1", "--data", str(tmp_path)]) == 1
    assert "batch size" in capsys.readouterr().err


def test_missing_data_exit_2(tmp_path, capsys):
    assert cli.main(["mnist", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o.csv")]) == 2
    assert "none" in capsys.readouterr().err


def test_mnist_run_and_divergence(tmp_path):
    make_fake_mnist(tmp_path, n_train=120, n_test=40)
    out = tmp_path / "run.csv"
    args = ["mnist", "--norm", "layer", "--batch-size", "60", "--epochs", "1", "--data", str(tmp_path),
            "--train-size", "100", "--out", str(out)]
    assert cli.main(args) == 0
    assert len(rows(out)) == 3
    bad = tmp_path / "bad.csv"
    args = ["mnist", "--norm", "none", "--batch-size", "50", "--epochs", "2", "--lr", "1e300",
            "--data", str(tmp_path), "--train-size", "100", "--out", str(bad)]
    with pytest.warns(RuntimeWarning):
        assert cli.main(args) == 3
    assert rows(bad)[0][0] == "epoch"


def test_geometry_outputs(tmp_path):
    out = tmp_path / "geo.csv"
    assert cli.main(["geometry", "--samples", "200", "--out", str(out)]) == 0
    kl = rows(out)
    assert kl[0] == ["norm_kind", "delta_norm", "kl_exact", "kl_quadratic", "ratio"]
    assert len(kl) == 1 + 4 * 3
    gain = rows(tmp_path / "geo_gain.csv")
    assert gain[0] == ["norm_kind", "input_scale", "metric"] and len(gain) == 1 + 4 * 2


def test_geometry_bad_scales(tmp_path):
    assert cli.main(["geometry", "--delta-scales", "big", "--out", str(tmp_path / "g.csv")]) == 1


def test_invariance_and_stability(tmp_path):
    assert cli.main(["invariance", "--out", str(tmp_path / "inv.csv")]) == 0
    table = rows(tmp_path / "inv.csv")
    assert len(table) == 19 and all(r[-1] == "True" for r in table[1:])
    assert cli.main(["seq-stability", "--steps", "20", "--out", str(tmp_path / "seq.csv")]) == 0
    for variant in ("baseline", "ln-full"):
        trace = rows(tmp_path / f"seq_{variant}.csv")
        assert trace[0] == ["radius", "step", "h_sup_norm", "grad_norm"]
        assert len(trace) == 1 + 4 * 21


def test_repeated_runs_bit_identical(tmp_path):
    for k in (1, 2):
        assert cli.main(["geometry", "--samples", "100", "--out", str(tmp_path / f"g{k}.csv")]) == 0
        assert cli.main(["seq-stability", "--steps", "30", "--out", str(tmp_path / f"s{k}.csv")]) == 0
    assert (tmp_path / "g1.csv").read_bytes() == (tmp_path / "g2.csv").read_bytes()
    assert (tmp_path / "s1_ln-full.csv").read_bytes() == (tmp_path / "s2_ln-full.csv").read_bytes()
