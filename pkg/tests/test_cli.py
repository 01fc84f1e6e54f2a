import csv
import json
import logging

import pytest

from LookupMul.cli import main
from LookupMul.cli.common import CSV_HEADER, ExperimentRow, parse_int_list
from LookupMul.exceptions import InvalidArgument, NumericalFailure
from LookupMul.utils.archive import load_model
from LookupMul.utils.logger import logger
from tests.conftest import real_mnist_root


def _read_csv(path):
    with open(path) as f:
        return list(csv.reader(f))


@pytest.fixture
def trained(mnist_root, tmp_path):
    path = str(tmp_path / "model.itlm")
    assert main(["train", "--data-root", mnist_root, "--epochs", "1", "--out", path]) == 0
    return path


def test_train_writes_archive(mnist_root, tmp_path, capsys):
    path = str(tmp_path / "untrained.itlm")
    assert main(["train", "--data-root", mnist_root, "--epochs", "0", "--seed", "7", "--out", path]) == 0
    model = load_model(path)
    assert model.arch == [784, 30, 30, 30, 10]
    assert model.metadata["seed"] == 7
    assert "test accuracy" in capsys.readouterr().out


def test_missing_dataset_exit_code(tmp_path, capsys):
    code = main(["train", "--data-root", str(tmp_path / "empty"), "--out", str(tmp_path / "m.itlm")])
    assert code == 2


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["transmogrify"])
    assert exc.value.code == 2


def test_numerical_failure_exit_code(mnist_root, tmp_path, monkeypatch):
    def diverge(*args, **kwargs):
        raise NumericalFailure("loss diverged")
    monkeypatch.setattr("LookupMul.cli.commands.train.train", diverge)
    assert main(["train", "--data-root", mnist_root, "--out", str(tmp_path / "m.itlm")]) == 3


def test_ablate_rows_and_manifest(trained, mnist_root, tmp_path):
    out = str(tmp_path / "ablate.csv")
    args = ["ablate", "--model", trained, "--data-root", mnist_root, "--codebooks", "1,2",
            "--opt-steps", "5", "--seed", "3", "--out", out]
    assert main(args) == 0
    rows = _read_csv(out)
    assert tuple(rows[0]) == CSV_HEADER
    assert len(rows) == 1 + 4 * 2
    assert [r[1] for r in rows[1:]] == ["1", "1", "2", "2", "3", "3", "4", "4"]
    assert [r[4] for r in rows[1:]] == ["mse"] * 6 + ["kld"] * 2
    for row in rows[1:]:
        assert row[0] == "ablate" and row[3] == "naive"
        assert 0.0 <= float(row[5]) <= 1.0
    manifest = json.load(open(out + ".run.json"))
    assert manifest["seed"] == 3
    assert manifest["flags"]["codebooks"] == "1,2"
    assert manifest["version"]


def test_ablate_rows_independent_of_jobs(trained, mnist_root, tmp_path):
    outputs = []
    for jobs in ("1", "3"):
        out = str(tmp_path / f"ablate_{jobs}.csv")
        assert main(["ablate", "--model", trained, "--data-root", mnist_root, "--codebooks", "2",
                     "--opt-steps", "5", "--jobs", jobs, "--out", out]) == 0
        outputs.append(_read_csv(out))
    assert outputs[0] == outputs[1]


def test_replace_all_both_modes(trained, mnist_root, tmp_path, capsys):
    out = str(tmp_path / "all.csv")
    assert main(["replace-all", "--model", trained, "--data-root", mnist_root, "--codebooks", "2",
                 "--opt-steps", "5", "--finetune-epochs", "1", "--both", "--out", out]) == 0
    rows = _read_csv(out)[1:]
    assert len(rows) == 2 * 5
    assert {r[0] for r in rows} == {"replace_all", "replace_all_nofinetune"}
    assert sum(r[1] == "all" for r in rows) == 2
    assert {r[4] for r in rows if r[1] in ("1", "2", "3")} == {"mse"}
    assert {r[4] for r in rows if r[1] in ("4", "all")} == {"kld"}
    assert "faster than exact matmul" in capsys.readouterr().out


def test_compare_grid(trained, mnist_root, tmp_path):
    out = str(tmp_path / "compare.csv")
    assert main(["compare", "--model", trained, "--data-root", mnist_root, "--codebooks", "2",
                 "--opt-steps", "5", "--out", out]) == 0
    rows = _read_csv(out)[1:]
    assert len(rows) == 3 * 3
    assert {r[3] for r in rows} == {"naive", "opq", "r2"}
    assert {r[4] for r in rows} == {"prototype", "mse", "kld"}
    assert {r[1] for r in rows} == {"4"}


def test_compare_warns_on_oversized_codebooks(trained, mnist_root, tmp_path):
    messages = []
    handler = logging.Handler()
    handler.emit = lambda record: messages.append(record.getMessage())
    logger.addHandler(handler)
    try:
        out = str(tmp_path / "compare.csv")
        assert main(["compare", "--model", trained, "--data-root", mnist_root, "--codebooks", "2,64",
                     "--partitions", "naive", "--opt-steps", "5", "--out", out]) == 0
    finally:
        logger.removeHandler(handler)
    rows = _read_csv(out)[1:]
    assert {r[2] for r in rows} == {"2"}
    assert any("Skipping C=64" in m for m in messages)


def test_compare_rejects_unknown_partition(trained, mnist_root, tmp_path):
    assert main(["compare", "--model", trained, "--data-root", mnist_root,
                 "--partitions", "naive,random", "--out", str(tmp_path / "c.csv")]) == 2


def test_parse_int_list():
    assert parse_int_list("1, 2,16") == [1, 2, 16]
    with pytest.raises(InvalidArgument):
        parse_int_list("0,4")
    with pytest.raises(InvalidArgument):
        parse_int_list("four")


def test_rows_sort_numerically():
    rows = [ExperimentRow("e", layer, 1, "naive", "kld", 0.5, 0.5, 1.0, 2.0) for layer in ("all", "10", "2")]
    assert [r.layer for r in sorted(rows, key=ExperimentRow.sort_key)] == ["2", "10", "all"]


@pytest.mark.slow
def test_mnist_reference_run(tmp_path):
    root = real_mnist_root()
    if root is None:
        pytest.skip("MNIST files not found under LOOKUPMUL_DATA_ROOT")
    path = str(tmp_path / "mnist.itlm")
    assert main(["train", "--data-root", root, "--seed", "7", "--out", path]) == 0
    assert load_model(path).metadata["test_accuracy"] >= 0.93
