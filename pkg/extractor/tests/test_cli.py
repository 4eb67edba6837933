import json
import subprocess
import sys

import pytest

from conftest import make_color_dataset


def run(*argv, cwd):
    return subprocess.run([sys.executable, "-m", *argv], cwd=cwd,
                          capture_output=True, text=True)


def extract_cmd(*extra):
    return ("apt_extract.cli", "--model", "debug-color-stub") + extra


def test_cli_writes_bank(toy_dataset, tmp_path):
    res = run(*extract_cmd("--data", str(toy_dataset), "--out", "toy.aptb"),
              cwd=tmp_path)
    assert res.returncode == 0, res.stderr
    assert "wrote" in res.stdout
    assert (tmp_path / "toy.aptb").exists()
    manifest = json.loads((tmp_path / "toy.aptb.manifest.json").read_text())
    assert manifest["model"] == "debug-color-stub"


def test_cli_template_error_exits_nonzero(toy_dataset, tmp_path):
    res = run(*extract_cmd("--data", str(toy_dataset), "--out", "t.aptb",
                           "--template", "no slot here"),
              cwd=tmp_path)
    assert res.returncode == 1
    assert "error:" in res.stderr


def test_cli_missing_data_dir(tmp_path):
    res = run(*extract_cmd("--data", "nowhere", "--out", "t.aptb"), cwd=tmp_path)
    assert res.returncode == 1
    assert "error:" in res.stderr


@pytest.fixture(scope="module")
def bigger_bank(tmp_path_factory):
    """A bank with all three splits populated, for the downstream commands."""
    root = tmp_path_factory.mktemp("e2e")
    data = make_color_dataset(root / "shapes", per_class=10)
    res = run(*extract_cmd("--data", str(data), "--out", "shapes.aptb"),
              cwd=root)
    assert res.returncode == 0, res.stderr
    return root, root / "shapes.aptb"


def test_bank_flows_through_consumer_cli(bigger_bank):
    root, bank = bigger_bank

    res = run("apt.cli", "zeroshot", "--bank", str(bank), cwd=root)
    assert res.returncode == 0, res.stderr
    zs = float(res.stdout.strip().splitlines()[-1])
    assert zs > 0.5  # color-named classes align with their images

    res = run("apt.cli", "train", "--bank", str(bank), "--shots", "1",
              "--epochs", "2", "--out", "run", cwd=root)
    assert res.returncode == 0, res.stderr
    report = json.loads((root / "run" / "report.json").read_text())
    assert report["shots"] == 1

    res = run("apt.cli", "uq", "--bank", str(bank), "--mc-samples", "5",
              "--checkpoint", "run/checkpoint-s0.aptc", "--out", "uq",
              cwd=root)
    assert res.returncode == 0, res.stderr
    assert (root / "uq" / "reliability.csv").exists()
    assert (root / "uq" / "conf_unc.csv").exists()
