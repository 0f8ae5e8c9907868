import json

import numpy as np
import pytest

from stylediff.cli import run
from stylediff.storage import load_dataset

# a configuration small enough for CLI round trips in seconds
TINY_INI = """
[data]
length = 16
features = 2
samples = 30

[transform]
embedding = 4
delay = 2
width = 8

[stl]
period = 8

[diffusion]
steps = 4
base_channels = 8
channel_multipliers = 1,2
epochs = 2
batch_size = 16

[guidance]
layers = 1
model_dim = 8
heads = 2
epochs = 2
batch_size = 16

[evaluation]
classifier_epochs = 2
predictor_epochs = 2
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ini = root / "run.ini"
    ini.write_text(TINY_INI)
    base = ["--config", str(ini), "--output-dir", str(root)]
    assert run(base + ["gen-data", "--out", "real.dsds"]) == 0
    assert (
        run(base + ["train-backbone", "--data", str(root / "real.dsds"), "--out", "bb.dsdf"]) == 0
    )
    assert (
        run(
            base
            + [
                "train-guidance",
                "--data",
                str(root / "real.dsds"),
                "--backbone",
                str(root / "bb.dsdf"),
                "--out-trend",
                "gt.dsdf",
                "--out-seasonal",
                "gs.dsdf",
            ]
        )
        == 0
    )
    return root, base


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as info:
        run(["frobnicate"])
    assert info.value.code == 2


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as info:
        run(["gen-data", "--out", "x.dsds", "--bogus", "1"])
    assert info.value.code == 2


def test_gen_data_artifacts(workdir):
    root, _ = workdir
    values, state = load_dataset(root / "real.dsds")
    assert values.shape == (30, 16, 2)
    sidecar = json.loads((root / "real.dsds.provenance.json").read_text())
    assert sidecar["command"] == "gen-data"
    assert "config_digest" in sidecar and "seed" in sidecar


def test_generate_guided_is_byte_deterministic(workdir):
    root, base = workdir
    cmd = base + [
        "--seed",
        "7",
        "generate",
        "--backbone",
        str(root / "bb.dsdf"),
        "--data",
        str(root / "real.dsds"),
        "--guidance-trend",
        str(root / "gt.dsdf"),
        "--guidance-seasonal",
        str(root / "gs.dsdf"),
        "--count",
        "24",
    ]
    assert run(cmd + ["--out", "gen_a.dsds"]) == 0
    assert run(cmd + ["--out", "gen_b.dsds"]) == 0
    assert (root / "gen_a.dsds").read_bytes() == (root / "gen_b.dsds").read_bytes()
    prov_a = json.loads((root / "gen_a.dsds.provenance.json").read_text())
    prov_b = json.loads((root / "gen_b.dsds.provenance.json").read_text())
    assert prov_a["style_sources"] == prov_b["style_sources"]
    assert prov_a["mode"] == "guided"


def test_generate_different_seed_differs(workdir):
    root, base = workdir
    cmd = [
        "generate",
        "--backbone",
        str(root / "bb.dsdf"),
        "--data",
        str(root / "real.dsds"),
        "--guidance-trend",
        str(root / "gt.dsdf"),
        "--guidance-seasonal",
        str(root / "gs.dsdf"),
        "--count",
        "2",
    ]
    assert run(base + ["--seed", "1"] + cmd + ["--out", "s1.dsds"]) == 0
    assert run(base + ["--seed", "2"] + cmd + ["--out", "s2.dsds"]) == 0
    a, _ = load_dataset(root / "s1.dsds")
    b, _ = load_dataset(root / "s2.dsds")
    assert not np.array_equal(a, b)


def test_generate_unguided(workdir):
    root, base = workdir
    assert (
        run(
            base
            + [
                "generate",
                "--unguided",
                "--backbone",
                str(root / "bb.dsdf"),
                "--count",
                "3",
                "--out",
                "ug.dsds",
            ]
        )
        == 0
    )
    values, _ = load_dataset(root / "ug.dsds")
    assert values.shape == (3, 16, 2)


def test_generate_guided_missing_inputs_is_validation_error(workdir):
    root, base = workdir
    code = run(
        base + ["generate", "--backbone", str(root / "bb.dsdf"), "--out", "x.dsds"]
    )
    assert code == 1


def test_style_index_pins_provenance(workdir):
    root, base = workdir
    assert (
        run(
            base
            + [
                "generate",
                "--backbone",
                str(root / "bb.dsdf"),
                "--data",
                str(root / "real.dsds"),
                "--guidance-trend",
                str(root / "gt.dsdf"),
                "--guidance-seasonal",
                str(root / "gs.dsdf"),
                "--count",
                "3",
                "--style-index",
                "5",
                "--out",
                "pin.dsds",
            ]
        )
        == 0
    )
    prov = json.loads((root / "pin.dsds.provenance.json").read_text())
    assert prov["style_indices"] == [5, 5, 5]


def test_evaluate_writes_full_report(workdir):
    root, base = workdir
    assert (
        run(
            base
            + [
                "evaluate",
                "--real",
                str(root / "real.dsds"),
                "--generated",
                str(root / "gen_a.dsds"),
                "--out",
                "report.txt",
                "--csv-out",
                "report.csv",
            ]
        )
        == 0
    )
    text = (root / "report.txt").read_text()
    for key in ("disc", "pred", "kl", "js", "wass", "ks"):
        assert f"{key} = " in text
    csv_lines = (root / "report.csv").read_text().strip().splitlines()
    assert csv_lines[0].startswith("disc,pred,kl,js,wass,ks")
    assert len(csv_lines) == 2


def test_export_plots(workdir):
    root, base = workdir
    assert (
        run(
            base
            + [
                "export-plots",
                "--real",
                str(root / "real.dsds"),
                "--generated",
                str(root / "gen_a.dsds"),
                "--out",
                "pca.csv",
            ]
        )
        == 0
    )
    lines = (root / "pca.csv").read_text().strip().splitlines()
    assert lines[0] == "x,y,label"
    assert len(lines) == 1 + 30 + 24
    assert lines[1].endswith(",real") and lines[-1].endswith(",generated")


def test_ingest_command(workdir, tmp_path):
    root, base = workdir
    csv_path = tmp_path / "raw.csv"
    csv_path.write_text("\n".join(f"{i},{i * 2}" for i in range(40)))
    assert (
        run(base + ["ingest", "--csv", str(csv_path), "--out", "ingested.dsds"]) == 0
    )
    values, state = load_dataset(root / "ingested.dsds")
    assert values.shape == ((40 - 16) + 1, 16, 2)
    assert state.maximum[0] == 39.0


def test_missing_input_file_is_categorized_error(workdir):
    root, base = workdir
    code = run(base + ["train-backbone", "--data", str(root / "nope.dsds"), "--out", "x.dsdf"])
    assert code == 1
