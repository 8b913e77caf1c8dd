import copy
import csv
import io
import json

import numpy as np
import pytest
from PIL import Image

from convbeam import formats
from convbeam.arrays import make_upa, named_sparse
from convbeam.cli import main
from test_experiment import TINY


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


def _csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_array_generate_and_inspect(tmp_path, capsys):
    out = tmp_path / "n.json"
    assert main(["array", "generate", "--named", "nested", "--preset", "II", "-o", str(out), "--plot", str(tmp_path / "n.png")]) == 0
    assert formats.load_array(out) == named_sparse("nested", preset="II")
    assert (tmp_path / "n.png").stat().st_size > 0
    assert main(["array", "inspect", str(out)]) == 0
    rows = _csv(capsys.readouterr().out)
    assert sum(int(r["count"]) for r in rows) == 169**2


def test_array_validate_and_fractal(tmp_path, capsys):
    gen = tmp_path / "g.json"
    formats.save_array(make_upa(1, 1), gen)
    assert main(["array", "fractal", str(gen), "--order", "2", "-o", str(tmp_path / "f.json")]) == 0
    assert len(formats.load_array(tmp_path / "f.json")) == 81
    capsys.readouterr()
    plus = tmp_path / "p.json"
    formats.save_array(named_sparse("plus"), plus)
    assert main(["array", "validate", str(plus)]) == 0
    props = {r["property"]: r["value"] for r in _csv(capsys.readouterr().out)}
    assert props == {"elements": "61", "coarray_elements": "1021", "symmetric": "true",
                     "full_coarray": "false", "sparse_wrt_reference": "true"}


def test_beampattern_csv_and_image(tmp_path, capsys):
    arr = tmp_path / "u.json"
    formats.save_array(make_upa(3, 3), arr)
    img = tmp_path / "bp.pgm"
    assert main(["beampattern", "--array", str(arr), "--method", "coba", "--step-deg", "1", "--image", str(img),
                 "--plot", str(tmp_path / "cuts.png")]) == 0
    rows = _csv(capsys.readouterr().out)
    assert len(rows) == 181 * 3
    assert max(float(r["magnitude_db"]) for r in rows) == 0.0
    im = Image.open(img)
    assert im.mode == "L" and im.size == (181, 3)


def test_simulate_beamform_metrics_render(tmp_path, tiny, capsys):
    cube = tmp_path / "c.iqc"
    assert main(["simulate", "--config", str(tiny), "--out", str(cube)]) == 0
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps(TINY["grid"]))
    arr = tmp_path / "plus.json"
    formats.save_array(named_sparse("plus", 3), arr)
    vol = tmp_path / "v.bvol"
    assert main(["beamform", "--method", "scoba", "--array", str(arr), "--grid", str(grid), "--in", str(cube),
                 "--out", str(vol), "--workers", "2"]) == 0
    capsys.readouterr()
    assert main(["metrics", "--in", str(vol)]) == 0
    row = _csv(capsys.readouterr().out)[0]
    assert row["method"] == "SCOBA3D" and row["elements"] == "13" and float(row["FWHM_x_mm"]) > 0
    assert main(["render", "--in", str(vol), "--out", str(tmp_path / "b.png"), "--dynamic-range-db", "40"]) == 0
    im = np.asarray(Image.open(tmp_path / "b.png"))
    assert im.dtype == np.uint8 and im.max() == 255 and im.shape == (21, 21)


def test_run_subcommand_and_output_env(tmp_path, tiny, monkeypatch, capsys):
    monkeypatch.setenv("CONVBEAM_OUTPUT_DIR", str(tmp_path / "env"))
    monkeypatch.setenv("CONVBEAM_WORKERS", "2")
    assert main(["run", str(tiny), "--no-figures"]) == 0
    assert (tmp_path / "env" / "tiny" / "manifest.json").exists()
    assert [r["label"] for r in _csv(capsys.readouterr().out)] == ["DAS", "COBA3D", "plus"]


def test_compare_subcommand(tmp_path, monkeypatch, capsys):
    paths = []
    for name, bf in (("das", {"method": "das"}), ("coba", {"method": "coba"})):
        doc = copy.deepcopy(TINY)
        doc.update(name=name, beamformers=[bf])
        p = tmp_path / f"{name}.json"
        p.write_text(json.dumps(doc))
        paths.append(str(p))
    assert main(["compare", *paths, "--output-dir", str(tmp_path / "cmp"), "--workers", "1"]) == 0
    rows = _csv(capsys.readouterr().out)
    assert float(rows[1]["FWHM_x_ratio"]) < 1.0


def test_bench_subcommand(tmp_path, capsys):
    assert main(["bench", "--sizes", "3", "5", "--repeats", "1", "--batch", "2", "--output-dir", str(tmp_path)]) == 0
    assert (tmp_path / "bench.csv").exists() and (tmp_path / "bench.png").exists()
    assert len(_csv(capsys.readouterr().out)) == 2


def test_exit_codes(tmp_path, tiny, capsys):
    assert main(["run", str(tmp_path / "missing.json")]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["compare", str(tiny)]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", str(bad)]) == 1
    doc = copy.deepcopy(TINY)
    doc["grid"] = {"x_angle_deg": [0.0], "depth_m": {"start": 0.05, "stop": 0.051, "num": 3}}
    failing = tmp_path / "fail.json"
    failing.write_text(json.dumps(doc))
    assert main(["run", str(failing), "--output-dir", str(tmp_path / "o")]) == 2
    assert "render" in capsys.readouterr().err
    (tmp_path / "junk.iqc").write_bytes(b"JUNK")
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps(TINY["grid"]))
    assert main(["beamform", "--method", "das", "--grid", str(grid), "--in", str(tmp_path / "junk.iqc"),
                 "--out", str(tmp_path / "v.bvol")]) == 2
