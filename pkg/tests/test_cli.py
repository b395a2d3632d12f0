import json
import os
import subprocess
import sys

import numpy as np
import pytest

from cagetwin.errors import FitFailure, InsufficientHfData, NoConvergence, StageFailure
from cagetwin.twin import cli
from cagetwin.twin.bundle import load_bundle
from cagetwin.twin.ingest import IngestResult
from cagetwin.twin.pipeline import TwinServer


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("simulate", "--n", 24, "--seed", 4, "--out", d / "lf.npz", "--hf-out", d / "hf.npz",
               "--metocean-out", d / "met.ndjson") == 0
    assert run("train", "--lf", d / "lf.npz", "--hf", d / "hf.npz", "--seed", 2, "--out", d / "twin.bin") == 0
    return d


def test_topology(tmp_path, capsys):
    assert run("topology", "--compact", "--out", tmp_path / "g.json") == 0
    doc = json.loads((tmp_path / "g.json").read_text())
    assert len(doc["edges"]) == 640 and doc["index_base"] == 0
    assert sorted(set(doc["degrees"])) == [3, 4, 32]
    assert len(doc["rest_positions"]) == 321


def test_topology_stdout(capsys):
    assert run("topology", "--compact") == 0
    assert json.loads(capsys.readouterr().out)["node_count"] == 321


def test_simulate_outputs(work):
    lines = (work / "met.ndjson").read_text().splitlines()
    assert json.loads(lines[0])["schema"] == "cagetwin.metocean"
    assert len(lines) == 25
    assert json.loads(lines[1])["ts"] == "2024-01-01T00:00:00Z"
    assert json.loads(lines[2])["ts"] == "2024-01-01T00:10:00Z"


def test_simulate_is_seeded(work, tmp_path):
    assert run("simulate", "--n", 24, "--seed", 4, "--out", tmp_path / "again.npz") == 0
    assert (tmp_path / "again.npz").read_bytes() == (work / "lf.npz").read_bytes()


def test_reduce(work, tmp_path, capsys):
    assert run("reduce", "--lf", work / "lf.npz", "--threshold", 0.93, "--show", 3, "--out", tmp_path / "b.npz") == 0
    out = capsys.readouterr().out
    assert out.startswith("components: 96, retained at 0.93:")
    k = int(out.splitlines()[0].rsplit(":", 1)[1])
    with np.load(tmp_path / "b.npz") as z:
        assert z["phi"].shape == (963, k)


def test_train_bundle(work):
    bundle = load_bundle(work / "twin.bin")
    assert bundle.deformation_mode == "gp-pca"
    assert bundle.info["rest_anchors"] == 4


def test_predict(work, tmp_path, capsys):
    out = tmp_path / "pred.ndjson"
    assert run("predict", "--bundle", work / "twin.bin", "--input", work / "met.ndjson", "--out", out,
               "--deformation-dir", tmp_path / "def") == 0
    docs = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(docs) == 24
    assert len(docs[0]["shackle_loads"]) == 5 and len(docs[0]["depth_std"]) == 3
    assert len(list((tmp_path / "def").glob("*.npy"))) == 24
    assert "24 snapshots, 0 line(s) skipped" in capsys.readouterr().err


def test_serve_stream(work, tmp_path, capsys):
    out = tmp_path / "served.ndjson"
    assert run("serve", "--bundle", work / "twin.bin", "--stream", work / "met.ndjson", "--out", out) == 0
    assert len(out.read_text().splitlines()) == 24
    assert "latency" in capsys.readouterr().err


def test_serve_reloads_changed_bundle(work, tmp_path):
    path = tmp_path / "twin.bin"
    path.write_bytes((work / "twin.bin").read_bytes())
    server = TwinServer(load_bundle(path))
    lines = (work / "met.ndjson").read_text().splitlines()[:3]
    it = iter(cli._ReloadingRecords(server, path, lines, IngestResult([])))
    next(it)
    first = server.bundle
    st = os.stat(path)
    os.utime(path, ns=(st.st_atime_ns, st.st_mtime_ns + 10**9))
    next(it)
    assert server.bundle is not first


def test_evaluate_and_report(work, tmp_path, capsys):
    pred = tmp_path / "pred.ndjson"
    run("predict", "--bundle", work / "twin.bin", "--input", work / "met.ndjson", "--out", pred)
    capsys.readouterr()
    assert run("evaluate", "--pred", pred, "--truth", work / "hf.npz", "--json", "--bins", 10) == 0
    table = json.loads(capsys.readouterr().out)
    assert len(table) == 8
    assert run("report", "--pred", pred, "--truth", work / "hf.npz", "--bins", 10, "--out", tmp_path / "rep") == 0
    assert (tmp_path / "rep" / "mae.csv").exists()


def test_evaluate_csv_with_units(tmp_path, capsys):
    (tmp_path / "p.csv").write_text("scenario_id,shackle_1[kN],depth_1[m]\n1,150.0,0.5\n2,151.0,0.7\n3,152.0,0.2\n")
    (tmp_path / "t.csv").write_text("shackle_1,depth_1\n150.5,0.5\n151.0,0.9\n151.0,0.2\n")
    assert run("evaluate", "--pred", tmp_path / "p.csv", "--truth", tmp_path / "t.csv", "--json") == 0
    table = json.loads(capsys.readouterr().out)
    assert len(table) == 2


class TestExitCodes:
    def test_no_command(self):
        with pytest.raises(SystemExit) as info:
            run()
        assert info.value.code == 1

    def test_bad_option(self):
        with pytest.raises(SystemExit) as info:
            run("train", "--lf", "a", "--hf", "b", "--out", "c", "--mode", "spline")
        assert info.value.code == 1

    def test_missing_required(self):
        with pytest.raises(SystemExit) as info:
            run("predict", "--input", "x")
        assert info.value.code == 1

    def test_missing_file(self, tmp_path):
        assert run("reduce", "--lf", tmp_path / "nothing.npz") == 2

    def test_bad_params(self, tmp_path):
        (tmp_path / "p.json").write_text('{"net": {"solidity": -1}}')
        assert run("simulate", "--n", 2, "--params", tmp_path / "p.json", "--out", tmp_path / "lf.csv") == 2

    def test_corrupt_bundle(self, work, tmp_path):
        raw = bytearray((work / "twin.bin").read_bytes())
        raw[-10] ^= 0xFF
        (tmp_path / "bad.bin").write_bytes(bytes(raw))
        assert run("predict", "--bundle", tmp_path / "bad.bin", "--input", work / "met.ndjson",
                   "--out", tmp_path / "o.ndjson") == 2

    def test_unknown_input_field(self, work, tmp_path):
        assert run("train", "--lf", work / "lf.npz", "--hf", work / "hf.npz", "--inputs", "current_speed,tide",
                   "--out", tmp_path / "t.bin") == 2

    def test_no_convergence(self, tmp_path):
        (tmp_path / "p.json").write_text('{"solver": {"max_iter": 1}}')
        assert run("simulate", "--n", 2, "--params", tmp_path / "p.json", "--out", tmp_path / "lf.csv") == 3

    @pytest.mark.parametrize("exc, code", [
        (NoConvergence("x"), 3),
        (FitFailure("x"), 3),
        (np.linalg.LinAlgError("x"), 3),
        (StageFailure("gcn", FloatingPointError("x")), 3),
        (StageFailure("pca", ValueError("x")), 2),
        (InsufficientHfData("x"), 2),
        (FileNotFoundError("x"), 2),
    ])
    def test_mapping(self, exc, code):
        assert cli.exit_code(exc) == code


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "cagetwin.twin.cli", "topology", "--compact"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert len(json.loads(out.stdout)["edges"]) == 640
