import json
import os
import subprocess
import sys

import numpy as np
import pytest

from mfldp.cli import main
from mfldp.config import build_model, config_hash, load_config
from mfldp.errors import ConfigError
from mfldp.parallel import parallel_map, worker_count
from mfldp.reporting import read_samples_binary, write_csv, write_samples_binary


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_toml_and_json_agree(tmp_path):
    t = _write(tmp_path, "a.toml", 'kind = "zn"\nn = [20, 40]\n[model]\npreset = "curie-weiss"\nbeta = 1.5\n')
    j = _write(tmp_path, "a.json", json.dumps({"kind": "zn", "n": [20, 40],
                                               "model": {"preset": "curie-weiss", "beta": 1.5}}))
    assert config_hash(load_config(t)) == config_hash(load_config(j))


@pytest.mark.parametrize("cfg,where", [
    ({"kind": "zn", "model": {"space": {"kind": "finite", "labels": [0, 1]},
                              "interactions": [{"order": 2}]}}, "model/interactions/0"),
    ({"kind": "sample"}, "model"),
    ({"kind": "zn", "model": {"preset": "curie-weiss"}}, "model"),
    ({"kind": "wasserstein", "wasserstein": {"mu": "nope.json", "nu": "nope.json"}}, "wasserstein/mu"),
    ({"kind": "rate", "model": {"preset": "curie-weiss", "beta": 1.0},
      "rate": {"replicas": 10}}, "rate/replicas"),
])
def test_config_errors_exit_2(tmp_path, capsys, cfg, where):
    p = _write(tmp_path, "bad.json", json.dumps(cfg))
    assert main([cfg["kind"], "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert where in capsys.readouterr().err


def test_kind_mismatch(tmp_path):
    p = _write(tmp_path, "c.json", json.dumps({"kind": "verify"}))
    assert main(["zn", "--config", str(p)]) == 2


def test_explicit_model_build():
    m = build_model({"space": {"kind": "finite", "labels": [0, 1, 2]}, "alpha": [1, 1, 2],
                     "interactions": [{"order": 2, "family": "table",
                                       "values": [[0, 1, 0], [1, 0, 1], [0, 1, 0]]}]})
    assert np.allclose(m.alpha.dense(), [0.25, 0.25, 0.5])
    with pytest.raises(ConfigError):
        build_model({"space": {"kind": "finite", "labels": [0, 1]}, "alpha": [1, 1, 1]})


def test_strict_nonconverged_exit_3(tmp_path):
    cfg = {"kind": "fixed-point", "model": {"preset": "curie-weiss", "beta": 1.5},
           "solver": {"max_iter": 2, "start_magnetization": 0.1}}
    p = _write(tmp_path, "fp.json", json.dumps(cfg))
    assert main(["fixed-point", "--config", str(p), "--out", str(tmp_path / "a")]) == 0
    assert main(["fixed-point", "--config", str(p), "--out", str(tmp_path / "b"),
                 "--strict"]) == 3


def test_numerical_failure_exit_3(tmp_path):
    cfg = {"kind": "sample", "n": 5,
           "model": {"space": {"kind": "euclidean", "box": [-1, 1], "cells": 11},
                     "confinement": {"family": "quadratic", "a": 1000.0}},
           "sampler": {"dynamics": "langevin", "dt": 0.1, "horizon": 5.0}}
    p = _write(tmp_path, "s.json", json.dumps(cfg))
    assert main(["sample", "--config", str(p), "--out", str(tmp_path / "o")]) == 3


def test_manifest_and_seed_override(tmp_path, capsys):
    cfg = {"kind": "sample", "n": 10, "seed": 1, "model": {"preset": "curie-weiss", "beta": 1.0},
           "sampler": {"steps": 200, "thinning": 10, "format": "binary"}}
    p = _write(tmp_path, "s.json", json.dumps(cfg))
    out = tmp_path / "o"
    assert main(["sample", "--config", str(p), "--out", str(out), "--seed", "9"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 9 and man["config_hash"] == config_hash(cfg)
    assert "acceptance_rate" in man["report"]
    frames = read_samples_binary(out / "samples.mfld")
    assert frames.shape == (20, 10, 1) and set(np.unique(frames)) <= {-1.0, 1.0}
    assert json.loads(capsys.readouterr().out)["seed"] == 9


def test_wasserstein_command(tmp_path):
    sp = {"kind": "finite", "labels": [0, 1, 2]}
    _write(tmp_path, "mu.json", json.dumps({"space": sp, "support": [0, 1], "weights": [0.5, 0.5]}))
    _write(tmp_path, "nu.json", json.dumps({"space": sp, "support": [2], "weights": [1.0]}))
    p = _write(tmp_path, "w.toml", 'kind = "wasserstein"\n[wasserstein]\nmu = "mu.json"\n'
                                   'nu = "nu.json"\nplan = true\n')
    out = tmp_path / "o"
    assert main(["wasserstein", "--config", str(p), "--out", str(out)]) == 0
    assert json.loads((out / "manifest.json").read_text())["report"]["value"] == 1.5
    assert (out / "plan.csv").exists()


def test_trace_flag(tmp_path):
    cfg = {"kind": "minimize", "model": {"preset": "curie-weiss", "beta": 1.5},
           "solver": {"method": "fixed-point"}}
    p = _write(tmp_path, "m.json", json.dumps(cfg))
    main(["minimize", "--config", str(p), "--out", str(tmp_path / "a"), "--trace"])
    main(["minimize", "--config", str(p), "--out", str(tmp_path / "b")])
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())["report"]
    b = json.loads((tmp_path / "b" / "manifest.json").read_text())["report"]
    assert len(json.dumps(a)) > len(json.dumps(b))


def test_csv_is_byte_stable(tmp_path):
    rows = [[1, 0.1 + 0.2, None, True], [2, float("inf"), "x", False]]
    a = write_csv(tmp_path / "a.csv", ["i", "v", "s", "b"], rows).read_bytes()
    b = write_csv(tmp_path / "b.csv", ["i", "v", "s", "b"], rows).read_bytes()
    assert a == b and b"0.30000000000000004" in a


def test_binary_frame_round_trip(tmp_path):
    x = np.random.default_rng(0).normal(size=(3, 7, 2))
    path = write_samples_binary(tmp_path / "f.mfld", x)
    assert path.read_bytes()[:4] == b"MFLD"
    assert np.array_equal(read_samples_binary(path), x)
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(ValueError):
        read_samples_binary(path)


def _square(v):
    return v * v


def test_worker_cap(monkeypatch):
    monkeypatch.setenv("MFLDP_THREADS", "1")
    assert worker_count() == 1
    assert parallel_map(_square, range(5)) == [0, 1, 4, 9, 16]


def test_console_script_help():
    env = dict(os.environ, MFLDP_THREADS="1")
    r = subprocess.run([sys.executable, "-m", "mfldp.cli", "--help"], capture_output=True,
                       text=True, env=env)
    assert r.returncode == 0 and "--config" in r.stdout
