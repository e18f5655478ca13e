import json
import subprocess
import sys
from pathlib import Path

import pytest

from skewprod import cli

SEMI = """
[model]
name = "affine_random"
[run]
seeds = [0, 1, 2]
grid = 2
samples = 2
depth = 60
[semiuniform]
lambda = -0.9
lambda_prime = -0.5
N_max = 200
k = [1, 4]
horizons = [100, 1000]
"""

PULLBACK = """
[model]
name = "affine_random"
[run]
seeds = [0, 1]
grid = 32
depth = 60
samples = 3
"""


def write(tmp_path, text, name="exp.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def manifest(out):
    return json.loads((Path(out) / "manifest.json").read_text())


def test_catalog(tmp_path, capsys):
    assert cli.main(["catalog", "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) >= 4
    rows = json.loads((tmp_path / "catalog.json").read_text())
    assert {r["name"] for r in rows} >= {"affine_random", "two_branch", "pinched_sna", "identity"}


def test_lyapunov_report(tmp_path):
    cfg = write(tmp_path, '[model]\nname = "affine_random"\n[run]\nseed_count = 100\nn = 100000\n')
    out = tmp_path / "o"
    assert cli.main(["lyapunov", "--config", cfg, "--out", str(out)]) == 0
    m = manifest(out)
    assert -0.98 <= m["summary"]["mean"] <= -0.94
    assert m["norm"] == "spectral" and len(m["config_sha256"]) == 64 and m["seeds"] == list(range(100))
    rows = (out / "lyapunov.csv").read_text().splitlines()
    assert rows[0] == "sample_id,n,phi_n,lambda_hat" and len(rows) == 101


def test_lyapunov_identity_exponent_exact(tmp_path):
    # identity model: exponent fact 0, a two-point ensemble reproduces it exactly
    cfg = write(tmp_path, '[model]\nname = "identity"\n[run]\nseeds = [0, 1]\nn = 100\n')
    assert cli.main(["lyapunov", "--config", cfg, "--out", str(tmp_path / "o")]) == 0


def test_semiuniform_passes_and_negative_control_fails(tmp_path, capsys):
    cfg = write(tmp_path, SEMI)
    assert cli.main(["semiuniform", "--config", cfg, "--out", str(tmp_path / "ok")]) == 0
    rep = json.loads((tmp_path / "ok" / "semiuniform.json").read_text())
    assert rep["main_violations"] == [] and rep["complement_violations"] == []
    assert rep["lambda_order_ok"] is False
    code = cli.main(["semiuniform", "--config", cfg, "--out", str(tmp_path / "bad"),
                     "--negative-control", "corrupted_C"])
    assert code == 2
    assert manifest(tmp_path / "bad")["violations"]
    assert "VIOLATION" in capsys.readouterr().out


@pytest.mark.parametrize("text", [
    '[model]\nname = "nope"\n',
    '[model]\nname = "affine_random"\n[run]\nseeds = []\n',
    '[model]\nname = "affine_random"\n[model.params]\nhigh = 3.0\n',
    '[model\nname = broken',
    '[model]\nname = "affine_random"\n[run]\ngrid = 0\n',
])
def test_configuration_errors(tmp_path, text):
    cfg = write(tmp_path, text)
    assert cli.main(["pullback", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_missing_config(tmp_path):
    assert cli.main(["pullback", "--config", str(tmp_path / "absent.toml")]) == 3
    assert cli.main(["pullback"]) == 3


def test_resource_error_exit(tmp_path):
    # seeds at 1e200 under the identity map stay beyond the escape bound
    cfg = write(tmp_path, '[model]\nname = "identity"\n[run]\nseed_box = [-1e200, 1e200]\ndepth = 2\n')
    assert cli.main(["pullback", "--config", cfg, "--out", str(tmp_path / "o")]) == 4


def test_rerun_is_byte_identical(tmp_path):
    cfg = write(tmp_path, PULLBACK)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["pullback", "--config", cfg, "--out", str(a)]) == 0
    assert cli.main(["pullback", "--config", cfg, "--out", str(b), "--threads", "2"]) == 0
    csvs = sorted(p.name for p in a.glob("*.csv"))
    assert csvs
    for name in csvs:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ma, mb = manifest(a), manifest(b)
    ma.pop("timestamp"), mb.pop("timestamp")
    assert ma == mb
    assert ma["summary"]["max_oracle_error"] <= 1e-6


def test_env_overrides(tmp_path, monkeypatch):
    cfg = write(tmp_path, PULLBACK)
    monkeypatch.setenv("SKEWPROD_SEEDS", "3,4")
    monkeypatch.setenv("SKEWPROD_OUT", str(tmp_path / "env"))
    assert cli.main(["pullback", "--config", cfg]) == 0
    assert manifest(tmp_path / "env")["seeds"] == [3, 4]
    # explicit flags win over the environment
    assert cli.main(["pullback", "--config", cfg, "--seeds", "5", "--out", str(tmp_path / "f")]) == 0
    assert manifest(tmp_path / "f")["seeds"] == [5]


def test_cardinality_and_continuity(tmp_path):
    two = write(tmp_path, '[model]\nname = "two_branch"\n[run]\nseeds = [0, 1]\ngrid = 8\nsamples = 6\n', "t.toml")
    assert cli.main(["cardinality", "--config", two, "--out", str(tmp_path / "c")]) == 0
    assert manifest(tmp_path / "c")["summary"]["global_n"] == [2, 2]
    aff = write(tmp_path, '[model]\nname = "affine_random"\n[run]\nseeds = [0]\ngrid = 64\nsamples = 2\n', "a.toml")
    assert cli.main(["continuity", "--config", aff, "--out", str(tmp_path / "k")]) == 0
    text = (tmp_path / "k" / "continuity.csv").read_text().splitlines()
    assert text[0] == "seed,G64,G128,G256"


def test_covering_and_minimality(tmp_path):
    cov = write(tmp_path, '[model]\nname = "affine_random"\n[run]\nseeds = [0]\ngrid = 32\n'
                          '[semiuniform]\nlambda_prime = -0.5\nN_max = 50\n', "c.toml")
    assert cli.main(["covering", "--config", cov, "--out", str(tmp_path / "cv")]) == 0
    rows = (tmp_path / "cv" / "covering.csv").read_text().splitlines()
    assert rows[1].split(",")[2] == "1"  # gate passed
    mini = write(tmp_path, '[run]\nseeds = [0, 1, 2]\ngrid = 200\n[minimality]\ntrials = 3\n'
                           'horizon = 20000\nselector_below = 0.4\n', "m.toml")
    assert cli.main(["minimality", "--config", mini, "--out", str(tmp_path / "mn")]) == 0
    s = manifest(tmp_path / "mn")["summary"]
    assert s["fills"] and s["max_gap"] <= 0.01 and s["subsection_fills"]
    assert (tmp_path / "mn" / "weyl.csv").read_text().startswith("m,modulus\n")


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "skewprod", "catalog", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "affine_random" in r.stdout
