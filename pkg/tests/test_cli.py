import subprocess
import sys

import numpy as np
import pytest

from bdcs.cli import ConfigError, load_run_config, main
from bdcs.pilot import min_circular_distance, read_pattern

CONFIG = """\
[system]
n_subcarriers = 64
n_groups = 6
channel_length = 8
sparsity = 2
n_antennas = 2
normalized_doppler = 0.05

[experiment]
sweep_variable = snr
sweep_values = 10, 30
trials = 2
methods = LS, BSOMP
pilot_scheme = equidistant
seed = 7
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(CONFIG)
    return path


def write(tmp_path, text):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    return path


class TestConfig:
    def test_parse(self, cfg):
        run = load_run_config(cfg)
        assert run.system.n_subcarriers == 64
        assert run.system.normalized_doppler == pytest.approx(0.05)
        assert run.experiment.sweep_values == (10.0, 30.0)
        assert run.experiment.methods == ("LS", "BSOMP")

    def test_unknown_key_line(self, tmp_path):
        path = write(tmp_path, CONFIG.replace("trials = 2", "trails = 2"))
        with pytest.raises(ConfigError, match=r"bad\.ini:12: unknown key 'trails'"):
            load_run_config(path)

    def test_bad_value_line(self, tmp_path):
        path = write(tmp_path, CONFIG.replace("n_groups = 6", "n_groups = six"))
        with pytest.raises(ConfigError, match=r":3: bad value for 'n_groups'"):
            load_run_config(path)

    def test_unknown_section(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown section"):
            load_run_config(write(tmp_path, CONFIG + "\n[plots]\nx = 1\n"))


class TestDesignPilots:
    def test_equidistant(self, cfg, tmp_path, capsys):
        out = tmp_path / "eq.txt"
        assert main(["design-pilots", "--config", str(cfg), "--scheme", "equidistant", "--out", str(out)]) == 0
        p = read_pattern(out)
        assert np.all(np.diff(p.center_indices) == 10)
        assert len(out.with_suffix(".mu.csv").read_text().splitlines()) == 2

    def test_bdso_reproducible(self, cfg, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        for out in (a, b):
            assert main(["design-pilots", "--config", str(cfg), "--iterations", "100", "--seed", "3", "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert min_circular_distance(read_pattern(a).center_indices, 64) >= 5
        mu = np.loadtxt(a.with_suffix(".mu.csv"), delimiter=",", skiprows=1)[:, 1]
        assert len(mu) == 101 and np.all(np.diff(mu) <= 0)

    def test_ga(self, cfg, tmp_path):
        out = tmp_path / "ga.txt"
        assert main(["design-pilots", "--config", str(cfg), "--scheme", "ga", "--iterations", "5", "--out", str(out)]) == 0

    def test_missing_config(self, tmp_path):
        out = tmp_path / "x.txt"
        assert main(["design-pilots", "--config", str(tmp_path / "nope.ini"), "--out", str(out)]) == 2
        assert list(tmp_path.iterdir()) == []

    def test_infeasible(self, tmp_path):
        path = write(tmp_path, CONFIG.replace("n_groups = 6", "n_groups = 13"))
        assert main(["design-pilots", "--config", str(path), "--out", str(tmp_path / "x.txt")]) == 3


class TestSweep:
    def test_rows_and_manifest(self, cfg, tmp_path):
        out = tmp_path / "res.csv"
        assert main(["sweep", "--config", str(cfg), "--out", str(out), "--threads", "1"]) == 0
        lines = out.read_text().splitlines()
        # 2 SNR points x 2 trials x 2 methods x (raw + smoothed)
        assert len(lines) == 1 + 16
        manifest = out.with_suffix(".manifest.txt").read_text()
        assert "seed = 7" in manifest and "n_subcarriers = 64" in manifest

    def test_deterministic(self, cfg, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["sweep", "--config", str(cfg), "--out", str(a), "--threads", "1"])
        main(["sweep", "--config", str(cfg), "--out", str(b), "--threads", "2"])
        assert a.read_bytes() == b.read_bytes()

    def test_invalid_sweep_variable(self, tmp_path, capsys):
        path = write(tmp_path, CONFIG.replace("sweep_variable = snr", "sweep_variable = speed"))
        assert main(["sweep", "--config", str(path), "--out", str(tmp_path / "r.csv")]) == 2
        err = capsys.readouterr().err
        assert "sweep_variable" in err and ":10:" in err


class TestVerify:
    def test_passes(self):
        assert main(["verify"]) == 0
        assert main(["--verify"]) == 0

    def test_injected_fault(self, capsys):
        assert main(["verify", "--inject-fault", "offset-sign"]) == 1
        assert "pilot-index-consistency" in capsys.readouterr().err

    def test_help(self):
        proc = subprocess.run([sys.executable, "-m", "bdcs", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert "design-pilots" in proc.stdout

    def test_no_command(self):
        assert main([]) == 2
