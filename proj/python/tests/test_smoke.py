import math
from pathlib import Path

import numpy as np
import pytest

import condflow

CONFIGS = Path(__file__).resolve().parents[2] / "configs"

TELESCOPING = """
experiment: verify-ito
seed: 5
functional: mean-squared
bracket: realized
cross: pairwise
sizes: {n: 16, particles: 32, outer_paths: 4}
coefficients: {drift: 0.3, sigma: 0.0, sigma0: 1.0}
"""


def test_version_and_registry():
    assert condflow.__version__
    names = condflow.list_registry()
    assert names == sorted(names)
    assert "mean-squared" in names and "lq-common-noise" in names
    assert "verify-ito" in condflow.experiment_names()


def test_philox_known_answer():
    assert condflow.philox4x32([0, 0, 0, 0], [0, 0]) == [0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8]


def test_measure_examples():
    assert condflow.w2_squared(np.array([0.0, 2.0]), np.array([1.0, 3.0])) == pytest.approx(1.0)
    assert condflow.eval("mean-squared", np.array([1.0, 2.0, 3.0])) == pytest.approx(4.0)
    assert condflow.d_lions("second-moment", np.array([1.0, 4.0]), 1.5) == pytest.approx(3.0)
    rows, ok = condflow.fd_check_dm("mean-squared", np.array([0.0]), np.array([1.0]), [1e-1, 1e-2, 1e-3])
    assert ok
    assert [r[1] for r in rows] == pytest.approx([1e-1, 1e-2, 1e-3], rel=1e-8)


def test_realized_qv_of_line():
    n = 8
    assert condflow.realized_qv(np.linspace(0, 1, n + 1), 1.0) == pytest.approx(1 / n)
    # standardized realized QV of Brownian paths should look like N(0, 1)
    n, seeds = 1 << 12, 400
    z = np.array([(condflow.realized_qv(condflow.brownian_path(1.0, n, s), 1.0) - 1.0) / math.sqrt(2 / n)
                  for s in range(seeds)])
    assert abs(z.mean()) < 4 / math.sqrt(seeds)
    assert abs(z.std() - 1.0) < 0.15


def test_riccati_terminal_and_hjb():
    p = condflow.LqParams()
    coeffs = condflow.riccati(p, [0.0, p.horizon])
    assert coeffs[1, 0] == -p.c_g / 2
    assert coeffs[1, 1] == -p.c_m / 2
    assert condflow.lq_hjb_max_residual(p, threads=2) < 1e-4
    assert condflow.lq_hjb_max_residual(p, eps=0.1, threads=2) >= 0.05


def test_run_is_deterministic():
    a = condflow.run(TELESCOPING)
    b = condflow.run(TELESCOPING)
    assert a["passed"]
    assert a["payload"] == b["payload"]
    assert a["report"]["aggregate"]["mean_abs"] < 1e-12
    assert "terms.csv" in a["tables"]


def test_config_errors():
    with pytest.raises(ValueError):
        condflow.run("experiment: deriv-check\nseed: 1\nbogus: 1\n")
    with pytest.raises(condflow.ConfigError):
        condflow.run("experiment: deriv-check\n")


def test_run_file_writes_outputs(tmp_path):
    res = condflow.run_file(CONFIGS / "deriv_check.yaml", out=tmp_path / "deriv")
    assert res["passed"]
    assert (tmp_path / "deriv" / "manifest.json").exists()
