import json
from importlib import resources

import numpy as np
import pytest

from infxlap.config import (
    ConfigError,
    apply_overrides,
    boundary_callable,
    build_problem,
    config_hash,
    load_config,
)
from infxlap.grid import make_domain, write_csv, sample


def bundled(name):
    return resources.files("infxlap") / "data" / name


def write(tmp_path, cfg, name="p.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


BASE = {
    "grid": {"nx": 9, "ny": 9, "h": 0.125},
    "exponent": {"family": "constant", "c": 2.0},
    "boundary": {"expr": "x + y"},
}


@pytest.mark.parametrize("name", ["affine_demo.json", "aronsson.json", "harnack_cone.json", "sandwich_bump.json"])
def test_bundled_problems_build(name):
    cfg = load_config(bundled(name))
    p = build_problem(cfg)
    assert p.domain.active_mask.any()


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.json")


def test_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{grid:")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(path)


@pytest.mark.parametrize(
    "patch",
    [
        {"epsilon": 1.0},
        {"grid": {"nx": 2, "ny": 9, "h": 0.1}},
        {"scheme": "spectral"},
        {"boundary": {}},
        {"tolerances": {"step_tol": -1}},
    ],
)
def test_schema_rejects(tmp_path, patch):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, {**BASE, **patch}))


def test_bad_expression(tmp_path):
    with pytest.raises(ConfigError, match="unknown symbols"):
        build_problem(load_config(write(tmp_path, {**BASE, "boundary": {"expr": "x + z"}})))
    with pytest.raises(ConfigError):
        boundary_callable("x +* y")


def test_boundary_callable_broadcasts_constants():
    f = boundary_callable("3")
    assert f(np.zeros((2, 4)), np.zeros((2, 4))).shape == (2, 4)


def test_hash_ignores_private_keys_and_order():
    a = {"grid": {"nx": 3}, "boundary": {"expr": "x"}}
    b = {"boundary": {"expr": "x"}, "grid": {"nx": 3}, "_base": "/somewhere"}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({**a, "epsilon": 0.1})


def test_overrides(tmp_path):
    cfg = load_config(write(tmp_path, {**BASE, "k_schedule": [1, 2]}))
    out = apply_overrides(cfg, eps=[0.3, 0.1], kmax=8, tol=1e-7, scheme="centered")
    assert out["epsilons"] == [0.3, 0.1] and "k_schedule" not in out
    assert out["tolerances"] == {"residual_tol": 1e-7, "step_tol": 1e-7}
    p = build_problem(out)
    assert p.scheme == "centered" and p.k_schedule[-1] * p.exponent.p_min == pytest.approx(8)
    assert "k_schedule" in cfg


def test_csv_sources_round_trip(tmp_path):
    d = make_domain(9, 9, 0.125)
    write_csv(sample(d, lambda x, y: np.cos(x) + y), tmp_path / "b.csv")
    write_csv(sample(d, lambda x, y: 2 + x), tmp_path / "p.csv")
    # exponent csv uses a p column
    text = (tmp_path / "p.csv").read_text().replace("x,y,value", "x,y,p")
    (tmp_path / "p.csv").write_text(text)
    cfg = load_config(write(tmp_path, {**BASE, "boundary": {"csv": "b.csv"}, "exponent": {"csv": "p.csv"}}))
    p = build_problem(cfg)
    ref = np.cos(d.x) + d.y
    np.testing.assert_allclose(p.boundary.as_array()[d.boundary_mask], ref[d.boundary_mask], rtol=0, atol=0)
    np.testing.assert_allclose(p.exponent.p, 2 + d.x)


def test_invalid_problem_values_become_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        build_problem(load_config(write(tmp_path, {**BASE, "k_schedule": [0.1]})))
