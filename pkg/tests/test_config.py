import math

import numpy as np
import pytest
import yaml

from nmmonitor.config import ConfigError, parse_config
from nmmonitor.kernel import reconstruct

MARKOV = """\
system:
  hamiltonian: [[0, 0], [0, 0]]
  coupling: [[0, 1], [0, 0]]
  initial: [0, 1]
kernel:
  markov: {gamma: 1.0}
lattice: {dt: 0.01, N: 1, n_max: 2}
run: {steps: 300, trajectories: 10, seed: 5}
"""

EXPONENTIAL = """\
system:
  hamiltonian: [[0, 0.5], [0.5, 0]]
  coupling: [[0, 1], [0, 0]]
kernel:
  exponential: {gamma: 1.0, lambda: 2.0}
lattice: {dt: 0.1, N: 4, n_max: 2}
run: {steps: 20}
"""


def test_parse_markov_minimal():
    cfg = parse_config(MARKOV)
    assert cfg.lattice.dt == 0.01 and cfg.lattice.n_bins == 1
    assert abs(cfg.kernel.samples[0] - 100.0) <= 1e-12
    assert cfg.run == type(cfg.run)(300, 10, 5)
    assert cfg.outputs.formats == ("csv",)
    assert np.array_equal(cfg.initial, [0, 1])


def test_round_trip_reproduces_kernels():
    cfg = parse_config(EXPONENTIAL)
    again = parse_config(cfg.dump())
    assert again.raw == cfg.raw
    assert np.array_equal(again.kernel.samples, cfg.kernel.samples)
    assert again.digest() == cfg.digest()


def test_exponential_expansion_matches_closed_form():
    cfg = parse_config(EXPONENTIAL)
    k = np.arange(4)
    exact = math.sqrt(2.0) * np.exp(-2.0 * 0.1 * k)
    assert np.max(np.abs(cfg.kernel.samples - exact)) <= 1e-12


def test_default_initial_is_last_basis_state():
    cfg = parse_config(EXPONENTIAL)
    assert np.array_equal(cfg.initial, [0, 1])


def test_unknown_key_reports_name_and_line():
    text = MARKOV.replace("kernel:", "ketnel:")
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert "ketnel" in str(exc.value)
    assert exc.value.line == 5


def test_unknown_nested_key_located():
    text = MARKOV.replace("n_max: 2", "nmax: 2")
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert "nmax" in str(exc.value) and exc.value.path == ("lattice", "nmax")
    assert exc.value.line == 7


def test_dimension_cap_rejected_at_parse():
    text = EXPONENTIAL.replace("N: 4", "N: 12")
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert "dim_cap" in str(exc.value)


def test_markov_requires_single_bin():
    with pytest.raises(ConfigError):
        parse_config(MARKOV.replace("N: 1", "N: 2"))


@pytest.mark.parametrize("old,new", [
    ("dt: 0.01", "dt: -0.01"),
    ("steps: 300", "steps: 2.5"),
    ("hamiltonian: [[0, 0], [0, 0]]", "hamiltonian: [[0, 1], [0, 0]]"),
    ("initial: [0, 1]", "initial: [0, 1, 0]"),
    ("markov: {gamma: 1.0}", "markov: {gamma: 1.0, lambda: 2}"),
    ("run: {steps: 300, trajectories: 10, seed: 5}", "run: {trajectories: 10}"),
])
def test_invalid_values_rejected(old, new):
    with pytest.raises(ConfigError):
        parse_config(MARKOV.replace(old, new))


def test_malformed_yaml():
    with pytest.raises(ConfigError) as exc:
        parse_config("system: [unclosed\n")
    assert exc.value.line is not None


def test_two_kernel_families_rejected():
    text = MARKOV.replace("  markov: {gamma: 1.0}\n", "  markov: {gamma: 1.0}\n  samples: [1]\n")
    with pytest.raises(ConfigError):
        parse_config(text)


def test_correlation_kernel_is_factorized():
    alpha = reconstruct(parse_config(EXPONENTIAL).kernel)
    raw = yaml.safe_load(EXPONENTIAL)
    raw["kernel"] = {"correlation": [float(a.real) for a in alpha.samples]}
    cfg = parse_config(yaml.safe_dump(raw))
    assert cfg.factorization_residual <= 1e-10
    assert np.allclose(reconstruct(cfg.kernel).samples, alpha.samples, atol=1e-10)


def test_indefinite_correlation_is_config_error():
    raw = yaml.safe_load(EXPONENTIAL)
    raw["kernel"] = {"correlation": [1.0, 0.9, 0.0, -0.9]}
    with pytest.raises(ConfigError) as exc:
        parse_config(yaml.safe_dump(raw))
    assert "eigenvalue" in str(exc.value)


def test_complex_entries():
    text = EXPONENTIAL.replace("[[0, 0.5], [0.5, 0]]", "[[0, [0, 0.5]], [[0, -0.5], 0]]")
    cfg = parse_config(text)
    assert cfg.system.hamiltonian[0, 1] == 0.5j


def test_overrides():
    cfg = parse_config(MARKOV).with_overrides(seed=9, directory="elsewhere", fmt="json")
    assert cfg.run.seed == 9 and cfg.outputs.directory == "elsewhere"
    assert cfg.outputs.formats == ("json",)
