import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlch.config import (
    OUTPUT_ENV,
    ConfigError,
    RunConfig,
    dumps,
    initial_fields,
    initial_state,
    loads,
    read_snapshot,
    write_snapshot,
)
from nlch.spectral import SpectralSpace

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
unit = st.floats(min_value=1e-6, max_value=1.0)
moderate = st.floats(-1e6, 1e6)


@st.composite
def configs(draw):
    dims = draw(st.sampled_from([1, 2]))
    delta0 = draw(st.floats(1e-3, 10.0))
    params = {
        "alpha": draw(unit), "epsilon": draw(unit), "delta0": delta0,
        "delta": draw(st.floats(0.0, 1.0)) * delta0, "dt": draw(st.floats(1e-8, 1e-1)),
        "t_end": draw(st.floats(0.0, 100.0)), "stabilization": draw(st.none() | st.floats(0.0, 1e3)),
    }
    return RunConfig(
        scenario=draw(st.sampled_from(["simulate", "certify", "contdep"])),
        spectral={"dims": dims, "lengths": draw(st.lists(st.floats(0.1, 10.0), min_size=dims, max_size=dims)),
                  "n_modes": draw(st.lists(st.integers(9, 65), min_size=dims, max_size=dims))},
        kernel={"family": "gaussian", "params": {"sigma": draw(st.floats(1.0, 3.0)), "amplitude": draw(finite)}},
        potential={"coefficients": [draw(moderate), draw(moderate), draw(moderate), 0.0, draw(st.floats(0.1, 10.0))],
                   "amplitude": draw(st.floats(0.1, 10.0))},
        params={**RunConfig().params, **params},
        initial_data={**RunConfig().initial_data, "preset": "quench1d" if dims == 1 else "quench2d",
                      "seed": draw(st.integers(0, 2**32)), "amplitude": draw(finite)},
        outputs={**RunConfig().outputs, "snapshot_stride": draw(st.integers(1, 10**6)),
                 "directory": draw(st.text("abc/_-.", min_size=1, max_size=20))},
    )


@settings(max_examples=100, deadline=None)
@given(configs())
def test_round_trip_field_for_field(cfg):
    back = RunConfig.loads(cfg.dumps())
    assert back == cfg
    assert back.dumps() == cfg.dumps()


def test_flat_format():
    text = dumps({"a": {"b": 1, "c": [1.5, None]}, "d": "x"})
    assert text == 'a.b = 1\na.c = [1.5, null]\nd = "x"\n'
    assert loads("# comment\n\n" + text) == {"a": {"b": 1, "c": [1.5, None]}, "d": "x"}
    with pytest.raises(ConfigError, match="line 1"):
        loads("a.b 1")
    with pytest.raises(ConfigError, match="JSON"):
        loads("a = nope")
    with pytest.raises(ConfigError, match="conflicts"):
        loads("a = 1\na.b = 2")


@pytest.mark.parametrize("text,match", [
    ("params.epsilon = 0.0", "epsilon"),
    ("params.alpha = 2.0", "alpha"),
    ("spectral.n_modes = [8]", "n_modes"),
    ("outputs.ledger_stride = 0", "ledger_stride"),
    ("kernel.family = \"cauchy\"", "family"),
    ("potential.coefficients = [1, 0, 1]", "potential"),
    ("initial_data.preset = \"quench2d\"", "does not match"),
    ("initial_data.phi_file = \"missing.bin\"", "does not exist"),
    ("params.bogus = 1", "unknown key"),
    ("extra.key = 1", "unknown configuration sections"),
    ("scenario = \"limit_study\"\nstudy.epsilons = [0.01, 0.1]", "decreasing"),
])
def test_invalid_configs_rejected(text, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig.loads(text)


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        RunConfig.load(tmp_path / "nope.cfg")


def test_save_load_and_relative_paths(tmp_path):
    cfg = RunConfig().replace(outputs={"directory": "out"})
    cfg.save(tmp_path / "run.cfg")
    back = RunConfig.load(tmp_path / "run.cfg")
    assert back == cfg and back.output_dir() == tmp_path / "out"


def test_output_dir_precedence(tmp_path, monkeypatch):
    cfg = RunConfig()
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    assert cfg.output_dir().name == "default"
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert cfg.output_dir() == tmp_path / "env"
    assert cfg.output_dir(tmp_path / "flag") == tmp_path / "flag"


def test_presets_shapes_and_means():
    cfg = RunConfig()
    sp = cfg.space()
    phi, theta = initial_fields(cfg, sp)
    assert np.max(np.abs(phi)) == pytest.approx(0.01) and abs(sp.mean(phi)) < 1e-15 and np.all(theta == 0)
    const = cfg.replace(initial_data={"preset": "constant", "mean": 0.2, "theta_mean": -0.1})
    phi, theta = initial_fields(const, sp)
    assert np.all(phi == 0.2) and np.all(theta == -0.1)
    rough = cfg.replace(initial_data={"preset": "roughtheta"})
    _, theta = initial_fields(rough, sp)
    assert abs(sp.mean(theta)) < 1e-12 and sp.norm(theta, "V") > 10 * sp.norm(theta)
    q2 = cfg.replace(spectral={"dims": 2, "lengths": [1.0, 1.0], "n_modes": [17, 17]},
                     initial_data={"preset": "quench2d"})
    assert initial_state(q2).phi.shape == (17, 17)


def test_presets_deterministic_per_seed():
    cfg = RunConfig()
    a, _ = initial_fields(cfg, seed=4)
    b, _ = initial_fields(cfg, seed=4)
    c, _ = initial_fields(cfg, seed=5)
    np.testing.assert_array_equal(a, b)
    assert np.any(a != c)


def test_files_preset(tmp_path):
    cfg = RunConfig()
    sp = cfg.space()
    f = np.cos(np.pi * sp.nodes[0]) * 0.1
    write_snapshot(tmp_path / "phi.bin", f, sp)
    cfg = RunConfig.loads('initial_data.preset = "files"\ninitial_data.phi_file = "phi.bin"', str(tmp_path))
    phi, theta = initial_fields(cfg, sp)
    np.testing.assert_array_equal(phi, f)
    assert np.all(theta == 0)


@pytest.mark.parametrize("sp", [SpectralSpace.unit(1, 33), SpectralSpace(2, (1.0, 2.0), (9, 13))], ids=str)
def test_snapshot_round_trip_bit_exact(tmp_path, sp):
    f = np.random.default_rng(0).standard_normal(sp.shape) * 1e-300
    f.flat[0] = np.nextafter(1.0, 2.0)
    write_snapshot(tmp_path / "s.bin", f, sp, t=0.125, name="theta")
    g, header = read_snapshot(tmp_path / "s.bin", sp)
    assert g.tobytes() == f.tobytes()
    assert header["t"] == 0.125 and header["field"] == "theta" and header["n_modes"] == list(sp.shape)
    raw = (tmp_path / "s.bin").read_bytes()
    assert raw.split(b"\n", 1)[1] == f.astype("<f8").tobytes(order="C")


def test_snapshot_errors(tmp_path):
    sp = SpectralSpace.unit(1, 9)
    (tmp_path / "junk.bin").write_bytes(b"hello\n\x00\x01")
    with pytest.raises(ConfigError, match="not a snapshot"):
        read_snapshot(tmp_path / "junk.bin")
    write_snapshot(tmp_path / "s.bin", np.zeros(9), sp)
    with pytest.raises(ConfigError, match="does not match"):
        read_snapshot(tmp_path / "s.bin", SpectralSpace.unit(1, 17))
