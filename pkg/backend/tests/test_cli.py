import textwrap

import numpy as np
import pytest

from app.cli import ConfigValidationError, ParseError, main, parse_config
from app.config import Settings
from app.schemas import CommandName, ModelName, parse_matrix
from utils.csv_io import read_csv, write_csv


def write_config(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(textwrap.dedent(text))
    return path


def test_parse_fills_defaults(tmp_path):
    path = write_config(tmp_path, """
        [model]
        name = linear
        C = 2, 0; 0, 3
        Bm = 0, -1; 1, 0

        [rate]
        alpha_points = 21
    """)
    config = parse_config(path, "rate")
    assert config.command == CommandName.RATE
    assert config.model.name == ModelName.LINEAR
    assert config.model.C == [[2.0, 0.0], [0.0, 3.0]]
    assert config.params.alpha_points == 21
    assert config.params.sigma_points == 401
    assert config.run.seed == 0
    assert config.echo()["rate.alpha_points"] == "21"


def test_command_can_come_from_run_section(tmp_path):
    path = write_config(tmp_path, """
        [model]
        name = rotation
        [run]
        command = simulate
    """)
    config = parse_config(path)
    assert config.command == CommandName.SIMULATE
    assert config.params.n_paths == 10000


@pytest.mark.parametrize("text,key", [
    ("[model]\nname = rotation\n[weather]\nrain = 1\n", "weather"),
    ("[model]\nname = rotation\nomega = 1\nomega = 2\n", "omega"),
    ("[model]\nname = rotation\n[rate]\nalpha_pionts = 3\n", "alpha_pionts"),
    ("[model]\nname = rotation\n[rate]\n[spectrum]\n", "spectrum"),
    ("[model]\nname = rotation\n[rate]\nsigma_points = many\n", "sigma_points"),
    ("[rate]\n", "model"),
])
def test_validation_errors_name_the_key(tmp_path, text, key):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigValidationError) as info:
        parse_config(path, "rate")
    assert info.value.key == key


def test_conflicting_commands(tmp_path):
    path = write_config(tmp_path, """
        [model]
        name = rotation
        [run]
        command = spectrum
    """)
    with pytest.raises(ConfigValidationError):
        parse_config(path, "rate")


def test_parse_error_reports_line(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("name = rotation\n[model]\n")
    with pytest.raises(ParseError) as info:
        parse_config(path, "rate")
    assert info.value.lineno == 1


def test_linear_model_needs_both_blocks(tmp_path):
    path = write_config(tmp_path, """
        [model]
        name = linear
        C = 1, 0; 0, 1
    """)
    with pytest.raises(ConfigValidationError):
        parse_config(path, "rate")


def test_parse_matrix():
    assert parse_matrix("1, 2; 3, 4") == [[1.0, 2.0], [3.0, 4.0]]
    with pytest.raises(ValueError):
        parse_matrix("1, 2; 3")


def test_admissible_run_writes_rasters(tmp_path):
    path = write_config(tmp_path, """
        [admissible]
        pairs = 0.33, 0.75; 0.49, 1.5
        resolution = 11
    """)
    out = tmp_path / "out"
    assert main(["admissible", "--config", str(path), "--out", str(out)]) == 0
    table = read_csv(out / "raster_1.csv")
    assert table.header == ["alpha", "p", "admissible"]
    assert len(table.rows) == 121
    assert table.metadata["k_b"] == "0.49"


def test_rate_run_end_to_end(tmp_path):
    path = write_config(tmp_path, """
        [model]
        name = rotation
        [rate]
        alpha_points = 41
        sigma_points = 81
        n_samples = 200
    """)
    out = tmp_path / "out"
    assert main(["rate", "--config", str(path), "--out", str(out), "--seed", "3"]) == 0
    cgf = read_csv(out / "cgf.csv")
    rate = read_csv(out / "rate.csv")
    alphas = cgf.column("alpha")
    assert np.allclose(cgf.column("e"), 1.0 - np.sqrt(1.0 + 4.0 * alphas * (1.0 - alphas)), atol=1e-10)
    assert rate.column("e_star").min() >= -1e-12
    assert rate.metadata["flat_interval"] == "none"
    assert rate.metadata["seed"] == "3"
    lo, hi = (float(v) for v in rate.metadata["sampled_alpha_interval"].strip("[]").split(","))
    assert lo == pytest.approx(0.5 - np.sqrt(0.5)) and hi == pytest.approx(0.5 + np.sqrt(0.5))
    assert rate.metadata["alpha_interval"].startswith("[")
    assert float(rate.metadata["convex_hull_deviation"]) < 1e-6
    assert rate.metadata["pointwise_p2_failures"] == "0"
    assert rate.metadata["consistency_passed"] == "True"
    assert "equilibrium=False" in rate.metadata["local_minima"]


def test_numerical_guard_exit_code(tmp_path):
    path = write_config(tmp_path, """
        [model]
        name = rotation
        [spectrum]
        alpha = 0
        eps = 0.5
        n = 41
        box_lo = -4
        box_hi = 4
    """)
    assert main(["spectrum", "--config", str(path), "--out", str(tmp_path / "out")]) == 2


def test_spectrum_run_with_explicit_grid(tmp_path):
    path = write_config(tmp_path, """
        [model]
        name = rotation
        [spectrum]
        alpha = 0
        eps = 0.5
        n = 61
        box_lo = -4
        box_hi = 4
        dump_eigvec = true
    """)
    out = tmp_path / "out"
    assert main(["spectrum", "--config", str(path), "--out", str(out)]) == 0
    spectrum = read_csv(out / "spectrum.csv")
    assert spectrum.column("lambda")[0] == pytest.approx(0.0, abs=1e-2)
    assert len(read_csv(out / "eigvec.csv").rows) == 59 * 59


def test_config_error_exit_code(tmp_path):
    path = tmp_path / "missing.ini"
    assert main(["rate", "--config", str(path)]) == 1
    good = write_config(tmp_path, "[model]\nname = rotation\n")
    assert main(["rate", "--config", str(good), "--threads", "0"]) == 1


def test_csv_metadata_and_formatting(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["a", "flag"], [[0.1, True], [2.5, False]], {"note": "x"})
    table = read_csv(path)
    assert table.metadata == {"note": "x"}
    assert table.rows == [["0.10000000000000001", "1"], ["2.5", "0"]]
    assert table.column("a")[0] == 0.1


def test_settings_read_environment(monkeypatch):
    monkeypatch.setenv("EPFLOW_THREADS", "3")
    monkeypatch.setenv("EPFLOW_EIG_TOL", "1e-9")
    fresh = Settings()
    assert fresh.THREADS == 3
    assert fresh.EIG_TOL == 1e-9


SIMULATE_CONFIG = """
    [model]
    name = rotation
    [simulate]
    eps = 0.5
    dt = 0.01
    horizon = 1
    n_paths = 600
    alphas = 0.25, 0.5
    bins = 10
"""


def test_simulate_output_independent_of_threads(tmp_path):
    path = write_config(tmp_path, SIMULATE_CONFIG)
    for threads in ("1", "3"):
        out = tmp_path / f"threads{threads}"
        args = ["simulate", "--config", str(path), "--out", str(out), "--seed", "9", "--threads", threads]
        assert main(args) == 0
    for name in ("paths.csv", "mgf.csv", "histogram.csv"):
        assert (tmp_path / "threads1" / name).read_bytes() == (tmp_path / "threads3" / name).read_bytes()

    paths = read_csv(tmp_path / "threads1" / "paths.csv")
    assert paths.header == ["path_id", "S_ito", "S_strat", "x1_final", "x2_final"]
    assert len(paths.rows) == 600
    assert len(read_csv(tmp_path / "threads1" / "mgf.csv").rows) == 2
    assert "proxy_distance" in read_csv(tmp_path / "threads1" / "histogram.csv").metadata


def test_simulate_with_stationary_estimate(tmp_path):
    path = write_config(tmp_path, SIMULATE_CONFIG + "    t_long = 20\n    compare_rate = false\n")
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(path), "--out", str(out)]) == 0
    meta = read_csv(out / "paths.csv").metadata
    assert float(meta["stationary_mean_ep"]) > 0.0
    assert float(meta["stationary_mean_ep_se"]) > 0.0
    assert read_csv(out / "histogram.csv").metadata["proxy_distance"] == "n/a"


def test_mgf_check_run(tmp_path):
    path = write_config(tmp_path, """
        [model]
        name = rotation
        [mgf-check]
        eps = 0.5
        horizon = 0.5
        dt = 0.001
        fk_dt = 0.01
        n_paths = 2000
        alphas = 0.25, 0.5
        init = mu0_gaussian
        n = 61
        box_lo = -4
        box_hi = 4
    """)
    out = tmp_path / "out"
    assert main(["mgf-check", "--config", str(path), "--out", str(out), "--seed", "4"]) == 0
    table = read_csv(out / "mgf_check.csv")
    assert table.header == ["alpha", "mc_log_rate", "mc_se", "fk_log_rate", "diff", "n", "box_lo", "box_hi"]
    assert len(table.rows) == 2
    assert np.all(np.abs(table.column("diff")) <= 3.0 * table.column("mc_se"))
    assert np.all(table.column("n") == 61)


def test_mgf_check_grid_keys_go_together(tmp_path):
    path = write_config(tmp_path, """
        [model]
        name = rotation
        [mgf-check]
        horizon = 0.5
        dt = 0.001
        n_paths = 10
        n = 61
    """)
    assert main(["mgf-check", "--config", str(path), "--out", str(tmp_path / "out")]) == 1


def test_sweep_run(tmp_path):
    path = write_config(tmp_path, """
        [model]
        name = rotation
        [sweep]
        alpha = 0.25
        eps_list = 0.5, 0.4
    """)
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(path), "--out", str(out)]) == 0
    table = read_csv(out / "sweep.csv")
    assert table.header[-2:] == ["riccati", "error"]
    assert len(table.rows) == 2
    assert np.allclose(table.column("riccati"), 1.0 - np.sqrt(1.75))
    assert np.all(table.column("error") <= 1e-2)
    assert "errors_nonincreasing" in table.metadata
