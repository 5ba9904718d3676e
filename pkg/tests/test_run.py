import pytest

from halfline import analytic, report
from halfline.run import acceptance_checks, main

FLAT_DRIFT = """
[drift]
variant = piecewise
alpha = 1
q = 0.5
beta = 1
p = 0.5
m1 = 1
m2 = 2
mid.kind = constant
"""


@pytest.fixture
def write_cfg(tmp_path):
    def _write(text, name="experiment.ini"):
        path = tmp_path / name
        path.write_text(text)
        return str(path)

    return _write


def test_rate_prints_constant(write_cfg, out_dir, capsys):
    code = main(["rate", write_cfg(FLAT_DRIFT + "\n[run]\nt = 10\n"), "--out", str(out_dir)])
    assert code == 0
    assert "2.554" in capsys.readouterr().out
    df = report.read_csv(out_dir / "rate.csv", "rate")
    assert df["gamma_rate"].iloc[0] == pytest.approx(analytic.gamma_rate(0.5, 1.0))
    assert df["tail_scale"].iloc[0] == pytest.approx(10 ** (-1 / 3))


def test_missing_beta_exits_with_config_code(write_cfg, out_dir, capsys):
    code = main(["rate", write_cfg(FLAT_DRIFT.replace("beta = 1\n", "")), "--out", str(out_dir)])
    assert code == 2
    assert "beta" in capsys.readouterr().err
    assert not (out_dir / "rate.csv").exists()


def test_missing_file_and_section(write_cfg, tmp_path, capsys):
    assert main(["rate", str(tmp_path / "nope.ini")]) == 2
    assert main(["varmin", write_cfg(FLAT_DRIFT)]) == 2
    assert "[varmin]" in capsys.readouterr().err


def test_unknown_subcommand_is_rejected(write_cfg):
    with pytest.raises(SystemExit):
        main(["teleport", write_cfg(FLAT_DRIFT)])


def test_subcommand_read_from_run_section(write_cfg, out_dir, capsys):
    code = main([write_cfg(FLAT_DRIFT + "\n[run]\nsubcommand = rate\nt = 10\n"), "--out", str(out_dir)])
    assert code == 0
    assert "2.554" in capsys.readouterr().out
    assert (out_dir / "rate.csv").exists()


def test_command_line_subcommand_overrides_run_section(write_cfg, out_dir):
    # [run] asks for varmin, which would need a [varmin] section
    cfg = write_cfg(FLAT_DRIFT + "\n[run]\nsubcommand = varmin\n")
    assert main(["rate", cfg, "--out", str(out_dir)]) == 0
    assert main([cfg, "--out", str(out_dir)]) == 2


def test_subcommand_required_somewhere(write_cfg, out_dir, capsys):
    assert main([write_cfg(FLAT_DRIFT), "--out", str(out_dir)]) == 2
    assert "no subcommand" in capsys.readouterr().err
    assert main([write_cfg(FLAT_DRIFT + "\n[run]\nsubcommand = teleport\n"), "--out", str(out_dir)]) == 2


def test_usage_error_code(write_cfg, out_dir):
    bessel = "[drift]\nvariant = pure\nbeta = 0.5\np = 1\n"
    assert main(["rate", write_cfg(bessel), "--out", str(out_dir)]) == 4


def test_survival_closed(write_cfg, out_dir):
    text = "[analytic]\nlaw = bm\n\n[run]\nx0 = 1\ntimes = 1, 4\n"
    assert main(["survival-closed", write_cfg(text), "--out", str(out_dir)]) == 0
    df = report.read_csv(out_dir / "survival_closed.csv", "survival_closed")
    assert list(df["t"]) == [1.0, 4.0]
    assert df["survival"].iloc[0] == pytest.approx(analytic.bm_survival(1.0, 1.0))
    assert df["survival"].iloc[1] < df["survival"].iloc[0]


def test_potter(write_cfg, out_dir, capsys):
    text = "[potter]\nkind = one\na = 2\ndelta = 0.1\nm = 1e6\n"
    assert main(["potter", write_cfg(text), "--out", str(out_dir)]) == 0
    assert "holds" in capsys.readouterr().out
    df = report.read_csv(out_dir / "potter.csv", "potter")
    assert bool(df["holds"].iloc[0])
    assert bool(df["sandwich_holds"].iloc[0])
    assert df["threshold"].iloc[0] == 1e6


def test_varmin_with_path_dump(write_cfg, out_dir):
    text = FLAT_DRIFT + "\n[varmin]\nn = 512\ndump_path = true\n"
    assert main(["varmin", write_cfg(text), "--out", str(out_dir)]) == 0
    df = report.read_csv(out_dir / "varmin.csv", "varmin")
    assert bool(df["converged"].iloc[0])
    assert abs(df["gap_to_infimum"].iloc[0]) < 0.05
    path = report.read_csv(out_dir / "varmin_path.csv", "path")
    assert len(path) == 513


def test_monte_carlo_rerun_is_byte_identical(write_cfg, tmp_path):
    text = (
        "[drift]\nvariant = pure\nbeta = 0\np = 0.5\n\n"
        "[sim]\nn_paths = 300\ndt_max = 1e-2\n\n"
        "[run]\nx0 = 1\ntimes = 0.25, 0.5\ntrajectory = 3\n"
    )
    cfg = write_cfg(text)
    assert main(["survival-mc", cfg, "--seed", "5", "--out", str(tmp_path / "a")]) == 0
    assert main(["survival-mc", cfg, "--seed", "5", "--workers", "2", "--out", str(tmp_path / "b")]) == 0
    for name in ("survival_mc.csv", "trajectory.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    df = report.read_csv(tmp_path / "a" / "survival_mc.csv", "estimates")
    assert list(df["seed"]) == [5, 5]


def test_two_sided_outside_interval(write_cfg, out_dir):
    text = FLAT_DRIFT + "\n[analytic]\nr1 = 0.5\nr2 = 3\n\n[run]\nx0 = 4\n"
    assert main(["two-sided", write_cfg(text), "--out", str(out_dir)]) == 4


@pytest.mark.slow
def test_acceptance_deterministic_checks():
    from halfline.mc import SimConfig

    rows = {r["check"]: r for r in acceptance_checks(SimConfig(n_paths=20_000, workers=4))}
    assert {"rate_half_one", "varmin_p0.5", "bm_survival_mc", "coupling_finest", "tailfit_exponent"} <= set(rows)
    for name in ("rate_half_one", "rate_homogeneity", "varmin_p0.3", "varmin_p0.5", "varmin_p0.7"):
        assert rows[name]["passed"], name
