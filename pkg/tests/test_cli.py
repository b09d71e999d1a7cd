import csv
import json
from pathlib import Path

import numpy as np
import pytest

from sedvel import cli, core, io, merge
from sedvel.coefficients import preset, save_coefficients


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


def snapshot(d: Path) -> dict:
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    d = tmp_path_factory.mktemp("ws")
    lat = np.linspace(37.55, 37.85, 7)
    lon = np.linspace(-122.35, -122.05, 7)
    dep = np.arange(0.0, 401.0, 25.0)
    vs = 300 + 3 * dep[None, None, :] + 20 * np.arange(7)[:, None, None] + 0 * lon[None, :, None]
    merge.BackgroundModel(lat, lon, dep, vs).to_csv(d / "bg.csv")
    rng = np.random.default_rng(0)
    merge.write_raster(merge.Raster(np.exp(rng.uniform(np.log(150), np.log(900), (6, 8))), -122.3, 37.6, 0.02), d / "vs30.asc")
    assert run("synth", "--n-profiles", 12, "--coefficients", "spatial", "--seed", 5, "--output-dir", d / "syn") == 0
    return d


# ---------------------------------------------------------------- exit codes and help


@pytest.mark.parametrize(
    "argv, code",
    [
        (["profile", "--vs30", "300"], 0),
        (["profile", "--vs30", "300", "--mode", "spatial-conditioned"], 2),
        (["profile", "--vs30", "300", "--mode", "bogus"], 2),
        (["profile"], 2),
        (["profile", "--vs30", "-5"], 2),
        (["nosuchcommand"], 2),
        (["grid", "--vs30-grid", "{ws}/vs30.asc", "--depths", "0"], 2),
        (["grid", "--vs30-grid", "{ws}/missing.asc", "--depths", "10"], 3),
        (["calibrate", "--profiles", "{ws}/missing.csv"], 3),
        (["calibrate", "--profiles", "{ws}/vs30.asc"], 3),
        (["profile", "--vs30", "300", "--coefficients", "{ws}/broken.json"], 3),
        (["profile", "--vs30", "300", "--seed", "-1"], 2),
        (["evaluate", "--profiles", "{ws}/syn/profiles.csv", "--modes", "nonsense"], 2),
        (["profile", "--vs30", "300", "--config", "{ws}/missing.toml"], 3),
        (["profile", "--vs30", "300", "--realizations", "1", "--coefficients", "{ws}/nodepth.json"], 2),
    ],
)
def test_exit_code_matrix(ws, tmp_path, monkeypatch, argv, code):
    (ws / "broken.json").write_text("{not json")
    save_coefficients(preset("stationary").with_values(range_r_m=None, sill_s=None), ws / "nodepth.json")
    monkeypatch.chdir(tmp_path)
    assert run(*[a.format(ws=ws) for a in argv]) == code


def test_numerical_failure_exit_code(monkeypatch, tmp_path):
    from sedvel import geostat

    def boom(*a, **k):
        raise geostat.NumericalError("covariance not positive definite")

    monkeypatch.setattr(cli, "cmd_profile", boom)
    monkeypatch.setitem(cli.COMMANDS, "profile", boom)
    assert run("profile", "--vs30", 300, "--output-dir", tmp_path) == 4


def test_help_lists_units_for_every_flag(capsys):
    parser = cli.build_parser()
    sub = next(a for a in parser._actions if a.__class__.__name__ == "_SubParsersAction")
    assert set(sub.choices) == {"profile", "grid", "merge", "semivariogram", "calibrate", "evaluate", "synth"}
    for name, p in sub.choices.items():
        for action in p._actions:
            if action.dest == "help":
                continue
            assert action.help and action.help.rstrip().endswith("]"), (name, action.dest)
        with pytest.raises(SystemExit) as exc:
            p.parse_args(["--help"])
        assert exc.value.code == 0
        assert "[m/s]" in capsys.readouterr().out or name in ("semivariogram", "calibrate", "evaluate", "grid")


# ---------------------------------------------------------------- commands


def test_profile_median_reproduces_vs30(tmp_path, capsys):
    assert run("profile", "--vs30", 300, "--mode", "stationary", "--output-dir", tmp_path) == 0
    p = io.read_profiles(tmp_path / "profile_median.csv")[0]
    assert core.time_averaged_vs(p) == pytest.approx(300.0, rel=5e-3)
    out = capsys.readouterr().out
    assert "realized vs30" in out and "z(vs = 1000 m/s)" in out


def test_profile_realizations_and_spatial_modes(ws, tmp_path):
    assert run("profile", "--vs30", 250, "--realizations", 3, "--output-dir", tmp_path / "a") == 0
    reals = sorted((tmp_path / "a").glob("profile_realization_*.csv"))
    assert len(reals) == 3
    r0 = io.read_profiles(reals[0])[0]
    med = io.read_profiles(tmp_path / "a" / "profile_median.csv")[0]
    np.testing.assert_array_equal(r0.thickness, med.thickness)
    assert not np.array_equal(r0.vs, med.vs) and r0.vs.min() >= 50.0
    assert run(
        "profile", "--vs30", 250, "--mode", "spatial-conditioned", "--coefficients", "spatial",
        "--field", ws / "syn" / "truth_field.csv", "--lat", 37.7, "--lon", -122.2, "--output-dir", tmp_path / "b",
    ) == 0
    assert run(
        "profile", "--vs30", 250, "--mode", "spatial-unconditional", "--coefficients", "spatial",
        "--lat", 37.7, "--lon", -122.2, "--realizations", 2, "--output-dir", tmp_path / "c",
    ) == 0
    # unconditional median has dBr = 0, so it equals the stationary-form median of the same coefficients
    assert run("profile", "--vs30", 250, "--coefficients", "spatial", "--output-dir", tmp_path / "d") == 0
    c = io.read_profiles(tmp_path / "c" / "profile_median.csv")[0]
    d = io.read_profiles(tmp_path / "d" / "profile_median.csv")[0]
    np.testing.assert_array_equal(c.vs, d.vs)
    assert (c.lat, c.lon, d.lat) == (37.7, -122.2, None)


def test_grid_counts_and_degenerate_omega(ws, tmp_path):
    assert run("grid", "--vs30-grid", ws / "vs30.asc", "--depths", "10,50,100", "--output-dir", tmp_path / "st") == 0
    manifest = json.loads((tmp_path / "st" / "manifest.json").read_text())
    assert len(manifest["outputs"]) == 3 and len(list((tmp_path / "st").glob("*.asc"))) == 3
    flat = preset("spatial").with_values(omega=0.0)
    save_coefficients(flat, tmp_path / "flat.json")
    assert run(
        "grid", "--vs30-grid", ws / "vs30.asc", "--depths", 50, "--mode", "spatial-conditioned",
        "--coefficients", tmp_path / "flat.json", "--field", ws / "syn" / "truth_field.csv", "--output-dir", tmp_path / "c0",
    ) == 0
    assert run("grid", "--vs30-grid", ws / "vs30.asc", "--depths", 50, "--coefficients", tmp_path / "flat.json",
               "--output-dir", tmp_path / "s0") == 0
    a = merge.read_raster(tmp_path / "c0" / "vs_mean_spatial-conditioned_50m.asc")
    b = merge.read_raster(tmp_path / "s0" / "vs_mean_stationary_50m.asc")
    np.testing.assert_array_equal(a.values, b.values)
    sd = merge.read_raster(tmp_path / "c0" / "vs_sd_spatial-conditioned_50m.asc")
    assert np.all(sd.values == 0)


def test_grid_conditioned_matches_unconditional_far_away(ws, tmp_path):
    # a one-point field far west of the grid: no influence beyond 20 ell
    (tmp_path / "f.csv").write_text("id,lat,lon,dBr_mean,dBr_sd\nfar,37.7,-124.5,0.8,0.0\n")
    common = ["--vs30-grid", ws / "vs30.asc", "--depths", 30, "--coefficients", "spatial"]
    assert run("grid", *common, "--mode", "spatial-conditioned", "--field", tmp_path / "f.csv", "--output-dir", tmp_path / "c") == 0
    assert run("grid", *common, "--mode", "spatial-unconditional", "--output-dir", tmp_path / "u") == 0
    c = merge.read_raster(tmp_path / "c" / "vs_mean_spatial-conditioned_30m.asc").values
    u = merge.read_raster(tmp_path / "u" / "vs_mean_spatial-unconditional_30m.asc").values
    np.testing.assert_allclose(c, u, rtol=1e-6)


def test_merge_command(ws, tmp_path):
    assert run("merge", "--background", ws / "bg.csv", "--sites", ws / "syn" / "sites.csv", "--output-dir", tmp_path) == 0
    merged = io.read_profiles(tmp_path / "merged_profiles.csv")
    assert len(merged) == 12
    bg = merge.BackgroundModel.from_csv(ws / "bg.csv")
    for p in merged:
        ref = bg.profile(p.lat, p.lon, p.thickness)
        assert np.all(p.vs >= ref.vs * (1 - 1e-5))
        assert np.all(p.vs[p.top_depth >= 400 - 1e-9] == pytest.approx(ref.vs[p.top_depth >= 400 - 1e-9], rel=1e-5))
    rows = list(csv.DictReader(open(tmp_path / "merge_summary.csv")))
    assert [r["id"] for r in rows] == [p.id for p in merged]
    assert run("merge", "--sites", ws / "syn" / "sites.csv") == 2


def test_semivariogram_recovers_table_structure(tmp_path):
    assert run("synth", "--n-profiles", 200, "--depth-correlated", "--seed", 4, "--output-dir", tmp_path / "s") == 0
    assert run(
        "semivariogram", "--profiles", tmp_path / "s" / "profiles.csv", "--sites", tmp_path / "s" / "sites.csv",
        "--vs30-source", "metadata", "--output-dir", tmp_path / "v",
    ) == 0
    fit = json.loads((tmp_path / "v" / "semivariogram.json").read_text())
    assert fit["range_r_m"] == pytest.approx(11.93, rel=0.15)
    assert fit["sill_s"] == pytest.approx(0.082, rel=0.10)
    assert (tmp_path / "v" / "semivariogram.csv").read_text().startswith("lag_m,gamma,count\n")


def test_calibrate_zero_iterations_is_not_a_failure(ws, tmp_path, caplog):
    code = run("calibrate", "--profiles", ws / "syn" / "profiles.csv", "--sites", ws / "syn" / "sites.csv",
               "--max-iter", 0, "--output-dir", tmp_path)
    assert code == 0
    doc = json.loads((tmp_path / "fit.json").read_text())
    assert doc["status"] == "not-converged"
    assert any("not-converged" in r.getMessage() for r in caplog.records)
    assert "MAP" in (tmp_path / "summary.txt").read_text()


def test_calibrate_spatial_writes_field(ws, tmp_path):
    code = run("calibrate", "--profiles", ws / "syn" / "profiles.csv", "--sites", ws / "syn" / "sites.csv",
               "--model", "spatial", "--restarts", 0, "--max-iter", 20, "--output-dir", tmp_path)
    assert code == 0
    field = (tmp_path / "spatial_field.csv").read_text().splitlines()
    assert field[0] == "id,lat,lon,dBr_mean,dBr_sd" and len(field) == 13
    coeffs = json.loads((tmp_path / "coefficients.json").read_text())
    assert coeffs["omega"] is not None and coeffs["ell_km"] is not None


def test_evaluate_identity_and_row_count(ws, tmp_path):
    code = run("evaluate", "--profiles", ws / "syn" / "profiles.csv", "--sites", ws / "syn" / "sites.csv",
               "--modes", "identity,stationary", "--ensemble-count", 10, "--output-dir", tmp_path)
    assert code == 0
    profiles = io.attach_sites(io.read_profiles(ws / "syn" / "profiles.csv"), io.read_sites(ws / "syn" / "sites.csv"))
    from sedvel.siteresponse import band_edges

    n_rows = sum(len(band_edges(core.fp_quarter_wavelength(p))) for p in profiles) * 7
    for mode in ("identity", "stationary"):
        rows = list(csv.reader(open(tmp_path / f"gof_{mode}.csv")))[2:]
        assert len(rows) == n_rows
    assert {float(r[4]) for r in list(csv.reader(open(tmp_path / "gof_identity.csv")))[2:]} == {0.0}
    agg = list(csv.DictReader(open(tmp_path / "gof_stationary_aggregate.csv")))
    assert {r["band"] for r in agg} == {"low", "mid", "high"}
    summary = (tmp_path / "summary.txt").read_text()
    assert "GOF summary identity" in summary and "low band" in summary


def test_config_file_and_flag_override(tmp_path):
    (tmp_path / "run.toml").write_text('seed = 3\noutput_dir = "out"\n[profile]\nvs30 = 450.0\nrealizations = 1\n')
    assert run("profile", "--config", tmp_path / "run.toml") == 0
    a = io.read_profiles(tmp_path / "out" / "profile_median.csv")[0]
    assert core.time_averaged_vs(a) == pytest.approx(450.0, rel=5e-3)
    assert run("profile", "--config", tmp_path / "run.toml", "--vs30", 200) == 0
    b = io.read_profiles(tmp_path / "out" / "profile_median.csv")[0]
    assert core.time_averaged_vs(b) == pytest.approx(200.0, rel=5e-3)


def test_seed_changes_realizations(tmp_path):
    run("profile", "--vs30", 300, "--realizations", 1, "--seed", 1, "--output-dir", tmp_path / "a")
    run("profile", "--vs30", 300, "--realizations", 1, "--seed", 2, "--output-dir", tmp_path / "b")
    assert (tmp_path / "a" / "profile_realization_000.csv").read_bytes() != (tmp_path / "b" / "profile_realization_000.csv").read_bytes()


# ---------------------------------------------------------------- determinism


def _all_commands(ws, out: Path, threads: int):
    t = ["--threads", threads, "--seed", 11]
    syn = ws / "syn"
    return [
        ["profile", "--vs30", 300, "--realizations", 2, "--output-dir", out / "profile", *t],
        ["grid", "--vs30-grid", ws / "vs30.asc", "--depths", "10,50", "--mode", "spatial-conditioned", "--coefficients",
         "spatial", "--field", syn / "truth_field.csv", "--monte-carlo", 50, "--output-dir", out / "grid", *t],
        ["merge", "--background", ws / "bg.csv", "--sites", syn / "sites.csv", "--output-dir", out / "merge", *t],
        ["semivariogram", "--profiles", syn / "profiles.csv", "--min-pairs", 5, "--output-dir", out / "sv", *t],
        ["calibrate", "--profiles", syn / "profiles.csv", "--sites", syn / "sites.csv", "--max-iter", 30, "--restarts", 1,
         "--output-dir", out / "cal", *t],
        ["evaluate", "--profiles", syn / "profiles.csv", "--sites", syn / "sites.csv", "--modes", "stationary,realization",
         "--realizations", 2, "--ensemble-count", 10, "--output-dir", out / "eval", *t],
        ["synth", "--n-profiles", 20, "--output-dir", out / "synth", *t],
    ]


@pytest.mark.slow
def test_every_command_is_byte_deterministic_across_threads(ws, tmp_path):
    snaps = []
    for tag, threads in (("a", 1), ("b", 1), ("c", 3)):
        for argv in _all_commands(ws, tmp_path / tag, threads):
            assert run(*argv) == 0, argv
        snaps.append(snapshot(tmp_path / tag))
    assert len(snaps[0]) >= 20
    assert snaps[0] == snaps[1] == snaps[2]
