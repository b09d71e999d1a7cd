"""Command-line interface: ``sedvel <command> [options]``.

Every option can also come from a TOML document given with ``--config``.
Shared keys sit at the top level and per-command keys in a table named after
the command (``[profile]``, ``[grid]``, ...). A flag given on the command line
overrides its config key. Relative paths in the config resolve against the
config file's directory.

Exit codes: 0 success, 2 usage error, 3 data or parse error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import calibrate, core, geostat, io, merge, siteresponse
from .coefficients import CoefficientSet, resolve_coefficients, save_coefficients

log = logging.getLogger("sedvel")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
PROFILE_MODES = ("stationary", "spatial-conditioned", "spatial-unconditional")
GRID_MODES = PROFILE_MODES + ("background",)
EVAL_MODES = ("identity", "stationary", "spatial", "background", "realization", "spatial-realization")
PATH_KEYS = {"coefficients", "profiles", "sites", "field", "vs30_grid", "background", "output_dir", "rock_depth_grid"}


class UsageError(Exception):
    """Bad or missing option; exit code 2."""


class DataError(Exception):
    """Unusable input data; exit code 3."""


# --------------------------------------------------------------------------
# option resolution
# --------------------------------------------------------------------------


class Options:
    """Flag values layered over the config document."""

    def __init__(self, args: argparse.Namespace, config: dict, base_dir: Path):
        self.args = args
        self.command = args.command
        self.config = config
        self.base_dir = base_dir

    def get(self, key: str, default=None):
        val = getattr(self.args, key, None)
        if val is not None:
            return val
        section = self.config.get(self.command, {})
        if key in section:
            val = section[key]
        elif key in self.config and not isinstance(self.config[key], dict):
            val = self.config[key]
        else:
            return default
        if key in PATH_KEYS and isinstance(val, str):
            p = Path(val)
            return str(p if p.is_absolute() else self.base_dir / p)
        return val

    def require(self, key: str, what: str):
        val = self.get(key)
        if val is None:
            raise UsageError(f"{self.command}: {what} is required (--{key.replace('_', '-')} or config key {key!r})")
        return val

    def section(self, key: str) -> dict:
        return dict(self.config.get(self.command, {}).get(key, {}))

    @property
    def seed(self) -> int:
        seed = self.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
            raise UsageError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
        return seed

    @property
    def threads(self) -> int:
        t = int(self.get("threads", 1))
        if t < 1:
            raise UsageError("threads must be >= 1")
        return t

    def output_dir(self) -> Path:
        out = Path(self.get("output_dir", "."))
        out.mkdir(parents=True, exist_ok=True)
        return out


def _floats(text, what: str) -> list[float]:
    if text is None:
        return []
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"{what}: {exc}") from exc


def _words(text) -> list[str]:
    if text is None:
        return []
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [w.strip() for w in str(text).split(",") if w.strip()]


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, np.uint64)[0])


def _coefficients(opts: Options) -> CoefficientSet:
    try:
        return resolve_coefficients(opts.get("coefficients"))
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc


def _field(opts: Options, coeffs: CoefficientSet, required: bool) -> geostat.SpatialField | None:
    path = opts.get("field")
    if path is None:
        if required:
            raise UsageError(f"{opts.command}: a spatial field file is required (--field)")
        return None
    if not coeffs.has_spatial:
        raise UsageError(f"{opts.command}: spatial field given but coefficients lack ell_km/omega")
    return geostat.read_spatial_field(path, coeffs.omega, coeffs.ell_km)


def _profiles(opts: Options) -> list[core.LayeredProfile]:
    profiles = io.read_profiles(opts.require("profiles", "a profile CSV"))
    sites = opts.get("sites")
    if sites is not None:
        profiles = io.attach_sites(profiles, io.read_sites(sites))
    return profiles


def _depth_block(opts: Options, coeffs: CoefficientSet) -> tuple[float, float]:
    sill = opts.get("depth_sill", coeffs.sill_s)
    rng = opts.get("depth_range", coeffs.range_r_m)
    if sill is None or rng is None:
        raise UsageError(f"{opts.command}: coefficients lack range_r_m/sill_s; give --depth-sill and --depth-range")
    return float(sill), float(rng)


def _write_json(path: Path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _site_dbr(mode: str, coeffs, field, lat, lon) -> tuple[float, float]:
    """Mean and sd of dBr at a site for a profile mode."""
    if mode == "stationary":
        return 0.0, 0.0
    if not coeffs.has_spatial:
        raise UsageError(f"mode {mode} needs coefficients with ell_km/omega")
    if mode == "spatial-unconditional":
        return 0.0, float(coeffs.omega)
    x, y = field.project([lat], [lon])
    m, s = geostat.krige_dbr(field, x, y)
    return float(m[0]), float(s[0])


def cmd_profile(opts: Options) -> int:
    vs30 = float(opts.require("vs30", "--vs30"))
    if not vs30 > 0:
        raise UsageError("vs30 must be positive")
    mode = opts.get("mode", "stationary")
    lat, lon = opts.get("lat"), opts.get("lon")
    if mode != "stationary" and (lat is None or lon is None):
        raise UsageError(f"mode {mode} needs --lat and --lon")
    depth_max = float(opts.get("depth_max", 100.0))
    n_real = int(opts.get("realizations", 0))
    if not depth_max > 0 or n_real < 0:
        raise UsageError("need depth_max > 0 and realizations >= 0")
    coeffs = _coefficients(opts)
    field = _field(opts, coeffs, required=mode == "spatial-conditioned")
    dbr_mean, dbr_sd = _site_dbr(mode, coeffs, field, lat, lon)
    out = opts.output_dir()
    params = core.ProfileParams.from_vs30(vs30, coeffs, dbr_mean)
    median = core.discretize(params, depth_max, id="median", lat=lat, lon=lon)
    io.write_profiles([median], out / "profile_median.csv")
    print(f"median: realized vs30 {core.time_averaged_vs(median):.6g} m/s, "
          f"z(vs = 1000 m/s) {merge.z_vs_threshold(params):.6g} m, dBr {dbr_mean:.6g}")
    if n_real:
        sill, rng_r = _depth_block(opts, coeffs)
        total = coeffs.sigma**2 if opts.get("eta", True) else sill
        if total < sill:
            raise UsageError(f"sigma^2 = {total:.4g} is below the depth sill {sill:.4g}")
        for r in range(n_real):
            rng = np.random.default_rng(geostat.derive_seed(opts.seed, "profile", r))
            dbr = dbr_mean + dbr_sd * rng.standard_normal()
            p = core.discretize(core.ProfileParams.from_vs30(vs30, coeffs, dbr), depth_max, id="median", lat=lat, lon=lon)
            real = geostat.realize_profile(p, sill, rng_r, rng, total_var=total, index=r)
            io.write_profiles([real], out / f"profile_realization_{r:03d}.csv")
            print(f"realization {r}: realized vs30 {core.time_averaged_vs(real):.6g} m/s")
    return EXIT_OK


def cmd_grid(opts: Options) -> int:
    depths = _floats(opts.require("depths", "--depths"), "depths")
    if any(not d > 0 for d in depths):
        raise UsageError("depths must be positive")
    mode = opts.get("mode", "stationary")
    grid = merge.read_vs30_grid(opts.require("vs30_grid", "a Vs30 grid"))
    coeffs = _coefficients(opts)
    field = _field(opts, coeffs, required=mode == "spatial-conditioned")
    if mode != "stationary" and mode != "background" and not coeffs.has_spatial:
        raise UsageError(f"mode {mode} needs coefficients with ell_km/omega")
    background = merge.BackgroundModel.from_csv(opts.get("background")) if opts.get("background") else None
    if mode == "background" and background is None:
        raise UsageError("mode background needs --background")
    region = _floats(opts.get("region"), "region") or None
    if region is not None and len(region) != 4:
        raise UsageError("region is lon_min,lat_min,lon_max,lat_max")
    mc = int(opts.get("monte_carlo", 0))
    out = opts.output_dir()
    manifest = {"mode": mode, "outputs": []}
    kind = mode.replace("-", "_")
    for depth in depths:
        res = merge.grid_slice(
            grid, depth, kind, coeffs, field, background, region,
            monte_carlo=mc, seed=geostat.derive_seed(opts.seed, "grid", f"{depth:g}"),
        )
        tag = f"{mode}_{depth:g}m"
        merge.write_raster(res.mean, out / f"vs_mean_{tag}.asc")
        entry = {"depth_m": depth, "mean": f"vs_mean_{tag}.asc"}
        if mode.startswith("spatial"):
            merge.write_raster(res.sd, out / f"vs_sd_{tag}.asc")
            entry["sd"] = f"vs_sd_{tag}.asc"
        manifest["outputs"].append(entry)
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {len(depths)} depth slice(s) to {out}")
    return EXIT_OK


def _sites_for_merge(opts: Options) -> list[dict]:
    if opts.get("sites") is not None:
        table = io.read_sites(opts.get("sites"))
        return [{"id": k, "lat": v["lat"], "lon": v["lon"], "vs30": v["vs30_mps"]} for k, v in table.items()]
    vs30, lat, lon = opts.get("vs30"), opts.get("lat"), opts.get("lon")
    if vs30 is None or lat is None or lon is None:
        raise UsageError("merge needs --sites, or --vs30 with --lat and --lon")
    return [{"id": "site", "lat": float(lat), "lon": float(lon), "vs30": float(vs30)}]


def cmd_merge(opts: Options) -> int:
    background = merge.BackgroundModel.from_csv(opts.require("background", "a background model"))
    mode = opts.get("mode", "stationary")
    coeffs = _coefficients(opts)
    field = _field(opts, coeffs, required=mode == "spatial-conditioned")
    depth_max = float(opts.get("depth_max", background.depth[-1]))
    rock = opts.get("rock_depth")
    layering = core.DEFAULT_RULE.thicknesses(depth_max)
    rows = []
    merged = []
    for s in _sites_for_merge(opts):
        dbr, _ = _site_dbr(mode, coeffs, field, s["lat"], s["lon"])
        svm = core.median_profile(s["vs30"], coeffs, depth_max, dbr, id=s["id"], lat=s["lat"], lon=s["lon"])
        bg = background.profile(s["lat"], s["lon"], layering, id=s["id"])
        m = merge.merge_profile(svm, bg, rock_depth=None if rock is None else float(rock))
        merged.append(m)
        above = m.vs >= merge.VS_LIMIT
        z_t = float(m.top_depth[np.argmax(above)]) if above.any() else math.nan
        rows.append((s["id"], float(s["vs30"]), z_t))
    out = opts.output_dir()
    io.write_profiles(merged, out / "merged_profiles.csv")
    io.write_rows(out / "merge_summary.csv", ["id", "vs30_mps", "z_1000_m"], rows)
    print(f"merged {len(merged)} profile(s) onto the background model")
    return EXIT_OK


def cmd_semivariogram(opts: Options) -> int:
    profiles = _profiles(opts)
    coeffs = _coefficients(opts)
    field = _field(opts, coeffs, required=False)
    source = opts.get("vs30_source", "profile")
    width = float(opts.get("bin_width", 2.0))
    max_lag = float(opts.get("max_lag", 60.0))
    if not (width > 0 and max_lag > width):
        raise UsageError("need bin_width > 0 and max_lag > bin_width")
    resid = []
    for p in profiles:
        dbr = 0.0
        if field is not None:
            x, y = field.project([p.lat], [p.lon])
            dbr = float(geostat.krige_dbr(field, x, y)[0][0])
        vs30 = calibrate.profile_vs30(p, source)
        resid.append(core.residuals(p, core.ProfileParams.from_vs30(vs30, coeffs, dbr)))
    edges = np.arange(0.0, max_lag + 0.5 * width, width)
    emp = geostat.empirical_semivariogram(resid, edges, int(opts.get("min_pairs", 30)))
    try:
        fit = geostat.fit_semivariogram(emp)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out = opts.output_dir()
    fit.to_csv(out / "semivariogram.csv")
    fit.write_sidecar(out / "semivariogram.json")
    print("Along-depth semivariogram")
    print(f"  correlation length r  {fit.range_r:.4f} m   (se {fit.se_r:.4f})")
    print(f"  semi-variance s       {fit.sill_s:.4f}     (se {fit.se_s:.4f})")
    return EXIT_OK


def _priors(opts: Options) -> dict:
    priors = calibrate.default_priors()
    for name, spec in opts.section("priors").items():
        if name not in priors:
            raise UsageError(f"unknown prior parameter {name!r}")
        try:
            priors[name] = calibrate.Prior(*spec)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"prior {name}: {exc}") from exc
    return priors


def cmd_calibrate(opts: Options) -> int:
    profiles = _profiles(opts)
    if not profiles:
        raise DataError("no profiles to calibrate")
    model = opts.get("model", "stationary")
    options = calibrate.FitOptions(
        max_iter=int(opts.get("max_iter", 500)),
        n_restarts=int(opts.get("restarts", 5)),
        seed=_int_seed(geostat.derive_seed(opts.seed, "calibrate")),
        vs30_source=opts.get("vs30_source", "profile"),
    )
    base = _coefficients(opts)
    priors = _priors(opts)
    if model == "stationary":
        result = calibrate.map_fit(profiles, priors, "stationary", init=base, options=options)
    else:
        result = calibrate.map_fit(profiles, priors, "spatial", options=options, base=base)
    out = opts.output_dir()
    with open(out / "fit.json", "w") as fh:
        fh.write(result.to_json())
        fh.write("\n")
    save_coefficients(result.coefficients, out / "coefficients.json")
    if model == "spatial":
        geostat.write_spatial_field(result.spatial_field(), out / "spatial_field.csv")
    summary = result.summary()
    (out / "summary.txt").write_text(summary + "\n")
    print(summary)
    if not result.converged:
        log.warning("calibration status %s after %d iterations (scaled gradient %.3g)",
                    result.status, result.iterations, result.grad_norm)
    return EXIT_OK


def _generators(opts: Options, modes, coeffs) -> dict:
    gens = {}
    field = None
    if any(m.startswith("spatial") for m in modes):
        field = _field(opts, coeffs, required=True)
    count = int(opts.get("realizations", 10))
    seed = _int_seed(geostat.derive_seed(opts.seed, "evaluate"))
    for mode in modes:
        if mode == "identity":
            gens[mode] = lambda p: p
        elif mode == "stationary":
            gens[mode] = siteresponse.median_candidates(coeffs)
        elif mode == "spatial":
            gens[mode] = siteresponse.median_candidates(coeffs, field)
        elif mode == "background":
            bg = merge.BackgroundModel.from_csv(opts.require("background", "a background model for background mode"))
            gens[mode] = siteresponse.background_candidates(bg)
        elif mode in ("realization", "spatial-realization"):
            sill, rng_r = _depth_block(opts, coeffs)
            total = coeffs.sigma**2 if opts.get("eta", False) else sill
            base = siteresponse.median_candidates(coeffs, field if mode == "spatial-realization" else None)
            gens[mode] = siteresponse.realization_candidates(base, sill, rng_r, count, seed, total)
        else:
            raise UsageError(f"unknown evaluate mode {mode!r}; choose from {', '.join(EVAL_MODES)}")
    return gens


def cmd_evaluate(opts: Options) -> int:
    profiles = _profiles(opts)
    if not profiles:
        raise DataError("evaluate needs at least one usable profile")
    modes = _words(opts.get("modes", "stationary"))
    coeffs = _coefficients(opts)
    gens = _generators(opts, modes, coeffs)
    ens_opts = opts.section("ensemble")
    settings = siteresponse.EnsembleSettings(
        f_lo=float(opts.get("f_lo", ens_opts.get("f_lo", 0.1))),
        f_hi=float(opts.get("f_hi", ens_opts.get("f_hi", 10.0))),
        count=int(opts.get("ensemble_count", ens_opts.get("count", 20))),
        dt=float(opts.get("dt", ens_opts.get("dt", 0.005))),
        duration=float(opts.get("duration", ens_opts.get("duration", 40.96))),
    )
    ensemble = siteresponse.ensemble_from(settings)
    site = siteresponse.SiteOptions(damping=float(opts.get("damping", 0.02)))
    options = siteresponse.EvaluationOptions(site=site)
    threads = opts.threads
    with (ThreadPoolExecutor(threads) if threads > 1 else nullcontext()) as ex:
        reports = siteresponse.evaluate_modes(profiles, gens, ensemble, options, ex)
    out = opts.output_dir()
    blocks = []
    for mode, rep in reports.items():
        if not rep.rows:
            raise DataError(f"mode {mode}: no usable profiles ({len(rep.skipped)} skipped)")
        rep.write(out / f"gof_{mode}.csv", out / f"gof_{mode}_aggregate.csv")
        blocks.append(rep.summary())
    text = "\n".join(blocks)
    (out / "summary.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_synth(opts: Options) -> int:
    coeffs = _coefficients(opts)
    kw = {}
    if opts.get("n_profiles") is not None:
        kw["n_profiles"] = int(opts.get("n_profiles"))
    for key in ("vs30_range", "depth_range", "extent_km", "origin"):
        vals = _floats(opts.get(key), key)
        if vals:
            if len(vals) != 2:
                raise UsageError(f"{key} takes two values")
            kw[key] = tuple(vals)
    if opts.get("depth_correlated", False):
        sill, rng_r = _depth_block(opts, coeffs)
        kw.update(depth_sill=sill, depth_range_m=rng_r)
    try:
        layout = calibrate.SynthLayout(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    noise = opts.get("noise_sd")
    ds = calibrate.synth_dataset(coeffs, layout, seed=_int_seed(geostat.derive_seed(opts.seed, "synth")),
                                 noise_sd=None if noise is None else float(noise))
    out = opts.output_dir()
    io.write_profiles(ds.profiles, out / "profiles.csv")
    io.write_rows(out / "sites.csv", io.SITE_HEADER, [(p.id, p.lat, p.lon, p.vs30) for p in ds.profiles])
    if coeffs.has_spatial:
        geostat.write_spatial_field(ds.truth_field(coeffs.omega, coeffs.ell_km), out / "truth_field.csv")
    print(f"wrote {len(ds.profiles)} synthetic profiles to {out}")
    return EXIT_OK


COMMANDS = {
    "profile": cmd_profile,
    "grid": cmd_grid,
    "merge": cmd_merge,
    "semivariogram": cmd_semivariogram,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
}


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML configuration document [path]")
    p.add_argument("--output-dir", dest="output_dir", help="directory for outputs [path]")
    p.add_argument("--seed", type=int, help="base random seed, unsigned 64-bit [integer]")
    p.add_argument("--threads", type=int, help="maximum worker threads [count]")
    p.add_argument("--coefficients", help="coefficient preset name or JSON file [name or path]")
    p.add_argument("-v", "--verbose", action="store_true", default=None, help="log progress to stderr [flag]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sedvel", description="Sedimentary Vs models, merging, calibration and site response.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("profile", help="median profile and depth-variability realizations at one site")
    _common(p)
    p.add_argument("--vs30", type=float, help="site Vs30 [m/s]")
    p.add_argument("--lat", type=float, help="site latitude [deg]")
    p.add_argument("--lon", type=float, help="site longitude [deg]")
    p.add_argument("--mode", choices=PROFILE_MODES, help="slope-adjustment treatment [choice]")
    p.add_argument("--field", help="spatial field CSV id,lat,lon,dBr_mean,dBr_sd [path]")
    p.add_argument("--depth-max", dest="depth_max", type=float, help="profile depth, default 100 [m]")
    p.add_argument("--realizations", type=int, help="number of stochastic profiles [count]")
    p.add_argument("--depth-sill", dest="depth_sill", type=float, help="along-depth semi-variance [ln-units^2]")
    p.add_argument("--depth-range", dest="depth_range", type=float, help="along-depth correlation length [m]")
    p.add_argument("--no-eta", dest="eta", action="store_false", default=None,
                   help="omit the per-profile constant so total variance equals the sill [flag]")

    p = sub.add_parser("grid", help="depth slices of vs over a Vs30 grid")
    _common(p)
    p.add_argument("--vs30-grid", dest="vs30_grid", help="Vs30 raster [path]")
    p.add_argument("--depths", help="comma-separated slice depths [m]")
    p.add_argument("--mode", choices=GRID_MODES, help="model for the slices [choice]")
    p.add_argument("--field", help="spatial field CSV [path]")
    p.add_argument("--background", help="background model CSV lat,lon,depth_m,vs_mps [path]")
    p.add_argument("--region", help="crop box lon_min,lat_min,lon_max,lat_max [deg]")
    p.add_argument("--monte-carlo", dest="monte_carlo", type=int, help="dBr draws for the sd raster, 0 for first order [count]")

    p = sub.add_parser("merge", help="splice model profiles onto a background model")
    _common(p)
    p.add_argument("--background", help="background model CSV [path]")
    p.add_argument("--sites", help="site table id,lat,lon,vs30_mps [path]")
    p.add_argument("--vs30", type=float, help="single-site Vs30 [m/s]")
    p.add_argument("--lat", type=float, help="single-site latitude [deg]")
    p.add_argument("--lon", type=float, help="single-site longitude [deg]")
    p.add_argument("--mode", choices=PROFILE_MODES, help="slope-adjustment treatment [choice]")
    p.add_argument("--field", help="spatial field CSV [path]")
    p.add_argument("--depth-max", dest="depth_max", type=float, help="merged column depth, default background depth [m]")
    p.add_argument("--rock-depth", dest="rock_depth", type=float, help="depth where the background takes over [m]")

    p = sub.add_parser("semivariogram", help="along-depth semivariogram of model residuals")
    _common(p)
    p.add_argument("--profiles", help="measured profile CSV [path]")
    p.add_argument("--sites", help="site table with Vs30 metadata [path]")
    p.add_argument("--field", help="spatial field CSV for kriged dBr [path]")
    p.add_argument("--vs30-source", dest="vs30_source", choices=("profile", "metadata"), help="conditioning Vs30 [choice]")
    p.add_argument("--bin-width", dest="bin_width", type=float, help="lag bin width, default 2 [m]")
    p.add_argument("--max-lag", dest="max_lag", type=float, help="largest lag, default 60 [m]")
    p.add_argument("--min-pairs", dest="min_pairs", type=int, help="pairs needed to use a bin, default 30 [count]")

    p = sub.add_parser("calibrate", help="MAP fit of the stationary or spatial model")
    _common(p)
    p.add_argument("--profiles", help="measured profile CSV [path]")
    p.add_argument("--sites", help="site table with Vs30 metadata [path]")
    p.add_argument("--model", choices=("stationary", "spatial"), help="model to fit [choice]")
    p.add_argument("--max-iter", dest="max_iter", type=int, help="optimizer iterations per start [count]")
    p.add_argument("--restarts", type=int, help="extra starts drawn from the priors [count]")
    p.add_argument("--vs30-source", dest="vs30_source", choices=("profile", "metadata"), help="conditioning Vs30 [choice]")

    p = sub.add_parser("evaluate", help="site-response GOF of model columns against measured ones")
    _common(p)
    p.add_argument("--profiles", help="reference profile CSV [path]")
    p.add_argument("--sites", help="site table with Vs30 metadata [path]")
    p.add_argument("--modes", help=f"comma-separated candidate modes from {', '.join(EVAL_MODES)} [choice list]")
    p.add_argument("--field", help="spatial field CSV [path]")
    p.add_argument("--background", help="background model CSV [path]")
    p.add_argument("--realizations", type=int, help="realizations per profile in realization modes [count]")
    p.add_argument("--depth-sill", dest="depth_sill", type=float, help="along-depth semi-variance [ln-units^2]")
    p.add_argument("--depth-range", dest="depth_range", type=float, help="along-depth correlation length [m]")
    p.add_argument("--eta", dest="eta", action="store_true", default=None,
                   help="add the per-profile constant so total variance is sigma^2 [flag]")
    p.add_argument("--ensemble-count", dest="ensemble_count", type=int, help="Ricker wavelets in the input ensemble [count]")
    p.add_argument("--f-lo", dest="f_lo", type=float, help="lowest wavelet centre frequency [Hz]")
    p.add_argument("--f-hi", dest="f_hi", type=float, help="highest wavelet centre frequency [Hz]")
    p.add_argument("--dt", type=float, help="input time step [s]")
    p.add_argument("--duration", type=float, help="input record length [s]")
    p.add_argument("--damping", type=float, help="soil damping ratio [fraction]")

    p = sub.add_parser("synth", help="synthetic profile dataset drawn from the model")
    _common(p)
    p.add_argument("--n-profiles", dest="n_profiles", type=int, help="number of profiles [count]")
    p.add_argument("--vs30-range", dest="vs30_range", help="Vs30 bounds lo,hi [m/s]")
    p.add_argument("--depth-range", dest="depth_range", help="profile depth bounds lo,hi [m]")
    p.add_argument("--extent", dest="extent_km", help="site box size x,y [km]")
    p.add_argument("--origin", help="centre of the site box lat,lon [deg]")
    p.add_argument("--noise-sd", dest="noise_sd", type=float, help="layer ln-noise sd overriding sigma [ln-units]")
    p.add_argument("--depth-correlated", dest="depth_correlated", action="store_true", default=None,
                   help="correlate the noise along depth with the coefficients' depth block [flag]")
    return parser


def _load_config(path: str | None) -> tuple[dict, Path]:
    if path is None:
        return {}, Path.cwd()
    p = Path(path)
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh), p.resolve().parent
    except FileNotFoundError as exc:
        raise DataError(f"config file {path} not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"config file {path}: {exc}") from exc


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        config, base_dir = _load_config(args.config)
        opts = Options(args, config, base_dir)
        opts.seed, opts.threads  # validate shared options before any work
        return COMMANDS[args.command](opts)
    except UsageError as exc:
        print(f"sedvel {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (geostat.NumericalError, np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        print(f"sedvel {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError, KeyError) as exc:
        print(f"sedvel {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
