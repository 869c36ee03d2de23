"""Experiment orchestration: config files, truth caching, reports.

One experiment = one model + initial law + ensemble size + snapshot
times.  The run pipeline is: simulate L member trajectories, filter the
hidden block along each observed trajectory, pick the kernel bandwidth
from the observed endpoints, assemble the joint mixture, evaluate the
requested marginals on truth-derived grids, and score them against a
large-ensemble Monte Carlo reference with relative entropy.  Everything
is deterministic given the config, including CSV bytes.

Config files are flat key/value text with typed sections (INI); the
grammar is documented in the package README and validated by
:func:`validate_config`.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .cg_filter import FilterInit, init_states, run_filter_ensemble
from .density import DensityField, GridAxis, GridSpec, auto_grid
from .kde import bandwidth_diag, kde_on_grid
from .metrics import KLReport, SweepRow, l_sweep, relative_entropy, sample_moments, sweep_rows_to_csv
from .mixture import (
    assemble_joint,
    evaluate_on_grid,
    marginal,
    mixture_mean_cov,
    mixture_moments,
)
from .models import build_model
from .simulate import DimInit, InitialCondition, simulate_ensemble, simulate_snapshots

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunReport",
    "parse_config",
    "parse_config_text",
    "load_named_config",
    "available_configs",
    "validate_config",
    "run_experiment",
    "sweep_experiment",
    "compare_kde_vs_mc",
]


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    model: str
    L: int
    L_mc: int
    dt: float
    seed: int
    truth_seed: int
    snapshots: tuple[float, ...]
    out: str
    init: tuple[tuple[str, str, tuple[float, ...]], ...]  # (var, kind, params)
    overrides: tuple[tuple[str, float], ...] = ()
    filter_mode: str = "kde_diagonal"
    filter_epsilon: float | None = None
    thin: int = 1
    marginals_1d: tuple[str, ...] = ()
    marginals_2d: tuple[tuple[str, str], ...] = ()
    density_at: tuple[float, ...] | None = None  # default: every snapshot
    grid_mode: str = "auto"
    grid_axes: tuple[tuple[str, float, float, int], ...] = ()
    span_sigma: float = 6.0
    points_1d: int = 200
    points_2d: int = 100
    sweep_L: tuple[int, ...] = ()
    sweep_seeds: int = 5
    cache: str | None = None
    figures: bool = True

    # -- serialization ------------------------------------------------------

    def to_text(self) -> str:
        cp = configparser.ConfigParser()
        cp["experiment"] = {
            "name": self.name,
            "model": self.model,
            "L": str(self.L),
            "L_mc": str(self.L_mc),
            "dt": f"{self.dt:.17g}",
            "seed": str(self.seed),
            "truth_seed": str(self.truth_seed),
            "snapshots": ", ".join(f"{t:.17g}" for t in self.snapshots),
            "out": self.out,
        }
        if self.cache:
            cp["experiment"]["cache"] = self.cache
        if not self.figures:
            cp["experiment"]["figures"] = "false"
        if self.overrides:
            cp["model"] = {k: f"{v:.17g}" for k, v in self.overrides}
        cp["init"] = {
            var: kind + (" " + " ".join(f"{p:.17g}" for p in params) if params else "")
            for var, kind, params in self.init
        }
        filt = {"init_mode": self.filter_mode, "thin": str(self.thin)}
        if self.filter_epsilon is not None:
            filt["epsilon"] = f"{self.filter_epsilon:.17g}"
        cp["filter"] = filt
        marg = {}
        if self.marginals_1d:
            marg["1d"] = ", ".join(self.marginals_1d)
        if self.marginals_2d:
            marg["2d"] = ", ".join(f"{a}:{b}" for a, b in self.marginals_2d)
        if self.density_at is not None:
            marg["density_at"] = ", ".join(f"{t:.17g}" for t in self.density_at)
        if marg:
            cp["marginals"] = marg
        grid = {
            "mode": self.grid_mode,
            "span_sigma": f"{self.span_sigma:.17g}",
            "points_1d": str(self.points_1d),
            "points_2d": str(self.points_2d),
        }
        for label, lo, hi, n in self.grid_axes:
            grid[label] = f"{lo:.17g}:{hi:.17g}:{n}"
        cp["grid"] = grid
        if self.sweep_L:
            cp["sweep"] = {
                "L_values": ", ".join(str(v) for v in self.sweep_L),
                "seeds": str(self.sweep_seeds),
            }
        import io

        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _split_list(raw: str) -> list[str]:
    return [tok.strip() for tok in raw.split(",") if tok.strip()]


def parse_config_text(text: str, name_hint: str = "config") -> ExperimentConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if "experiment" not in cp:
        raise ConfigError("missing [experiment] section")
    exp = cp["experiment"]
    try:
        snapshots = tuple(float(t) for t in _split_list(exp.get("snapshots", "")))
        init = tuple(
            (var, *_parse_init_value(val)) for var, val in cp["init"].items()
        ) if "init" in cp else ()
        marg = cp["marginals"] if "marginals" in cp else {}
        pairs = []
        for tok in _split_list(marg.get("2d", "")):
            a, sep, b = tok.partition(":")
            if not sep:
                raise ConfigError(f"2d marginal {tok!r} must look like var:var")
            pairs.append((a.strip(), b.strip()))
        grid = cp["grid"] if "grid" in cp else {}
        axes = []
        for key, val in grid.items():
            if key in ("mode", "span_sigma", "points_1d", "points_2d"):
                continue
            lo, hi, n = val.split(":")
            axes.append((key, float(lo), float(hi), int(n)))
        filt = cp["filter"] if "filter" in cp else {}
        eps_raw = filt.get("epsilon", "").strip()
        sweep = cp["sweep"] if "sweep" in cp else {}
        density_raw = marg.get("density_at", "").strip() if marg else ""
        cfg = ExperimentConfig(
            name=exp.get("name", name_hint),
            model=exp.get("model", ""),
            L=exp.getint("L", 100),
            L_mc=exp.getint("L_mc", 150_000),
            dt=exp.getfloat("dt", 1e-3),
            seed=exp.getint("seed", 1),
            truth_seed=exp.getint("truth_seed", 1_000_003),
            snapshots=snapshots,
            out=exp.get("out", f"runs/{exp.get('name', name_hint)}"),
            init=init,
            overrides=tuple(
                sorted((k, float(v)) for k, v in (cp["model"].items() if "model" in cp else []))
            ),
            filter_mode=filt.get("init_mode", "kde_diagonal"),
            filter_epsilon=float(eps_raw) if eps_raw else None,
            thin=int(filt.get("thin", "1")),
            marginals_1d=tuple(_split_list(marg.get("1d", ""))) if marg else (),
            marginals_2d=tuple(pairs),
            density_at=tuple(float(t) for t in _split_list(density_raw)) if density_raw else None,
            grid_mode=grid.get("mode", "auto"),
            grid_axes=tuple(axes),
            span_sigma=float(grid.get("span_sigma", "6")),
            points_1d=int(grid.get("points_1d", "200")),
            points_2d=int(grid.get("points_2d", "100")),
            sweep_L=tuple(int(v) for v in _split_list(sweep.get("L_values", ""))),
            sweep_seeds=int(sweep.get("seeds", "5")),
            cache=exp.get("cache", None),
            figures=exp.getboolean("figures", True),
        )
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad config value: {exc}") from exc
    return cfg


def _parse_init_value(val: str) -> tuple[str, tuple[float, ...]]:
    toks = val.split()
    if not toks:
        raise ConfigError("empty initial-law entry")
    kind = toks[0]
    # accept the short alias used in config files
    if kind == "bimodal":
        kind = "bimodal_gaussian"
    try:
        params = tuple(float(t) for t in toks[1:])
    except ValueError as exc:
        raise ConfigError(f"non-numeric initial-law parameter in {val!r}") from exc
    return kind, params


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(encoding="utf-8"), name_hint=path.stem)


def available_configs() -> list[str]:
    pkg = resources.files("cgmix") / "configs"
    return sorted(p.name[: -len(".cfg")] for p in pkg.iterdir() if p.name.endswith(".cfg"))


def load_named_config(name: str) -> ExperimentConfig:
    """Resolve a packaged config by bare name (e.g. ``l63-t033``)."""
    pkg = resources.files("cgmix") / "configs" / f"{name}.cfg"
    if not pkg.is_file():
        raise ConfigError(
            f"unknown config {name!r}; packaged configs: {', '.join(available_configs())}"
        )
    return parse_config_text(pkg.read_text(encoding="utf-8"), name_hint=name)


def resolve_config(ref: str) -> ExperimentConfig:
    """Accept either a filesystem path or a packaged config name."""
    p = Path(ref)
    if p.exists():
        return parse_config(p)
    return load_named_config(ref.removesuffix(".cfg"))


def validate_config(cfg: ExperimentConfig) -> None:
    """Raise ConfigError on anything inconsistent; cheap, no simulation."""
    spec = build_model(cfg.model, dict(cfg.overrides))
    if cfg.L < 1:
        raise ConfigError("L must be at least 1")
    if cfg.L_mc < 2:
        raise ConfigError("L_mc must be at least 2")
    if cfg.dt <= 0:
        raise ConfigError("dt must be positive")
    if cfg.thin < 1:
        raise ConfigError("thin must be >= 1")
    if cfg.filter_mode not in ("kde_diagonal", "point_with_epsilon"):
        raise ConfigError(f"unknown filter init mode {cfg.filter_mode!r}")
    labels = spec.labels
    init_vars = [v for v, _, _ in cfg.init]
    if tuple(init_vars) != labels:
        raise ConfigError(
            f"[init] must list every model variable in order {labels}, got {tuple(init_vars)}"
        )
    for var, kind, params in cfg.init:
        try:
            DimInit(kind, params)
        except ValueError as exc:
            raise ConfigError(f"initial law for {var}: {exc}") from exc
    t_end = max(cfg.snapshots, default=0.0)
    for t in cfg.snapshots:
        if t < 0:
            raise ConfigError("snapshot times must be nonnegative")
        k = round(t / cfg.dt)
        if abs(k * cfg.dt - t) > 1e-9 * max(1.0, t):
            raise ConfigError(f"snapshot {t} is not on the dt={cfg.dt} grid")
        if t > t_end:
            raise ConfigError(f"snapshot {t} beyond t_end {t_end}")
    for t in cfg.density_at or ():
        if t not in cfg.snapshots:
            raise ConfigError(f"density_at time {t} is not a snapshot")
    for v in cfg.marginals_1d:
        if v not in labels:
            raise ConfigError(f"unknown variable {v!r} in 1d marginals")
    for a, b in cfg.marginals_2d:
        for v in (a, b):
            if v not in labels:
                raise ConfigError(f"unknown variable {v!r} in 2d marginals")
        if a == b:
            raise ConfigError(f"2d marginal {a}:{b} repeats a variable")
    if (cfg.marginals_1d or cfg.marginals_2d) and spec.n_obs > 3:
        raise ConfigError(
            "density recovery supports at most 3 observed dimensions"
        )
    known = set(labels)
    for label, lo, hi, n in cfg.grid_axes:
        if label not in known:
            raise ConfigError(f"grid axis {label!r} is not a model variable")
        if hi <= lo or n < 2:
            raise ConfigError(f"bad grid axis {label}: {lo}:{hi}:{n}")
    if cfg.grid_mode not in ("auto", "explicit"):
        raise ConfigError(f"unknown grid mode {cfg.grid_mode!r}")
    if cfg.grid_mode == "explicit":
        fixed = {label for label, *_ in cfg.grid_axes}
        wanted = set(cfg.marginals_1d) | {v for pair in cfg.marginals_2d for v in pair}
        missing = wanted - fixed
        if missing:
            raise ConfigError(f"explicit grid mode lacks axes for {sorted(missing)}")


# ---------------------------------------------------------------------------
# truth cache
# ---------------------------------------------------------------------------


def _truth_key(cfg: ExperimentConfig) -> str:
    payload = json.dumps(
        {
            "model": cfg.model,
            "overrides": list(cfg.overrides),
            "init": [list(map(str, entry)) for entry in cfg.init],
            "dt": cfg.dt,
            "L_mc": cfg.L_mc,
            "truth_seed": cfg.truth_seed,
            "snapshots": list(cfg.snapshots),
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:20]


def _cache_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.cache) if cfg.cache else Path(cfg.out) / "truth_cache"


def truth_states(cfg: ExperimentConfig, threads: int = 1) -> np.ndarray:
    """Reference full states (S, L_mc, n_total) at the snapshot times.

    Generation dominates sweep cost, so results are cached on disk keyed
    by everything that determines them.
    """
    spec = build_model(cfg.model, dict(cfg.overrides))
    key = _truth_key(cfg)
    cache = _cache_dir(cfg) / f"truth_{key}.npz"
    if cache.exists():
        with np.load(cache) as payload:
            return payload["states"]
    init = _initial_condition(cfg)
    _, states = simulate_snapshots(
        spec, init, cfg.L_mc, cfg.dt, list(cfg.snapshots), cfg.truth_seed, threads
    )
    cache.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(cache, states=states)
    return states


def _initial_condition(cfg: ExperimentConfig) -> InitialCondition:
    return InitialCondition(tuple(DimInit(kind, params) for _, kind, params in cfg.init))


# ---------------------------------------------------------------------------
# run pipeline
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    name: str
    config_hash: str
    seed: int
    version: str
    config_text: str
    snapshots: list[dict] = field(default_factory=list)
    files: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "name": self.name,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "version": self.version,
            "snapshots": self.snapshots,
            "files": sorted(self.files),
            "warnings": self.warnings,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def _grid_for(
    cfg: ExperimentConfig,
    dims: list[int],
    labels: tuple[str, ...],
    truth_samples: np.ndarray,
) -> GridSpec:
    if cfg.grid_mode == "explicit":
        by_label = {lab: (lo, hi, n) for lab, lo, hi, n in cfg.grid_axes}
        axes = []
        for lab in labels:
            lo, hi, n = by_label[lab]
            axes.append(GridAxis(lo, hi, n, lab))
        return GridSpec(tuple(axes))
    points = cfg.points_1d if len(dims) == 1 else cfg.points_2d
    return auto_grid(truth_samples, labels=labels, span_sigma=cfg.span_sigma, points=points)


def _marginal_requests(cfg: ExperimentConfig, labels: tuple[str, ...]):
    index = {lab: i for i, lab in enumerate(labels)}
    for v in cfg.marginals_1d:
        yield "kl1d", (v,), [index[v]]
    for a, b in cfg.marginals_2d:
        yield "kl2d", (a, b), [index[a], index[b]]


def _write_csv(path: Path, header: list[str], rows: list[list]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = [f"{c:.17g}" if isinstance(c, float) else str(c) for c in row]
            fh.write(",".join(cells) + "\n")
    return path


def run_experiment(
    cfg: ExperimentConfig, threads: int = 1, save_paths: bool = False
) -> RunReport:
    """Full density-recovery pipeline for one config.

    Writes density CSVs, divergence and moment tables, figures and a JSON
    report under ``cfg.out``; returns the report.  Deterministic given
    the config: rerunning produces byte-identical CSV output.
    """
    validate_config(cfg)
    spec = build_model(cfg.model, dict(cfg.overrides))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport(
        name=cfg.name,
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
        version=__version__,
        config_text=cfg.to_text(),
    )
    (out / "config.cfg").write_text(cfg.to_text(), encoding="utf-8")
    report.files.append(str(out / "config.cfg"))

    if not cfg.snapshots:
        report.save(out / "report.json")
        report.files.append(str(out / "report.json"))
        return report

    init = _initial_condition(cfg)
    t_end = max(cfg.snapshots)
    paths = simulate_ensemble(spec, init, cfg.L, cfg.dt, t_end, cfg.seed, threads)
    if save_paths:
        report.files.append(str(paths.save(out / "paths.bin")))

    truth = truth_states(cfg, threads)
    filter_init = FilterInit(cfg.filter_mode, cfg.filter_epsilon)
    means0, covs0 = init_states(paths.uII_samples[:, 0, :], filter_init)
    snaps = run_filter_ensemble(
        spec, paths, means0, covs0, list(cfg.snapshots), thin=cfg.thin
    )
    if snaps.max_clamp_violation > 1e-8:
        report.warnings.append(
            f"covariance clamp violation {snaps.max_clamp_violation:.3e} exceeded 1e-8"
        )

    kl_rows: list[list] = []
    moment_rows: list[list] = []
    corr_rows: list[list] = []
    density_times = set(cfg.density_at if cfg.density_at is not None else cfg.snapshots)

    for s, t in enumerate(cfg.snapshots):
        k = paths.step_index(t)
        obs_end = paths.uI_paths[:, k, :]
        bandwidth = bandwidth_diag(obs_end)
        mix = assemble_joint(
            obs_end,
            bandwidth,
            (snaps.means[s], snaps.covs[s], t),
            obs_labels=spec.obs_labels,
            hid_labels=spec.hid_labels,
        )
        snap_info = {
            "t": t,
            "bandwidth_diag": bandwidth.diag.tolist(),
            "bandwidth_fallback": list(bandwidth.used_fallback),
            "kl": {},
            "densities": {},
        }

        # moment tables at every snapshot (cheap, closed form + samples)
        for dim, lab in enumerate(spec.labels):
            rec = mixture_moments(mix, dim)
            tru = sample_moments(truth[s][:, dim])
            moment_rows.append(
                [t, lab, "recovered", rec["mean"], rec["variance"], rec["skewness"], rec["kurtosis"]]
            )
            moment_rows.append(
                [t, lab, "truth", tru["mean"], tru["variance"], tru["skewness"], tru["kurtosis"]]
            )
        rec_mean, rec_cov = mixture_mean_cov(mix)
        tru_cov = np.cov(truth[s].T, bias=True)
        rec_sd = np.sqrt(np.diag(rec_cov))
        tru_sd = np.sqrt(np.diag(tru_cov))
        for i in range(spec.n_total):
            for j in range(i + 1, spec.n_total):
                pair = f"{spec.labels[i]}:{spec.labels[j]}"
                corr_rows.append(
                    [t, pair, "recovered", rec_cov[i, j] / (rec_sd[i] * rec_sd[j])]
                )
                corr_rows.append(
                    [t, pair, "truth", tru_cov[i, j] / (tru_sd[i] * tru_sd[j])]
                )

        if t not in density_times:
            report.snapshots.append(snap_info)
            continue

        for kind, labs, dims in _marginal_requests(cfg, spec.labels):
            truth_samples = truth[s][:, dims]
            grid = _grid_for(cfg, dims, labs, truth_samples)
            truth_field = kde_on_grid(
                truth_samples,
                bandwidth_diag(truth_samples),
                grid,
                meta={"kind": "mc_truth", "t": t, "L_mc": cfg.L_mc},
            )
            model_field = evaluate_on_grid(marginal(mix, dims), grid)
            kl = relative_entropy(truth_field, model_field)
            vars_name = "-".join(labs)
            kl_rows.append([t, kind, ":".join(labs), kl.value, kl.floor_mass])
            snap_info["kl"][":".join(labs)] = kl.value

            stem = f"t{t:g}_{vars_name}"
            truth_path = truth_field.to_csv(out / "densities" / f"{stem}_truth.csv")
            model_path = model_field.to_csv(out / "densities" / f"{stem}_recovered.csv")
            report.files += [
                str(truth_path),
                str(truth_path.with_suffix(".json")),
                str(model_path),
                str(model_path.with_suffix(".json")),
            ]
            snap_info["densities"][":".join(labs)] = {
                "truth": str(truth_path),
                "recovered": str(model_path),
            }
            if cfg.figures:
                from . import plots

                fig_path = out / "figures" / f"{stem}.png"
                if len(dims) == 1:
                    plots.plot_density_1d(
                        truth_field, model_field, fig_path, title=f"{cfg.name} t={t:g}"
                    )
                else:
                    plots.plot_density_2d(
                        truth_field, model_field, fig_path, title=f"{cfg.name} t={t:g}"
                    )
                report.files.append(str(fig_path))
        report.snapshots.append(snap_info)

    report.files.append(
        str(_write_csv(out / "kl.csv", ["t", "metric", "variables", "value", "floor_mass"], kl_rows))
    )
    report.files.append(
        str(
            _write_csv(
                out / "moments.csv",
                ["t", "variable", "source", "mean", "variance", "skewness", "kurtosis"],
                moment_rows,
            )
        )
    )
    report.files.append(
        str(
            _write_csv(
                out / "correlations.csv",
                ["t", "pair", "source", "correlation"],
                corr_rows,
            )
        )
    )
    if cfg.figures and len(cfg.snapshots) > 3:
        from . import plots

        times = np.asarray(cfg.snapshots)
        for stat in ("mean", "variance"):
            rec = {}
            tru = {}
            col = {"mean": 3, "variance": 4}[stat]
            for lab in spec.labels:
                rec[lab] = np.array(
                    [r[col] for r in moment_rows if r[1] == lab and r[2] == "recovered"]
                )
                tru[lab] = np.array(
                    [r[col] for r in moment_rows if r[1] == lab and r[2] == "truth"]
                )
            fig_path = out / "figures" / f"series_{stat}.png"
            plots.plot_moment_series(
                times, rec, tru, None, fig_path, ylabel=stat, title=cfg.name
            )
            report.files.append(str(fig_path))

    report_path = out / "report.json"
    report.files.append(str(report_path))
    report.save(report_path)
    return report


def sweep_experiment(
    cfg: ExperimentConfig, L_values: tuple[int, ...] | None = None, threads: int = 1
) -> list[SweepRow]:
    """Rerun recovery across ensemble sizes against one fixed truth.

    For each L the pipeline runs ``cfg.sweep_seeds`` seeds
    (seed, seed+1, ...) and the emitted value is the per-marginal median,
    which is what decay diagnostics should look at.  Writes sweep.csv and
    a decay figure under ``cfg.out``.
    """
    validate_config(cfg)
    L_values = tuple(L_values or cfg.sweep_L)
    if not L_values:
        raise ConfigError("no ensemble sizes given for the sweep")
    spec = build_model(cfg.model, dict(cfg.overrides))
    out = Path(cfg.out)
    truth = truth_states(cfg, threads)
    density_times = tuple(cfg.density_at if cfg.density_at is not None else cfg.snapshots)

    # fixed truth fields and grids, shared by every (L, seed) run
    prepared = {}
    for s, t in enumerate(cfg.snapshots):
        if t not in density_times:
            continue
        for kind, labs, dims in _marginal_requests(cfg, spec.labels):
            samples = truth[s][:, dims]
            grid = _grid_for(cfg, dims, labs, samples)
            field = kde_on_grid(samples, bandwidth_diag(samples), grid)
            prepared[(s, kind, ":".join(labs))] = (dims, grid, field)

    def run_one(L: int) -> dict[tuple[str, str], KLReport]:
        per_seed: dict[tuple[str, str], list[KLReport]] = {}
        for trial in range(cfg.sweep_seeds):
            seed = cfg.seed + trial
            sub = replace(cfg, L=L, seed=seed)
            init = _initial_condition(sub)
            paths = simulate_ensemble(
                spec, init, L, sub.dt, max(sub.snapshots), seed, threads
            )
            means0, covs0 = init_states(
                paths.uII_samples[:, 0, :], FilterInit(sub.filter_mode, sub.filter_epsilon)
            )
            snaps = run_filter_ensemble(
                spec, paths, means0, covs0, list(sub.snapshots), thin=sub.thin
            )
            for (s, kind, vars_name), (dims, grid, truth_field) in prepared.items():
                k = paths.step_index(sub.snapshots[s])
                obs_end = paths.uI_paths[:, k, :]
                mix = assemble_joint(
                    obs_end,
                    bandwidth_diag(obs_end),
                    (snaps.means[s], snaps.covs[s], sub.snapshots[s]),
                    obs_labels=spec.obs_labels,
                    hid_labels=spec.hid_labels,
                )
                model_field = evaluate_on_grid(marginal(mix, dims), grid)
                per_seed.setdefault((kind, vars_name), []).append(
                    relative_entropy(truth_field, model_field)
                )
        medians = {}
        for key, reports in per_seed.items():
            vals = sorted(r.value for r in reports)
            med = float(np.median(vals))
            fm = float(np.median([r.floor_mass for r in reports]))
            medians[key] = KLReport(value=med, floor_mass=fm, grid_id=reports[0].grid_id)
        return medians

    rows = l_sweep(run_one, L_values)
    sweep_rows_to_csv(rows, out / "sweep.csv")
    if cfg.figures:
        from . import plots

        plots.plot_sweep(rows, out / "figures" / "sweep.png", title=cfg.name)
    return rows


def compare_kde_vs_mc(
    cfg: ExperimentConfig, L: int | None = None, threads: int = 1
) -> dict:
    """Kernel estimate versus raw histogram on the observed marginals.

    Both are built from the same L endpoint samples and scored against
    the high-resolution reference; histogram bin count defaults to
    sqrt(L).  Returns per-variable divergences and writes a CSV plus
    overlay figures.
    """
    validate_config(cfg)
    spec = build_model(cfg.model, dict(cfg.overrides))
    if not cfg.marginals_1d:
        raise ConfigError("compare_kde_vs_mc needs 1d marginals in the config")
    obs_set = set(spec.obs_labels)
    for v in cfg.marginals_1d:
        if v not in obs_set:
            raise ConfigError(f"{v!r} is not an observed variable")
    L = L or cfg.L
    out = Path(cfg.out)
    truth = truth_states(cfg, threads)
    init = _initial_condition(cfg)
    t_end = max(cfg.snapshots)
    _, states = simulate_snapshots(
        spec, init, L, cfg.dt, list(cfg.snapshots), cfg.seed, threads
    )

    index = {lab: i for i, lab in enumerate(spec.labels)}
    n_bins = max(2, int(round(np.sqrt(L))))
    rows = []
    results: dict[str, dict] = {}
    for s, t in enumerate(cfg.snapshots):
        for v in cfg.marginals_1d:
            dim = index[v]
            ref_samples = truth[s][:, [dim]]
            grid = _grid_for(cfg, [dim], (v,), ref_samples)
            truth_field = kde_on_grid(ref_samples, bandwidth_diag(ref_samples), grid)
            sub = states[s][:, [dim]]
            kde_field = kde_on_grid(sub, bandwidth_diag(sub), grid)

            pts = grid.axes[0].points()
            lo, hi = sub.min(), sub.max()
            counts, edges = np.histogram(sub[:, 0], bins=n_bins, range=(lo, hi), density=True)
            hist_vals = np.zeros_like(pts)
            inside = (pts >= lo) & (pts <= hi)
            idx = np.clip(np.searchsorted(edges, pts[inside], side="right") - 1, 0, n_bins - 1)
            hist_vals[inside] = counts[idx]
            hist_field = DensityField(grid, hist_vals, {"estimator": "histogram", "bins": n_bins})

            kl_kde = relative_entropy(truth_field, kde_field)
            kl_hist = relative_entropy(truth_field, hist_field)
            results.setdefault(v, {})[f"t{t:g}"] = {
                "kl_kde": kl_kde.value,
                "kl_hist": kl_hist.value,
            }
            rows.append([t, v, "kde", kl_kde.value, kl_kde.floor_mass])
            rows.append([t, v, "histogram", kl_hist.value, kl_hist.floor_mass])
            if cfg.figures:
                from . import plots

                plots.plot_density_1d(
                    truth_field,
                    kde_field,
                    out / "figures" / f"kdecmp_t{t:g}_{v}_kde.png",
                    title=f"{v} kernel vs truth (L={L})",
                )
                plots.plot_density_1d(
                    truth_field,
                    hist_field,
                    out / "figures" / f"kdecmp_t{t:g}_{v}_hist.png",
                    title=f"{v} histogram vs truth (L={L})",
                )
    _write_csv(
        out / "kde_vs_histogram.csv",
        ["t", "variable", "estimator", "kl", "floor_mass"],
        rows,
    )
    return {"L": L, "bins": n_bins, "results": results}
