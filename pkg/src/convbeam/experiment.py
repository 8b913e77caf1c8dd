"""Experiment driver: JSON configs, the simulate/beamform/metrics/render pipeline,
multi-config comparison and the convolution benchmark.

Config keys carrying physical quantities end in a unit suffix (``_m``,
``_hz``, ``_mps``, ``_deg``, ``_per_m3``). Angle and depth axes are either an
explicit list or ``{"start": ..., "stop": ..., "num": ...}``.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats, plotting
from .arrays import ElementSet, fractal_expand, make_upa, named_sparse
from .beamform import CompoundField, ImagingGrid, Method, Volume, coba3d, compound, conv2d_self, das, scoba3d
from .metrics import SliceSpec, contrast_ratio, default_cr_regions, envelope_logcompress, fwhm, peak_index, profile
from .simulation import (
    Acquisition,
    IQCube,
    Phantom,
    TransmitScheme,
    acquisition_window,
    make_cyst_phantom,
    point_phantom,
    simulate,
)

logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).with_name("configs")

# Keys that do not change any produced number.
_NON_SEMANTIC = ("name", "output_dir")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def axis_values(spec, key="axis") -> np.ndarray:
    if isinstance(spec, dict):
        try:
            return np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
        except KeyError as exc:
            raise ConfigError(f"{key}: missing {exc}") from None
    vals = np.atleast_1d(np.asarray(spec, dtype=float))
    if vals.ndim != 1 or vals.size == 0:
        raise ConfigError(f"{key}: expected a non-empty list or start/stop/num")
    return vals


def build_array(spec: dict, pitch_x, pitch_y, base_dir=None) -> ElementSet:
    """Array recipe: ``upa``, ``named``, ``fractal``, ``positions`` or ``file``."""
    if not isinstance(spec, dict):
        raise ConfigError("array spec must be an object")
    try:
        if "upa" in spec:
            hx, hy = spec["upa"]
            return make_upa(int(hx), int(hy), pitch_x, pitch_y)
        if "named" in spec:
            params = {k: v for k, v in spec.items() if k not in ("named", "half_extent")}
            return named_sparse(spec["named"], int(spec.get("half_extent", 15)), pitch_x, pitch_y, **params)
        if "fractal" in spec:
            gen = build_array(spec["fractal"], pitch_x, pitch_y, base_dir)
            return fractal_expand(gen, int(spec.get("order", 1)))
        if "positions" in spec:
            return ElementSet(np.asarray(spec["positions"], dtype=np.int64).reshape(-1, 2), pitch_x, pitch_y)
        if "file" in spec:
            path = Path(spec["file"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            arr = formats.load_array(path)
            if (arr.pitch_x, arr.pitch_y) != (pitch_x, pitch_y):
                raise ConfigError(f"{path}: pitch {(arr.pitch_x, arr.pitch_y)} differs from the config pitch")
            return arr
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError, OSError) as exc:
        raise ConfigError(f"bad array spec {spec}: {exc}") from None
    raise ConfigError(f"unrecognized array spec {spec}")


@dataclass
class BeamformerSpec:
    method: Method
    label: str
    array: dict | None = None
    weight_mode: str = "unity-effective"
    coarray_method: str = "zerofill"

    @classmethod
    def from_dict(cls, doc):
        try:
            method = {"das": Method.DAS, "coba": Method.COBA3D, "scoba": Method.SCOBA3D}[str(doc["method"]).lower()]
        except KeyError:
            raise ConfigError(f"beamformer needs method das|coba|scoba, got {doc}") from None
        weight_mode = doc.get("weight_mode", "unity-effective")
        if weight_mode not in ("unity-effective", "raw"):
            raise ConfigError(f"unknown weight_mode {weight_mode!r}")
        arr = doc.get("array")
        if method is Method.SCOBA3D and arr is None:
            raise ConfigError("scoba beamformer needs an 'array' spec")
        label = doc.get("label") or (method.value if arr is None else f"{method.value}-{doc['array'].get('preset', 'T')}")
        return cls(method, label, arr, weight_mode, doc.get("coarray_method", "zerofill"))


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path | None = None
    name: str = "experiment"
    seed: int = 0
    pitch: tuple = (300e-6, 300e-6)
    tx_array: ElementSet = None
    rx_array: ElementSet = None
    scheme: TransmitScheme = None
    acquisition: dict = field(default_factory=dict)
    phantom: dict = field(default_factory=dict)
    grid: ImagingGrid = None
    beamformers: list = field(default_factory=list)
    regions: dict = field(default_factory=dict)
    render: dict = field(default_factory=dict)
    output_dir: str = "out"

    @classmethod
    def from_dict(cls, doc: dict, base_dir=None) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        doc = copy.deepcopy(doc)
        cfg = cls(doc, Path(base_dir) if base_dir else None)
        cfg.name = str(doc.get("name", "experiment"))
        cfg.seed = int(doc.get("seed", 0))
        cfg.pitch = (float(doc.get("pitch_x_m", 300e-6)), float(doc.get("pitch_y_m", 300e-6)))
        cfg.tx_array = build_array(doc.get("tx_array", {"upa": [15, 15]}), *cfg.pitch, base_dir)
        cfg.rx_array = build_array(doc.get("rx_array", {"upa": [15, 15]}), *cfg.pitch, base_dir)

        sch = doc.get("scheme")
        if not isinstance(sch, dict):
            raise ConfigError("missing 'scheme'")
        try:
            alphas = np.deg2rad(axis_values(sch["alpha_deg"], "alpha_deg"))
            betas = np.deg2rad(axis_values(sch["beta_deg"], "beta_deg"))
            cfg.scheme = TransmitScheme.grid(sch["mode"], alphas, betas, float(sch["focal_z_m"]), cfg.tx_array)
        except KeyError as exc:
            raise ConfigError(f"scheme: missing {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"scheme: {exc}") from None

        acq = doc.get("acquisition", {})
        cfg.acquisition = {
            "f0": float(acq.get("center_freq_hz", 3e6)),
            "sample_rate": float(acq.get("sample_rate_hz", 12e6)),
            "sound_speed": float(acq.get("sound_speed_mps", 1540.0)),
            "n_cycles": float(acq.get("n_cycles", 2.0)),
        }
        if min(cfg.acquisition.values()) <= 0:
            raise ConfigError("acquisition parameters must be positive")

        ph = doc.get("phantom")
        if not isinstance(ph, dict) or ph.get("kind") not in ("points", "cyst"):
            raise ConfigError("phantom must have kind 'points' or 'cyst'")
        cfg.phantom = ph

        g = doc.get("grid")
        if not isinstance(g, dict):
            raise ConfigError("missing 'grid'")
        try:
            cfg.grid = ImagingGrid.sector(
                np.deg2rad(axis_values(g["x_angle_deg"], "x_angle_deg")),
                np.deg2rad(axis_values(g.get("y_angle_deg", [0.0]), "y_angle_deg")),
                axis_values(g["depth_m"], "depth_m"),
            )
        except KeyError as exc:
            raise ConfigError(f"grid: missing {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from None

        bfs = doc.get("beamformers")
        if not bfs:
            raise ConfigError("beamformer list must be non-empty")
        cfg.beamformers = [BeamformerSpec.from_dict(b) for b in bfs]
        labels = [b.label for b in cfg.beamformers]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"beamformer labels must be unique: {labels}")
        for b in cfg.beamformers:
            if b.array is not None:
                T = build_array(b.array, *cfg.pitch, base_dir)
                if not set(T.as_set()) <= cfg.rx_array.as_set():
                    raise ConfigError(f"{b.label}: array is not a subset of the receive array")
        cfg.regions = doc.get("regions", {})
        cfg.render = doc.get("render", {})
        cfg.output_dir = doc.get("output_dir", "out")
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(doc, base_dir=path.parent)

    def semantic(self) -> dict:
        return {k: v for k, v in self.raw.items() if k not in _NON_SEMANTIC}

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def simulation_key(self) -> str:
        keys = ("seed", "pitch_x_m", "pitch_y_m", "tx_array", "rx_array", "scheme", "acquisition", "phantom")
        blob = json.dumps({k: self.raw.get(k) for k in keys}, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def build_phantom(self) -> Phantom:
        ph = self.phantom
        try:
            if ph["kind"] == "points":
                return point_phantom(ph["points_m"], ph.get("amplitudes"))
            return make_cyst_phantom(
                float(ph["density_per_m3"]), ph["center_m"], float(ph["radius_m"]), ph["box_m"], seed=self.seed
            )
        except KeyError as exc:
            raise ConfigError(f"phantom: missing {exc}") from None


def plan(config: ExperimentConfig) -> dict:
    """Static summary of what ``run`` will produce (no simulation)."""
    return {
        "name": config.name,
        "config_hash": config.config_hash(),
        "n_events": config.scheme.n_events,
        "transmit_mode": config.scheme.mode,
        "n_rx_elements": len(config.rx_array),
        "grid_shape": list(config.grid.shape),
        "beamformers": [b.label for b in config.beamformers],
    }


def _simulate(config: ExperimentConfig) -> IQCube:
    a = config.acquisition
    phantom = config.build_phantom()
    t0, t1 = acquisition_window(phantom, config.scheme, config.rx_array, a["f0"], a["n_cycles"], a["sound_speed"])
    acq = Acquisition(a["sample_rate"], a["f0"], a["n_cycles"], a["sound_speed"], t_max=t1, t_min=t0)
    return simulate(phantom, config.scheme, config.rx_array, acq)


def beamform(field: CompoundField, spec: BeamformerSpec, config: ExperimentConfig) -> Volume:
    if spec.method is Method.DAS:
        if spec.array is not None:
            field = field.restrict(build_array(spec.array, *config.pitch, config.base_dir))
        vol = das(field)
    elif spec.method is Method.COBA3D:
        vol = coba3d(field, weight_mode=spec.weight_mode)
    else:
        T = build_array(spec.array, *config.pitch, config.base_dir)
        vol = scoba3d(field, T, weight_mode=spec.weight_mode, method=spec.coarray_method)
    vol.provenance = config.config_hash()[:16] + ":" + spec.label
    return vol


METRIC_COLUMNS = ["label", "method", "elements", "CR_dB", "FWHM_x_mm", "FWHM_y_mm", "FWHM_axial_mm"]


def volume_metrics(vol: Volume, regions: dict, phantom: dict | None = None) -> dict:
    """CR (if a cyst is described) and FWHM along each non-degenerate axis through the peak."""
    row = {"CR_dB": math.nan, "FWHM_x_mm": math.nan, "FWHM_y_mm": math.nan, "FWHM_axial_mm": math.nan}
    cyst = None
    if "cyst_center_m" in regions:
        cyst = (regions["cyst_center_m"], float(regions["cyst_radius_m"]))
    elif phantom is not None and phantom.get("kind") == "cyst":
        cyst = (phantom["center_m"], float(phantom["radius_m"]))
    if cyst is not None:
        cm, bm = default_cr_regions(
            vol.grid, cyst[0], cyst[1], float(regions.get("inner_fraction", 0.6)), regions.get("background_offset_m")
        )
        row["CR_dB"] = contrast_ratio(vol, cm, bm)
    want_fwhm = regions.get("fwhm", phantom is None or phantom.get("kind") == "points")
    if want_fwhm:
        idx = peak_index(vol)
        for axis, key in (("lateral_x", "FWHM_x_mm"), ("lateral_y", "FWHM_y_mm"), ("axial", "FWHM_axial_mm")):
            if vol.values.shape[{"lateral_x": 0, "lateral_y": 1, "axial": 2}[axis]] < 3:
                continue
            try:
                row[key] = 1e3 * fwhm(vol, axis, idx)
            except ValueError as exc:
                logger.warning("%s: FWHM along %s unavailable: %s", vol.provenance, axis, exc)
    return row


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6g}"
    return str(v)


def write_csv(rows, columns, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def _lateral_mm(vol: Volume, spec: SliceSpec):
    """Lateral (x or y) and axial coordinates of the rendered plane, in mm."""
    pts = spec.take(vol.grid.points())  # (L, D, 3)
    lateral = pts[:, pts.shape[1] // 2, 0 if spec.plane == "xz" else 1]
    return 1e3 * lateral, 1e3 * pts[pts.shape[0] // 2, :, 2]


class _Artifacts:
    """Tracks files written by a run so a failure can mark them partial."""

    def __init__(self, out: Path):
        self.out = out
        self.paths: list[Path] = []

    def path(self, name) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.paths.append(p)
        return p

    def mark_partial(self):
        for p in self.paths:
            if p.exists():
                p.replace(p.with_name(p.name + ".partial"))


@dataclass
class RunResult:
    status: int
    output_dir: Path
    manifest: dict
    rows: list = field(default_factory=list)
    volumes: dict = field(default_factory=dict)


def run(config: ExperimentConfig, output_dir=None, workers=1, cube: IQCube | None = None, figures=True) -> RunResult:
    """Simulate, beamform, measure and render; write a manifest.

    Returns a :class:`RunResult` whose ``status`` is 0 on success and 2 when a
    stage failed. Files already written by a failed run get a ``.partial``
    suffix and the manifest records the failing stage.
    """
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    art = _Artifacts(out)
    manifest = plan(config)
    manifest.update(status="running", stages={}, artifacts=[])
    rows, volumes = [], {}
    stage = "simulate"
    try:
        t = time.perf_counter()
        if cube is None:
            cube = _simulate(config)
        formats.write_iqcube(cube, art.path("cube.iqc"))
        manifest["stages"]["simulate_s"] = time.perf_counter() - t

        stage = "compound"
        t = time.perf_counter()
        fld = compound(cube, config.grid, workers=workers)
        manifest["stages"]["compound_s"] = time.perf_counter() - t
        manifest["samples_out_of_range"] = int(fld.n_out_of_range)

        for spec in config.beamformers:
            stage = f"beamform:{spec.label}"
            t = time.perf_counter()
            vol = beamform(fld, spec, config)
            formats.write_volume(vol, art.path(f"volume_{spec.label}.bvol"))
            manifest["stages"][f"beamform_{spec.label}_s"] = time.perf_counter() - t
            volumes[spec.label] = vol

        stage = "metrics"
        t = time.perf_counter()
        for spec in config.beamformers:
            vol = volumes[spec.label]
            row = {"label": spec.label, "method": vol.beamformer.value, "elements": vol.n_elements}
            row.update(volume_metrics(vol, config.regions, config.phantom))
            rows.append(row)
        write_csv(rows, METRIC_COLUMNS, art.path("metrics.csv"))
        manifest["stages"]["metrics_s"] = time.perf_counter() - t

        stage = "render"
        t = time.perf_counter()
        _render_all(config, volumes, art, figures)
        manifest["stages"]["render_s"] = time.perf_counter() - t
    except ConfigError:
        art.mark_partial()
        raise
    except Exception as exc:  # noqa: BLE001 - any stage failure is reported with its stage
        art.mark_partial()
        manifest.update(status="failed", failed_stage=stage, error=str(exc))
        manifest["artifacts"] = sorted(p.name + ".partial" for p in art.paths)
        _write_manifest(out, manifest)
        logger.error("stage %r failed: %s", stage, exc)
        return RunResult(2, out, manifest, rows, volumes)
    manifest["status"] = "ok"
    manifest["artifacts"] = sorted(str(p.relative_to(out)) for p in art.paths)
    _write_manifest(out, manifest)
    return RunResult(0, out, manifest, rows, volumes)


def _write_manifest(out: Path, manifest: dict):
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _render_all(config, volumes, art: _Artifacts, figures):
    r = config.render
    dr = float(r.get("dynamic_range_db", 60.0))
    fmt = r.get("format", "png")
    spec = SliceSpec(r.get("plane", "xz"), r.get("index"))
    profiles = {}
    for label, vol in volumes.items():
        img = envelope_logcompress(vol, dr, spec)
        plotting.render_bmode(img, art.path(f"bmode_{label}.{fmt}"))
        if figures:
            lat, dep = _lateral_mm(vol, spec)
            plotting.plot_bmode(img, lat, dep, art.path(f"figures/bmode_{label}.png"), title=label)
            if vol.values.shape[0] > 2:
                coord, env = profile(vol, "lateral_x", peak_index(vol))
                profiles[label] = (1e3 * (coord - coord[len(coord) // 2]), env)
    if figures and profiles:
        plotting.plot_profiles(profiles, art.path("figures/lateral_profiles.png"))


COMPARE_SHARED = ("phantom", "grid", "seed")


def compare(configs: list, output_dir=None, workers=1, figures=False) -> tuple[list, str]:
    """Run several configs on the same phantom and grid; tabulate CR and FWHM.

    Ratio columns divide each FWHM by the first row's (the baseline method);
    ``CR_delta_dB`` is the CR difference to the baseline.
    """
    if len(configs) < 2:
        raise ConfigError("compare needs at least two configs")
    first = configs[0]
    for cfg in configs[1:]:
        for key in COMPARE_SHARED:
            if json.dumps(cfg.raw.get(key), sort_keys=True) != json.dumps(first.raw.get(key), sort_keys=True):
                raise ConfigError(f"config {cfg.name!r} differs from {first.name!r} in {key!r}")
        if cfg.grid != first.grid:
            raise ConfigError(f"config {cfg.name!r} uses a different imaging grid")
    base_out = Path(output_dir or first.output_dir)
    cubes: dict[str, IQCube] = {}
    rows = []
    for i, cfg in enumerate(configs):
        key = cfg.simulation_key()
        res = run(cfg, base_out / f"{i:02d}_{cfg.name}", workers=workers, cube=cubes.get(key), figures=figures)
        if res.status != 0:
            raise StageError(res.manifest.get("failed_stage"), res.manifest.get("error"))
        if key not in cubes:
            cubes[key] = formats.read_iqcube(res.output_dir / "cube.iqc")
        for r in res.rows:
            rows.append({"config": cfg.name, **r})
    base = rows[0]
    for r in rows:
        r["CR_delta_dB"] = r["CR_dB"] - base["CR_dB"]
        for ax in ("x", "y", "axial"):
            k = f"FWHM_{ax}_mm"
            r[f"FWHM_{ax}_ratio"] = r[k] / base[k] if base[k] and not math.isnan(base[k]) else math.nan
    columns = ["config"] + METRIC_COLUMNS + ["CR_delta_dB", "FWHM_x_ratio", "FWHM_y_ratio", "FWHM_axial_ratio"]
    base_out.mkdir(parents=True, exist_ok=True)
    text = write_csv(rows, columns, base_out / "comparison.csv")
    return rows, text


def bench(sizes=(3, 7, 15, 31), repeats=5, batch=64, seed=0) -> list[dict]:
    """Time direct vs Fourier self-convolution of ``batch`` random ``s x s`` apertures."""
    rng = np.random.default_rng(seed)
    rows = []
    for s in sizes:
        r = rng.standard_normal((batch, s, s)) + 1j * rng.standard_normal((batch, s, s))
        times = {}
        results = {}
        for method in ("direct", "fourier"):
            best = math.inf
            for _ in range(repeats):
                t = time.perf_counter()
                results[method] = conv2d_self(r, method=method)
                best = min(best, time.perf_counter() - t)
            times[method] = best / batch
        err = np.max(np.abs(results["direct"] - results["fourier"])) / np.max(np.abs(results["direct"]))
        rows.append({"size": s, "direct_s": times["direct"], "fourier_s": times["fourier"],
                     "speedup": times["direct"] / times["fourier"], "max_rel_err": float(err)})
    return rows


def default_workers() -> int:
    env = os.environ.get("CONVBEAM_WORKERS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"CONVBEAM_WORKERS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError("CONVBEAM_WORKERS must be >= 1")
        return n
    return os.cpu_count() or 1


def bundled_config(name: str) -> Path:
    path = CONFIG_DIR / f"{name}.json"
    if not path.exists():
        avail = sorted(p.stem for p in CONFIG_DIR.glob("*.json"))
        raise ConfigError(f"no bundled config {name!r}; available: {avail}")
    return path
