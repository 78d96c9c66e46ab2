"""Command-line pipeline: one JSON config, one subcommand per stage.

Every artifact records the hash of the effective config; a stage refuses
inputs written under a different hash.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import io
from .acquisition import (PhantomSpec, RasterPlan, ReferencePair, TofLog, counts_to_reflectance,
                          generate_phantom, plan_for_shape, simulate_scan, tof_compensate)
from .cae import TrainConfig, downsample_to_bands, selected_bands, train
from .clustering import (adjusted_rand_index, cluster_pixels, gmm_em, kmeans, labels_to_map,
                         pca_fit, smooth_labels, tsne_embed)
from .core import HyperCube, LabelMap, ScalarMap, WavelengthGrid, crop_bands, merge_cubes, \
    resample_to_grid
from .errors import BurnscopeError, ConfigError, DataError, ProvenanceError
from .lsci import FlowMap, perfusion_index, simulate_speckle, spatial_contrast, \
    temporal_contrast
from .physio import (DtwiParams, absorbance, calibrate_dtwi, dtwi, load_extinction_table,
                     spectral_derivative, sto2)
from .preprocess import (AffineTransform2D, clip_reflectance, fit_affine, l2_normalize,
                         mask_background, read_point_pairs, smooth_spectra, warp_map,
                         zscore_bands)

log = logging.getLogger("burnscope")

DEFAULT_CONFIG: dict[str, Any] = {
    "seed": 0,
    "phantom": {
        "shape": [48, 48],
        "weights": "reference",
        "wavelengths": [400.0, 2100.0, 2.0],
        "noise_std": 0.004,
        "jitter": 0.05,
        "baseline_absorbance": 0.1,
        "breathing_amplitude_mm": 5.0,
        "breathing_period_s": 4.0,
        "fiducials": [[1, 1, 3], [1, 44, 3], [44, 1, 3], [44, 44, 3]],
    },
    "scan": {
        "spot_mm": 1.0,
        "overlap": 0.0,
        "dwell_s": 0.2,
        "d_ref_mm": 100.0,
        "vnir_nm": [400.0, 1100.0, 2.0],
        "swir_nm": [1000.0, 2100.0, 4.0],
        "tof_compensation": True,
    },
    "preprocess": {
        "crop_nm": [400.0, 2100.0],
        "mask_low": 0.05,
        "mask_high": None,
        "smooth_window": 7,
        "polyorder": 3,
        "window_table": [],
    },
    "maps": {
        "dtwi": {"s1": None, "s2": None},
        "sto2_window_nm": [520.0, 600.0],
        "derivative_order": 1,
        "derivative_window": 11,
    },
    "lsci": {
        "mode": "temporal",
        "window": 7,
        "frames": 64,
        "exposure_s": 1e-3,
        "rate_hz": 10.0,
        "class_flow": [4.0, 2.0, 1.0, 0.25],
        "misregistration": {"rotation_deg": 3.0, "translation": [1.5, -1.0]},
    },
    "cae": {
        "split_nm": 1000.0,
        "vnir": {"epochs": 150, "learning_rate": 0.001, "t_start": 10.0, "t_end": 0.1},
        "swir": {"epochs": 150, "learning_rate": 0.001, "t_start": 10.0, "t_end": 0.1},
    },
    "cluster": {
        "k": 4,
        "max_n": 4096,
        "radius": 1,
        "bands": None,
        "input": "spectra",
        "method": "spectral",
        "pca_components": 3,
        "tsne_perplexity": 30.0,
    },
}

# artifact name -> command that writes it
PRODUCER = {
    "truth": "phantom", "labels": "phantom",
    "raw_vnir": "scan", "raw_swir": "scan", "scan.json": "scan",
    "reflectance": "calibrate",
    "preprocessed": "preprocess",
    "dtwi": "maps", "sto2": "maps", "derivative": "maps",
    "speckle": "lsci", "contrast": "lsci", "perfusion": "lsci",
    "cae_vnir.json": "train-cae", "cae_swir.json": "train-cae", "bands.json": "train-cae",
    "clusters": "cluster", "clusters_smoothed": "cluster", "cluster.json": "cluster",
}


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict) and base[key] and key not in ("vnir", "swir"):
            if not isinstance(val, dict):
                raise ConfigError(f"config section {where}{key!r} must be an object")
            out[key] = _merge(base[key], val, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path: str | None, seed: int | None = None) -> dict:
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} not found")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {p} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    cfg = _merge(DEFAULT_CONFIG, raw)
    if seed is not None:
        cfg["seed"] = int(seed)
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {cfg['seed']!r}")
    return cfg


def config_hash(cfg: dict) -> str:
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


class Context:
    def __init__(self, cfg: dict, out: Path) -> None:
        self.cfg = cfg
        self.out = out
        self.hash = config_hash(cfg)
        self.seed = cfg["seed"]
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.out / name

    def _need(self, name: str) -> Path:
        p = self.path(name)
        if not (io.header_path(p).exists() or p.exists()):
            raise DataError(f"missing artifact {name!r}; run `burnscope {PRODUCER[name]}` first")
        return p

    def _check(self, name: str, header: dict) -> None:
        if header.get("config_hash") != self.hash:
            raise ProvenanceError(
                f"artifact {name!r} was written under config {header.get('config_hash')}, "
                f"current config is {self.hash}; rerun `burnscope {PRODUCER[name]}`")

    def cube(self, name: str) -> HyperCube:
        cube, header = io.read_cube(self._need(name))
        self._check(name, header)
        return cube

    def scalar(self, name: str) -> ScalarMap:
        smap, header = io.read_scalar_map(self._need(name))
        self._check(name, header)
        return smap

    def labels(self, name: str) -> LabelMap:
        lmap, header = io.read_label_map(self._need(name))
        self._check(name, header)
        return lmap

    def json(self, name: str) -> Any:
        obj = io.load_json(self._need(name))
        self._check(name, obj)
        return obj

    def write_json(self, name: str, obj: dict) -> None:
        io.dump_json(dict(obj, config_hash=self.hash), self.path(name))


def _phantom_spec(ctx: Context) -> PhantomSpec:
    d = dict(ctx.cfg["phantom"], seed=ctx.seed)
    return PhantomSpec.from_dict(d)


def _grid(spec: list) -> WavelengthGrid:
    lo, hi, step = (float(x) for x in spec)
    return WavelengthGrid.arange(lo, hi, step)


def cmd_phantom(ctx: Context) -> None:
    cube, labels = generate_phantom(_phantom_spec(ctx))
    io.write_cube(ctx.path("truth"), cube, ctx.hash)
    io.write_label_map(ctx.path("labels"), labels, ctx.hash)
    io.render_labels_png(ctx.path("labels.png"), labels)
    log.info("phantom %dx%dx%d, class counts %s", cube.rows, cube.cols, cube.bands,
             labels.counts().tolist())


def cmd_scan(ctx: Context) -> None:
    truth = ctx.cube("truth")
    spec = _phantom_spec(ctx)
    sc = ctx.cfg["scan"]
    plan = plan_for_shape(truth.rows, truth.cols, sc["spot_mm"], sc["overlap"], sc["dwell_s"])
    record: dict[str, Any] = {"plan": plan.to_dict()}
    for arm in ("vnir", "swir"):
        part = resample_to_grid(truth, _grid(sc[f"{arm}_nm"]))
        raw, refs, tof = simulate_scan(part, plan, spec, d_ref_mm=sc["d_ref_mm"])
        io.write_cube(ctx.path(f"raw_{arm}"), raw, ctx.hash)
        record[arm] = {"dark": refs.dark.tolist(), "white": refs.white.tolist()}
    # both spectrometers share the sensor pod, hence one ToF log
    record["tof"] = {"timestamps_s": tof.timestamps_s.tolist(),
                     "distances_mm": tof.distances_mm.tolist(), "d_ref_mm": tof.d_ref_mm}
    ctx.write_json("scan.json", record)


def cmd_calibrate(ctx: Context) -> None:
    scan = ctx.json("scan.json")
    plan = RasterPlan.from_dict(scan["plan"])
    t = scan["tof"]
    tof = TofLog(np.asarray(t["timestamps_s"]), np.asarray(t["distances_mm"]), t["d_ref_mm"])
    parts = []
    for arm in ("vnir", "swir"):
        raw = ctx.cube(f"raw_{arm}")
        refs = ReferencePair(raw.wavelengths, np.asarray(scan[arm]["dark"]),
                             np.asarray(scan[arm]["white"]))
        if ctx.cfg["scan"]["tof_compensation"]:
            raw = tof_compensate(raw, tof, plan, refs)
        parts.append(counts_to_reflectance(raw, refs))
    merged = merge_cubes(*parts)
    io.write_cube(ctx.path("reflectance"), merged, ctx.hash)
    log.info("reflectance cube with %d bands %.0f-%.0f nm", merged.bands, merged.grid.min,
             merged.grid.max)


def cmd_preprocess(ctx: Context) -> None:
    p = ctx.cfg["preprocess"]
    cube = ctx.cube("reflectance")
    high = np.inf if p["mask_high"] is None else float(p["mask_high"])
    cube = mask_background(cube, p["mask_low"], high)
    cube = clip_reflectance(cube, 0.0)
    cube = crop_bands(cube, *p["crop_nm"])
    cube = smooth_spectra(cube, p["smooth_window"], p["polyorder"], p["window_table"] or None)
    io.write_cube(ctx.path("preprocessed"), cube, ctx.hash)
    log.info("%d tissue pixels kept", int(cube.mask.sum()))


def _dtwi_params(ctx: Context, absorb: HyperCube) -> DtwiParams:
    d = ctx.cfg["maps"]["dtwi"]
    if d["s1"] is not None and d["s2"] is not None:
        return DtwiParams(float(d["s1"]), float(d["s2"]))
    # anchors from the phantom's unburned and full-thickness classes
    return calibrate_dtwi(absorb, ctx.labels("labels"))


def cmd_maps(ctx: Context) -> None:
    m = ctx.cfg["maps"]
    cube = ctx.cube("preprocessed")
    absorb = absorbance(cube)
    params = _dtwi_params(ctx, absorb)
    d = dtwi(absorb, params)
    s = sto2(absorb, load_extinction_table(), tuple(m["sto2_window_nm"]))
    deriv = spectral_derivative(absorb, m["derivative_order"], m["derivative_window"])
    io.write_scalar_map(ctx.path("dtwi"), d, ctx.hash)
    io.write_scalar_map(ctx.path("sto2"), s, ctx.hash)
    io.write_cube(ctx.path("derivative"), deriv, ctx.hash)
    ctx.write_json("dtwi_params.json", {"s1": params.s1, "s2": params.s2})


def cmd_lsci(ctx: Context) -> None:
    c = ctx.cfg["lsci"]
    labels = ctx.labels("labels")
    mis = c["misregistration"]
    rows, cols = labels.shape
    # camera frame = HSI frame seen through a small rigid offset
    T = AffineTransform2D.from_rotation(mis["rotation_deg"], mis["translation"],
                                        ((cols - 1) / 2.0, (rows - 1) / 2.0))
    cam = warp_map(labels, T)
    flow_by_class = np.asarray(c["class_flow"], dtype=float)
    if flow_by_class.size != labels.k:
        raise ConfigError(f"lsci.class_flow needs {labels.k} entries")
    lab = np.where(cam.mask, cam.labels, 0).astype(np.int64)
    flow = np.where(cam.mask, flow_by_class[lab], 0.0)
    stack = simulate_speckle(FlowMap(flow), c["frames"], ctx.seed, c["exposure_s"], c["rate_hz"])
    io.write_frame_stack(ctx.path("speckle"), stack.frames, stack.exposure_s, stack.rate_hz, ctx.hash)
    # fiducial centres in both frames; registration is fitted from these pairs only
    fid = np.array([[c0 + (sz - 1) / 2.0, r0 + (sz - 1) / 2.0]
                    for r0, c0, sz in ctx.cfg["phantom"]["fiducials"]])
    if fid.shape[0] < 3:
        raise ConfigError("LSCI registration needs at least 3 fiducials")
    io.write_columns_csv(ctx.path("fiducials.csv"), {
        "src_x": T.apply(fid)[:, 0], "src_y": T.apply(fid)[:, 1],
        "dst_x": fid[:, 0], "dst_y": fid[:, 1]})
    src, dst = read_point_pairs(ctx.path("fiducials.csv"))
    back = fit_affine(src, dst)
    if c["mode"] == "temporal":
        K = temporal_contrast(stack)
    elif c["mode"] == "spatial":
        K = spatial_contrast(stack, c["window"])
    else:
        raise ConfigError(f"lsci.mode must be 'temporal' or 'spatial', got {c['mode']!r}")
    # pixels with no tissue behind them carry no perfusion information
    K = ScalarMap(K.values, K.mask & cam.mask, K.name, K.units, K.provenance)
    K = warp_map(K, back)
    io.write_scalar_map(ctx.path("contrast"), K, ctx.hash)
    io.write_scalar_map(ctx.path("perfusion"), perfusion_index(K), ctx.hash)


def _training_pixels(ctx: Context) -> HyperCube:
    return l2_normalize(ctx.cube("preprocessed"))


def cmd_train_cae(ctx: Context) -> None:
    c = ctx.cfg["cae"]
    cube = _training_pixels(ctx)
    px = cube.pixels()
    wl = cube.wavelengths
    models = []
    for i, arm in enumerate(("vnir", "swir")):
        sel = wl < c["split_nm"] if arm == "vnir" else wl >= c["split_nm"]
        cfg = TrainConfig.from_dict(dict(c[arm], seed=ctx.seed + i))
        model, hist = train(px[:, sel], cfg, wl[sel])
        ctx.write_json(f"cae_{arm}.json", model.to_dict())
        models.append(model)
        log.info("%s CAE: final val loss %.4f", arm, hist["val_loss"][-1])
    bands = selected_bands(*models)
    ctx.write_json("bands.json", {"bands_nm": [float(b) for b in bands]})


def _cluster_bands(ctx: Context) -> list[float]:
    fixed = ctx.cfg["cluster"]["bands"]
    if fixed is not None:
        return [float(b) for b in fixed]
    return ctx.json("bands.json")["bands_nm"]


def cmd_cluster(ctx: Context) -> None:
    c = ctx.cfg["cluster"]
    truth = ctx.labels("labels")
    bands = _cluster_bands(ctx)
    cube = zscore_bands(l2_normalize(downsample_to_bands(ctx.cube("preprocessed"), bands)))
    px = cube.pixels()
    pca = pca_fit(px)
    k, seed = c["k"], ctx.seed
    if c["input"] == "spectra":
        feats = px
    elif c["input"] == "pca":
        feats = pca.transform(px)[:, :c["pca_components"]]
    elif c["input"] == "tsne":
        feats = tsne_embed(px, c["tsne_perplexity"], seed=seed)
    else:
        raise ConfigError(f"cluster.input must be spectra, pca or tsne, got {c['input']!r}")
    if c["method"] == "spectral":
        flat = cluster_pixels(feats, k, c["max_n"], seed)
    elif c["method"] == "kmeans":
        flat = kmeans(feats, k, seed, n_init=10).labels
    elif c["method"] == "gmm":
        flat = gmm_em(feats, k, seed).labels
    else:
        raise ConfigError(f"cluster.method must be spectral, kmeans or gmm, got {c['method']!r}")
    lab = labels_to_map(flat, cube.mask, k, c["method"])
    smooth = smooth_labels(lab, c["radius"])
    io.write_label_map(ctx.path("clusters"), lab, ctx.hash)
    io.write_label_map(ctx.path("clusters_smoothed"), smooth, ctx.hash)
    ctx.write_json("cluster.json", {
        "bands_nm": bands,
        "ari": adjusted_rand_index(lab, truth),
        "ari_smoothed": adjusted_rand_index(smooth, truth),
        "pca_explained_variance_ratio": pca.explained_variance_ratio.tolist(),
    })


def _class_means(smap: ScalarMap, labels: LabelMap) -> dict[str, float | None]:
    out = {}
    names = labels.class_names or tuple(str(i) for i in range(labels.k))
    for i, name in enumerate(names):
        sel = smap.mask & labels.mask & (labels.labels == i)
        out[name] = float(np.mean(smap.values[sel])) if sel.any() else None
    return out


def cmd_report(ctx: Context) -> None:
    truth = ctx.labels("labels")
    d, s = ctx.scalar("dtwi"), ctx.scalar("sto2")
    perf = ctx.scalar("perfusion")
    clusters = ctx.labels("clusters_smoothed")
    summary = ctx.json("cluster.json")
    for name, smap in (("dtwi", d), ("sto2", s), ("perfusion", perf)):
        io.render_scalar_png(ctx.path(f"{name}.png"), smap)
        io.export_map_csv(ctx.path(f"{name}.csv"), smap.values, smap.mask)
    io.render_labels_png(ctx.path("clusters.png"), clusters)
    io.export_map_csv(ctx.path("clusters.csv"), clusters.labels, clusters.mask)
    ctx.write_json("report.json", {
        "seed": ctx.seed,
        "bands_nm": summary["bands_nm"],
        "band_count": len(summary["bands_nm"]),
        "dtwi_class_means": _class_means(d, truth),
        "sto2_class_means": _class_means(s, truth),
        "perfusion_class_means": _class_means(perf, truth),
        "ari": summary["ari"],
        "ari_smoothed": summary["ari_smoothed"],
        "pca_explained_variance_ratio": summary["pca_explained_variance_ratio"],
    })


COMMANDS: dict[str, Callable[[Context], None]] = {
    "phantom": cmd_phantom,
    "scan": cmd_scan,
    "calibrate": cmd_calibrate,
    "preprocess": cmd_preprocess,
    "maps": cmd_maps,
    "lsci": cmd_lsci,
    "train-cae": cmd_train_cae,
    "cluster": cmd_cluster,
    "report": cmd_report,
}
PIPELINE = tuple(COMMANDS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="burnscope", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*COMMANDS, "all"):
        p = sub.add_parser(name, help="run every stage in order" if name == "all" else None)
        p.add_argument("--config", help="JSON config; omitted sections use defaults")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", default="burnscope_out", help="artifact directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        ctx = Context(load_config(args.config, args.seed), Path(args.out))
        for name in (PIPELINE if args.command == "all" else (args.command,)):
            log.info("running %s", name)
            COMMANDS[name](ctx)
    except BurnscopeError as exc:
        print(f"burnscope {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"burnscope {args.command}: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
