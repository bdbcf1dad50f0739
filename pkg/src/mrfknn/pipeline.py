"""End-to-end experiments: synthetic acquisitions, DM/SDM baselines, network
training and inference, evaluation tables and the gridding/feature ablation.

Every step reads and writes a single output directory:

    out/
      config.json
      data/slice_000/{raw,t1,t2,mask}.mrft, phantom.json
      dictionary/            stacked dictionary (+ compressed copy)
      cache/knn_<hash>/      neighbor table
      checkpoints/{t1,t2}/   network weights + manifest, loss.csv
      maps/<method>/slice_XXX/
      reports/*.csv, *.json
"""
from __future__ import annotations

import json
import logging
import shutil
import statistics
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from . import gridding, matching, metrics, neuralnet, phantom, sequence, trajectory
from .core import is_pow2, load_tensor, rng, save_tensor

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "slice_seed",
    "synth_slice",
    "synth_fully_sampled",
    "cmd_synth",
    "cmd_dict",
    "cmd_baseline",
    "cmd_train",
    "cmd_infer",
    "cmd_eval",
    "cmd_ablate",
    "ABLATION_COLUMNS",
    "OutputBusy",
]

ABLATION_COLUMNS = ["average", "bilinear", "gaussian",
                    "none", "xy", "density", "xy+density"]
_FEATURE_FLAGS = {"none": (False, False), "xy": (True, False),
                  "density": (False, True), "xy+density": (True, True)}


@dataclass
class ExperimentConfig:
    M: int = 64
    n: int = 256
    R: int = 48
    turns: float = 12
    T: int = 576
    K: int = 4
    D_t1: int = 64
    D_t2: int = 164
    unet_channels: list = field(default_factory=lambda: [64, 128, 256])
    output_domain: str = "kspace"
    noise_snr_db: float | None = 30.0
    train_slices: int = 8
    test_slices: int = 2
    num_ellipses: int = 8
    tissue_classes: list = field(default_factory=lambda: [list(c) for c in phantom.tissue_defaults()])
    t1_grid: list | None = None
    t2_grid: list | None = None
    kernel: str = "kaiser_bessel"
    dcf_weighting: str = "arc"
    sdm_rank: int = 10
    xy: bool = True
    density: bool = True
    epochs: int = 100
    lr0: float = 2e-4
    lr_decay: float = 0.99
    batch: int = 2
    ablate_targets: list = field(default_factory=lambda: ["t1", "t2"])
    timing_repeats: int = 5
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        errs = []
        if not is_pow2(self.M) or self.M < 16:
            errs.append(f"M={self.M} must be a power of two >= 16")
        if self.T % self.R:
            errs.append(f"T={self.T} not divisible by R={self.R}")
        if self.n < 2 or self.R < 1 or self.turns < 1:
            errs.append("spiral needs n >= 2, R >= 1, turns >= 1")
        if not 1 <= self.K <= self.n * self.R:
            errs.append(f"K={self.K} outside [1, N={self.n * self.R}]")
        if self.kernel not in ("average", "bilinear", "gaussian", "kaiser_bessel"):
            errs.append(f"unknown kernel {self.kernel!r}")
        if self.train_slices < 1 or self.test_slices < 1:
            errs.append("need at least one train and one test slice")
        if not 1 <= self.sdm_rank <= self.T // self.R:
            errs.append(f"sdm_rank={self.sdm_rank} outside [1, T'={self.T // self.R}]")
        if self.output_domain not in ("kspace", "image"):
            errs.append(f"unknown output_domain {self.output_domain!r}")
        if any(t not in ("t1", "t2") for t in self.ablate_targets):
            errs.append("ablate_targets must be drawn from t1, t2")
        for c in self.tissue_classes:
            try:
                phantom._check_class(*c)
            except ValueError as exc:
                errs.append(str(exc))
        if errs:
            raise ValueError("invalid experiment config: " + "; ".join(errs))

    @property
    def T_prime(self) -> int:
        return self.T // self.R

    @property
    def n_slices(self) -> int:
        return self.train_slices + self.test_slices

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    # derived objects -----------------------------------------------------
    def trajectory(self) -> trajectory.Trajectory:
        return trajectory.make_spiral(self.n, self.R, self.turns)

    def sequence(self) -> sequence.SequenceParams:
        return sequence.default_schedule(self.T, self.seed, self.R)

    def phantom_spec(self, s: int) -> phantom.PhantomSpec:
        return phantom.PhantomSpec(M=self.M, num_ellipses=self.num_ellipses,
                                   tissue_classes=tuple(tuple(c) for c in self.tissue_classes),
                                   seed=slice_seed(self.seed, s))

    def grids(self):
        t1 = sequence.default_t1_grid() if self.t1_grid is None else np.asarray(self.t1_grid, float)
        t2 = sequence.default_t2_grid() if self.t2_grid is None else np.asarray(self.t2_grid, float)
        return t1, t2

    def gridding_kernel(self, kind: str | None = None) -> gridding.GriddingKernel:
        return gridding.GriddingKernel.default(kind or self.kernel)


def slice_seed(seed: int, s: int) -> int:
    return int(np.random.SeedSequence([seed, s]).generate_state(1, np.uint64)[0])


# -------------------------------------------------------------------- synthesis

def _class_decomposition(tm: phantom.TissueMap):
    """Unique (T1, T2) classes of a phantom and their indicator images."""
    pairs = np.stack([tm.t1[tm.mask], tm.t2[tm.mask]], axis=1)
    classes = np.unique(pairs, axis=0)
    masks = np.stack([(tm.t1 == a) & (tm.t2 == b) & tm.mask for a, b in classes])
    return classes, masks.astype(np.float64)


def _noise_sigma(mean_mag: float, snr_db: float | None) -> float:
    if snr_db is None or np.isinf(snr_db):
        return 0.0
    return mean_mag / 10 ** (snr_db / 20)


def synth_slice(tm: phantom.TissueMap, seq: sequence.SequenceParams,
                traj: trajectory.Trajectory, snr_db: float | None, seed: int) -> np.ndarray:
    """Single-arm-per-frame acquisition of the phantom; returns raw ``(n, T)``.

    Frame ``t`` samples arm ``t % R`` of an image whose pixels follow their
    tissue's fingerprint. The image series is a sum of per-class indicator
    images times fingerprints, so only one transform per class is needed.
    Complex Gaussian noise has total variance ``sigma^2`` with
    ``sigma = mean|raw| / 10^(snr/20)``.
    """
    classes, masks = _class_decomposition(tm)
    fp = sequence.simulate_fingerprints(classes[:, 0], classes[:, 1], seq)      # (C, T)
    A = np.stack([gridding.sample_nonuniform(m, traj) for m in masks])          # (C, N)
    A = A.reshape(len(classes), traj.R, traj.n)
    arms = np.arange(seq.T) % traj.R
    raw = np.einsum("ct,cts->st", fp, A[:, arms, :])
    sigma = _noise_sigma(np.abs(raw).mean(), snr_db)
    if sigma:
        g = rng(seed)
        raw = raw + sigma / np.sqrt(2) * (g.standard_normal(raw.shape)
                                          + 1j * g.standard_normal(raw.shape))
    return raw


def synth_fully_sampled(tm: phantom.TissueMap, seq: sequence.SequenceParams,
                        traj: trajectory.Trajectory, window: int, snr_db: float | None,
                        seed: int) -> np.ndarray:
    """Every frame samples the whole trajectory; frames are averaged per window.

    Returns the ``(N, T // window)`` stacked matrix. Samples are exact DFT
    values. Noise is drawn per raw sample, at the same SNR definition as
    :func:`synth_slice`, before window averaging.
    """
    classes, masks = _class_decomposition(tm)
    fp = sequence.simulate_fingerprints(classes[:, 0], classes[:, 1], seq)
    A = np.stack([trajectory_dft(m, traj.points) for m in masks])               # (C, N)
    Tp = seq.T // window
    mean_mag = np.mean([np.abs(A.T @ fp[:, w * window:(w + 1) * window]).mean()
                        for w in range(Tp)])
    sigma = _noise_sigma(mean_mag, snr_db)
    g = rng(seed)
    out = np.empty((traj.N, Tp), dtype=np.complex128)
    for w in range(Tp):
        block = A.T @ fp[:, w * window:(w + 1) * window]
        if sigma:
            block = block + sigma / np.sqrt(2) * (g.standard_normal(block.shape)
                                                  + 1j * g.standard_normal(block.shape))
        out[:, w] = block.mean(axis=1)
    return out


def trajectory_dft(image, points):
    """Exact DFT samples; uses the FFT when every point is an integer frequency."""
    M = image.shape[0]
    u = np.asarray(points) * M
    if np.allclose(u, np.round(u), atol=1e-9):
        spectrum = np.fft.fft2(image)
        iu = np.mod(np.round(u).astype(np.int64), M)
        return spectrum[iu[:, 0], iu[:, 1]]
    return gridding.dft2_direct(points, image)


class OutputBusy(RuntimeError):
    pass


def _slice_dir(out: Path, s: int) -> Path:
    return out / "data" / f"slice_{s:03d}"


class _OutputLock:
    """Exclusive lock on an output directory for the duration of a command."""

    def __init__(self, out: Path):
        out.mkdir(parents=True, exist_ok=True)
        self._out = out
        self._lock = FileLock(str(out / ".lock"), timeout=0)

    def __enter__(self):
        try:
            self._lock.acquire()
        except Timeout:
            raise OutputBusy(f"{self._out} is in use by another command") from None
        return self

    def __exit__(self, *exc):
        self._lock.release()


def cmd_synth(cfg: ExperimentConfig, out) -> list[Path]:
    """Write ``n_slices`` phantoms with their raw spiral acquisitions."""
    out = Path(out)
    with _OutputLock(out):
        (out / "config.json").write_text(cfg.to_json())
        traj, seq = cfg.trajectory(), cfg.sequence()
        written = []
        try:
            for s in range(cfg.n_slices):
                spec = cfg.phantom_spec(s)
                tm = phantom.generate_phantom(spec)
                raw = synth_slice(tm, seq, traj, cfg.noise_snr_db, spec.seed + 1)
                d = _slice_dir(out, s)
                phantom.save_tissue_map(d, tm, spec)
                save_tensor(d / "raw.mrft", raw)
                written.append(d)
        except BaseException:
            for d in written:
                shutil.rmtree(d, ignore_errors=True)
            raise
        log.info("synthesized %d slices in %s", len(written), out)
        return written


def _load_slice(out: Path, s: int):
    d = _slice_dir(out, s)
    if not (d / "raw.mrft").exists():
        raise FileNotFoundError(f"missing dataset slice {d}; run synth first")
    return load_tensor(d / "raw.mrft"), phantom.load_tissue_map(d)


def _split(cfg):
    return list(range(cfg.train_slices)), list(range(cfg.train_slices, cfg.n_slices))


# -------------------------------------------------------------------- dictionary

def cmd_dict(cfg: ExperimentConfig, out) -> tuple[sequence.Dictionary, sequence.Dictionary]:
    """Build the window-stacked dictionary and its SVD-compressed copy."""
    out = Path(out)
    t1g, t2g = cfg.grids()
    full = sequence.build_dictionary(t1g, t2g, cfg.sequence())
    stacked = sequence.stack_dictionary(full, cfg.R)
    comp = sequence.svd_compress(stacked, cfg.sdm_rank)
    manifest = dict(t1_grid=t1g.tolist(), t2_grid=t2g.tolist(), seed=cfg.seed, T=cfg.T,
                    window=cfg.R)
    sequence.save_dictionary(out / "dictionary" / "stacked", stacked, manifest)
    sequence.save_dictionary(out / "dictionary" / f"svd_r{cfg.sdm_rank}", comp, manifest)
    return stacked, comp


def _dictionaries(cfg, out):
    d = Path(out) / "dictionary"
    if (d / "stacked").exists() and (d / f"svd_r{cfg.sdm_rank}").exists():
        return (sequence.load_dictionary(d / "stacked"),
                sequence.load_dictionary(d / f"svd_r{cfg.sdm_rank}"))
    return cmd_dict(cfg, out)


# -------------------------------------------------------------------- baselines

def _median_time(fn, repeats):
    times, result = [], None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return result, statistics.median(times)


def _dcf_for(cfg, traj, kind):
    # the average kernel normalizes by sample count itself
    if kind == "average":
        return np.full(traj.N, 1.0 / traj.N)
    return gridding.analytic_dcf(traj, weighting=cfg.dcf_weighting)


def _mean_reports(method, reports, **timing):
    keys = ["mae_t1", "mae_t2", "ssim_t1", "ssim_t2", "nrmse_t1", "nrmse_t2"]
    vals = {k: float(np.mean([getattr(r, k) for r in reports])) for k in keys}
    return metrics.EvalReport(method=method, **vals, **timing)


def cmd_baseline(cfg: ExperimentConfig, out, method: str = "dm", kernel: str | None = None,
                 write: bool = True) -> metrics.EvalReport:
    """Reconstruct each test slice, match it, and score against ground truth."""
    if method not in ("dm", "sdm"):
        raise ValueError(f"unknown baseline {method!r}")
    out = Path(out)
    kind = kernel or cfg.kernel
    traj = cfg.trajectory()
    kern = cfg.gridding_kernel(kind)
    dcf = _dcf_for(cfg, traj, kind)
    stacked_dict, comp = _dictionaries(cfg, out)
    reports, recon_t, match_t = [], [], []
    for s in _split(cfg)[1]:
        raw, tm = _load_slice(out, s)
        series, tr = _median_time(lambda: gridding.recon_series(raw, traj, kern, dcf, cfg.M),
                                  cfg.timing_repeats)
        if method == "dm":
            res, tmatch = _median_time(lambda: matching.dm_match(series, stacked_dict, tm.mask),
                                       cfg.timing_repeats)
        else:
            res, tmatch = _median_time(lambda: matching.sdm_match(series, comp, tm.mask),
                                       cfg.timing_repeats)
        recon_t.append(tr)
        match_t.append(tmatch)
        reports.append(metrics.EvalReport.from_maps(method, res.t1_map, res.t2_map,
                                                    tm.t1, tm.t2, tm.mask))
        if write:
            matching.save_match(out / "maps" / f"{method}_{kind}" / f"slice_{s:03d}", res,
                                dict(rank=comp.rank if method == "sdm" else None, kernel=kind))
    rep = _mean_reports(method, reports, recon_s=float(np.mean(recon_t)),
                        match_s=float(np.mean(match_t)),
                        total_s=float(np.mean(recon_t) + np.mean(match_t)))
    rep.manifest = dict(kernel=kind, slices=_split(cfg)[1])
    if write:
        (out / "reports").mkdir(parents=True, exist_ok=True)
        (out / "reports" / f"baseline_{method}_{kind}.json").write_text(rep.to_json())
    return rep


# -------------------------------------------------------------------- learned path

def neighbor_table(cfg: ExperimentConfig, out) -> tuple[trajectory.NeighborTable, float]:
    """Cached KNN table; returns the table and the build time (0 when cached)."""
    traj = cfg.trajectory()
    d = Path(out) / "cache" / f"knn_{traj.digest()}_M{cfg.M}_K{cfg.K}"
    if (d / "idx.mrft").exists():
        idx = load_tensor(d / "idx.mrft").astype(np.int64)
        feat = load_tensor(d / "feat.mrft")
        return trajectory.NeighborTable(M=cfg.M, K=cfg.K, idx=idx, feat=feat), 0.0
    t0 = time.perf_counter()
    table = trajectory.knn_table(traj, cfg.M, cfg.K)
    elapsed = time.perf_counter() - t0
    d.mkdir(parents=True, exist_ok=True)
    save_tensor(d / "idx.mrft", table.idx.astype(np.int32))
    save_tensor(d / "feat.mrft", table.feat)
    (d / "table.json").write_text(json.dumps(
        dict(M=cfg.M, K=cfg.K, trajectory=traj.digest()), indent=2))
    return table, elapsed


def slice_features(cfg, raw, table, traj) -> np.ndarray:
    """Agglomerated input for one slice; signals scaled to unitary k-space units."""
    stacked = trajectory.stack_sliding_window(raw, traj) / cfg.M
    return trajectory.agglomerate(stacked, table)


class FeatureScaler:
    """Per-channel standardization from training data, then the ablation keep-mask."""

    def __init__(self, mean, std, keep):
        self.mean = np.asarray(mean, np.float64)
        self.std = np.asarray(std, np.float64)
        self.keep = np.asarray(keep, bool)

    @classmethod
    def fit(cls, feats, keep):
        stack = np.concatenate([f.reshape(-1, f.shape[-1]) for f in feats])
        std = stack.std(axis=0)
        return cls(stack.mean(axis=0), np.where(std > 1e-12, std, 1.0), keep)

    def __call__(self, F):
        return ((F - self.mean) / self.std * self.keep).astype(np.float32)

    def to_dict(self):
        return dict(mean=self.mean.tolist(), std=self.std.tolist(),
                    keep=self.keep.astype(int).tolist())

    @classmethod
    def from_dict(cls, d):
        return cls(d["mean"], d["std"], np.asarray(d["keep"], bool))


def _learned_inputs(cfg, out, xy, density):
    out = Path(out)
    traj = cfg.trajectory()
    table, build_t = neighbor_table(cfg, out)
    keep = trajectory.feature_channel_mask(cfg.K, cfg.T_prime, xy, density)
    train_ids, test_ids = _split(cfg)
    feats, maps = {}, {}
    for s in train_ids + test_ids:
        raw, tm = _load_slice(out, s)
        feats[s] = slice_features(cfg, raw, table, traj)
        maps[s] = tm
    scaler = FeatureScaler.fit([feats[s] for s in train_ids], keep)
    return feats, maps, scaler, build_t


def _train_target(cfg, target, feats, maps, scaler, train_ids, log_fn=None):
    C = next(iter(feats.values())).shape[-1]
    D = cfg.D_t1 if target == "t1" else cfg.D_t2
    net = neuralnet.QuantNet(C, D, target, cfg.unet_channels, cfg.output_domain)
    neuralnet.init_weights(net, slice_seed(cfg.seed, 10_000 + (target == "t2")))
    scale = neuralnet.T1_SCALE if target == "t1" else neuralnet.T2_SCALE
    data = [(scaler(feats[s]), getattr(maps[s], target) / scale, maps[s].mask) for s in train_ids]
    tcfg = neuralnet.TrainConfig(batch=cfg.batch, lr0=cfg.lr0, lr_decay_per_epoch=cfg.lr_decay,
                                 epochs=cfg.epochs, seed=cfg.seed)
    net, curve = neuralnet.train(net, data, tcfg, log=log_fn)
    return net, curve, tcfg


def cmd_train(cfg: ExperimentConfig, out, targets=("t1", "t2")) -> dict:
    """Train one network per target; returns loss curves and the KNN build time."""
    out = Path(out)
    with _OutputLock(out):
        feats, maps, scaler, build_t = _learned_inputs(cfg, out, cfg.xy, cfg.density)
        log.info("neighbor table build time: %.3f s", build_t)
        train_ids = _split(cfg)[0]
        result = dict(table_build_s=build_t)
        for target in targets:
            net, curve, tcfg = _train_target(
                cfg, target, feats, maps, scaler, train_ids,
                lambda e, l, lr: log.debug("%s epoch %d loss %.5f lr %.3g", target, e, l, lr))
            ck = out / "checkpoints" / target
            neuralnet.save_checkpoint(ck, net, tcfg, epoch=cfg.epochs,
                                      extra=dict(scaler=scaler.to_dict(), seed=cfg.seed))
            neuralnet.write_loss_curve(ck / "loss.csv", curve)
            result[target] = curve
        return result


def _load_scaler(ck: Path) -> FeatureScaler:
    return FeatureScaler.from_dict(json.loads((ck / "checkpoint.json").read_text())["scaler"])


def cmd_infer(cfg: ExperimentConfig, out, png: bool = False) -> list[dict]:
    """Apply trained networks to every test slice; writes maps in ms."""
    out = Path(out)
    traj = cfg.trajectory()
    table, _ = neighbor_table(cfg, out)
    nets = {t: neuralnet.load_checkpoint(out / "checkpoints" / t) for t in ("t1", "t2")}
    scaler = _load_scaler(out / "checkpoints" / "t1")
    rows = []
    for s in _split(cfg)[1]:
        raw, tm = _load_slice(out, s)
        t0 = time.perf_counter()
        F = scaler(slice_features(cfg, raw, table, traj))
        feat_t = time.perf_counter() - t0
        times = []
        for _ in range(max(1, cfg.timing_repeats)):
            t1, t2, dt = neuralnet.infer(nets["t1"], nets["t2"], F, tm.mask)
            times.append(dt)
        d = out / "maps" / "proposed" / f"slice_{s:03d}"
        d.mkdir(parents=True, exist_ok=True)
        save_tensor(d / "t1.mrft", t1)
        save_tensor(d / "t2.mrft", t2)
        if png:
            export_png(d / "t1.png", t1, neuralnet.T1_SCALE)
            export_png(d / "t2.png", t2, neuralnet.T2_SCALE)
        rows.append(dict(slice=s, features_s=feat_t, forward_s=statistics.median(times)))
    (out / "reports").mkdir(parents=True, exist_ok=True)
    (out / "reports" / "infer_timing.json").write_text(json.dumps(rows, indent=2))
    return rows


def export_png(path, image, full_scale) -> None:
    """16-bit grayscale PNG plus a JSON sidecar giving ms per count."""
    from PIL import Image
    counts = np.clip(np.round(np.asarray(image) / full_scale * 65535), 0, 65535).astype(np.uint16)
    Image.fromarray(counts.T.copy()).save(path)
    Path(path).with_suffix(".json").write_text(
        json.dumps(dict(ms_per_count=full_scale / 65535, full_scale_ms=full_scale), indent=2))


def cmd_eval(cfg: ExperimentConfig, out) -> list[metrics.EvalReport]:
    """Comparison table across DM, SDM and the learned path on the test slices."""
    out = Path(out)
    reports = [cmd_baseline(cfg, out, "dm"), cmd_baseline(cfg, out, "sdm")]
    timing = cmd_infer(cfg, out)
    per = []
    for s in _split(cfg)[1]:
        _, tm = _load_slice(out, s)
        d = out / "maps" / "proposed" / f"slice_{s:03d}"
        per.append(metrics.EvalReport.from_maps("proposed", load_tensor(d / "t1.mrft"),
                                                load_tensor(d / "t2.mrft"),
                                                tm.t1, tm.t2, tm.mask))
    fwd = float(np.mean([r["forward_s"] for r in timing]))
    feat = float(np.mean([r["features_s"] for r in timing]))
    reports.append(_mean_reports("proposed", per, recon_s=feat, match_s=fwd, total_s=feat + fwd))
    metrics.write_report_csv(out / "reports" / "eval.csv", reports)
    (out / "reports" / "eval.json").write_text(
        json.dumps([json.loads(r.to_json()) for r in reports], indent=2))
    return reports


def cmd_ablate(cfg: ExperimentConfig, out, columns=ABLATION_COLUMNS) -> dict:
    """Handcrafted-kernel DM pipelines vs. learned variants with features zeroed.

    Returns ``{column: {"mae_t1": .., "mae_t2": .., "channels": ..}}`` and writes
    ``reports/ablation.csv`` (rows MAE T1 / MAE T2, one column per variant).
    """
    out = Path(out)
    table = {}
    for col in columns:
        if col in ("average", "bilinear", "gaussian"):
            rep = cmd_baseline(cfg, out, "dm", kernel=col, write=False)
            table[col] = dict(mae_t1=rep.mae_t1, mae_t2=rep.mae_t2, channels=None)
            continue
        xy, density = _FEATURE_FLAGS[col]
        feats, maps, scaler, _ = _learned_inputs(cfg, out, xy, density)
        train_ids, test_ids = _split(cfg)
        entry = dict(channels=trajectory.active_channels(cfg.K, cfg.T_prime, xy, density),
                     mae_t1=None, mae_t2=None)
        for target in cfg.ablate_targets:
            net, _, _ = _train_target(cfg, target, feats, maps, scaler, train_ids)
            errs = []
            for s in test_ids:
                pred = neuralnet.predict(net, scaler(feats[s]), maps[s].mask)
                errs.append(metrics.mae_pct(pred, getattr(maps[s], target), maps[s].mask))
            entry[f"mae_{target}"] = float(np.mean(errs))
        table[col] = entry
    (out / "reports").mkdir(parents=True, exist_ok=True)
    with open(out / "reports" / "ablation.csv", "w") as fh:
        fh.write("metric," + ",".join(columns) + "\n")
        for key in ("mae_t1", "mae_t2", "channels"):
            fh.write(key + "," + ",".join("" if table[c][key] is None else repr(table[c][key])
                                          for c in columns) + "\n")
    return table
