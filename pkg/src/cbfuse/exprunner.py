"""Dataset assembly, the alpha_np x alpha_a experiment grid, and table rendering.

Pipeline for one phantom: generate -> crop around the liver -> project with
``alpha_np`` views -> FDK -> downscale by two -> pair with the (mis)aligned CT
as a second input channel (early fusion). Labels stay in the CBCT frame.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import BadRatios, ColumnMismatch
from .evalmetrics import CLASSES, DiceReport
from .fdk import ReconConfig, reconstruct
from .misalign import MisalignmentSpec, apply_misalignment
from .phantom import PhantomSpec, center_on_liver, generate_phantom
from .projsim import forward_project, make_geometry
from .volgrid import downscale
from .volio import load_volume, store_volume

log = logging.getLogger(__name__)

MODES = ("baseline_cbct", "no_misalignment", "affine", "elastic")
RESULT_COLUMNS = ("task", "mode", "alpha_a", "alpha_np", "seed", "dice")


@dataclass(frozen=True)
class DataConfig:
    phantom_dims: int = 64
    spacing: float = 2.0
    fov: int = 64
    downscale: int = 2
    base_seed: int = 0
    filter: str = "ramp"
    geometry: dict = field(default_factory=dict)

    def tag(self):
        """Short digest of the config; keeps disk caches of different configs apart."""
        text = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha1(text.encode()).hexdigest()[:8]


@dataclass
class FusedSample:
    channels: list           # [cbct, ct] or [cbct]
    labels: object           # LabelVolume in the CBCT frame
    provenance: dict

    def __post_init__(self):
        g = self.channels[0].grid
        if any(c.grid != g for c in self.channels) or self.labels.grid != g:
            raise ValueError("fused channels and labels must share one grid")

    @property
    def n_channels(self):
        return len(self.channels)

    def arrays(self):
        """``(x, y)``: input ``(C, D, H, W)`` and two-channel target."""
        x = np.stack([c.data for c in self.channels]).astype(np.float32)
        return x, self.labels.channels()


class PairCache:
    """Memoises the (ct, cbct, labels) triple per (phantom seed, alpha_np, config tag).

    With ``directory`` set, triples are also persisted as ``.cbv`` files.
    """

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory else None
        self._mem = {}

    def _paths(self, key):
        stem = "_".join([f"ph{key[0]}", f"np{key[1]}", *map(str, key[2:])])
        return [self.directory / f"{stem}_{n}.cbv" for n in ("ct", "cbct", "labels")]

    def get(self, key, make):
        if key in self._mem:
            return self._mem[key]
        if self.directory is not None:
            paths = self._paths(key)
            if all(p.exists() for p in paths):
                self._mem[key] = tuple(load_volume(p) for p in paths)
                return self._mem[key]
        value = make()
        self._mem[key] = value
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
            for vol, p in zip(value, self._paths(key)):
                store_volume(vol, p)
        return value


def simulate_pair(phantom_seed, alpha_np, cfg=None):
    """(ct, cbct, labels) at training resolution for one phantom."""
    cfg = cfg or DataConfig()
    ct, labels = generate_phantom(PhantomSpec(seed=phantom_seed, dims=cfg.phantom_dims,
                                              spacing=cfg.spacing))
    ct, labels = center_on_liver(ct, labels, cfg.fov)
    geom = make_geometry(alpha_np, **cfg.geometry)
    cbct = reconstruct(forward_project(ct, geom), ReconConfig(ct.grid, cfg.filter))
    if cfg.downscale > 1:
        ct, cbct, labels = (downscale(v, cfg.downscale) for v in (ct, cbct, labels))
    return ct, cbct, labels


def build_dataset(n_phantoms, alpha_np, spec=None, cfg=None, cache=None):
    """Fused samples for phantoms ``base_seed .. base_seed + n - 1``.

    ``spec`` None gives single-channel CBCT samples; otherwise phantom ``i``
    gets its CT misaligned with ``replace(spec, seed=spec.seed + i)``, so
    every cell sharing ``spec.seed`` sees identical misalignments.
    """
    if n_phantoms < 10:
        raise ValueError("need at least 10 phantoms for a 0.7/0.2/0.1 split")
    cfg = cfg or DataConfig()
    cache = cache if cache is not None else PairCache()
    samples = []
    for i in range(n_phantoms):
        seed = cfg.base_seed + i
        ct, cbct, labels = cache.get((seed, int(alpha_np), cfg.tag()),
                                     lambda: simulate_pair(seed, alpha_np, cfg))
        prov = {"phantom_seed": seed, "alpha_np": int(alpha_np), "misalignment": None}
        if spec is None:
            samples.append(FusedSample([cbct], labels, prov))
            continue
        s = replace(spec, seed=spec.seed + i)
        prov["misalignment"] = asdict(s)
        samples.append(FusedSample([cbct, apply_misalignment(ct, s)], labels, prov))
    return samples


def split(samples, ratios=(0.7, 0.2, 0.1), seed=0):
    """Seeded shuffle into (train, val, test); floor sizes, remainder to train."""
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(samples)
    order = np.random.default_rng(seed).permutation(n)
    n_val = math.floor(ratios[1] * n + 1e-9)
    n_test = math.floor(ratios[2] * n + 1e-9)
    n_train = n - n_val - n_test
    parts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    return tuple([samples[i] for i in part] for part in parts)


def save_dataset(samples, out_dir, ratios=(0.7, 0.2, 0.1), split_seed=0):
    """Write samples as ``.cbv`` files plus a ``manifest.json`` recording the split."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = {id(s): i for i, s in enumerate(samples)}
    parts = split(samples, ratios, split_seed)
    entries = []
    for i, s in enumerate(samples):
        names = {"labels": f"sample_{i:03d}_labels.cbv"}
        store_volume(s.labels, out / names["labels"])
        chans = []
        for c, (vol, tag) in enumerate(zip(s.channels, ("cbct", "ct"))):
            chans.append(f"sample_{i:03d}_{tag}.cbv")
            store_volume(vol, out / chans[-1])
        entries.append({"channels": chans, "labels": names["labels"], "provenance": s.provenance})
    manifest = {"samples": entries,
                "split": {k: [index[id(s)] for s in part]
                          for k, part in zip(("train", "val", "test"), parts)}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_dataset(directory):
    """``{"train": [...], "val": [...], "test": [...]}`` of FusedSample."""
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    samples = [FusedSample([load_volume(d / c) for c in e["channels"]],
                           load_volume(d / e["labels"]), e["provenance"])
               for e in manifest["samples"]]
    return {k: [samples[i] for i in v] for k, v in manifest["split"].items()}


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class GridSpec:
    alpha_np: tuple = (32, 128, 490)
    alpha_a: tuple = (0.0, 0.25, 1.0)
    modes: tuple = MODES
    seeds: tuple = (0, 1, 2, 3)
    n_phantoms: int = 20
    split_seed: int = 0
    misalign_seed: int = 1000
    translation_scale: float = 1.0
    data: DataConfig = field(default_factory=DataConfig)
    train: dict = field(default_factory=lambda: {"epochs": 120, "batch_size": 2})
    unet: dict = field(default_factory=dict)
    cache_dir: str | None = None

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "data" in d:
            d["data"] = DataConfig(**d["data"])
        for key in ("alpha_np", "alpha_a", "modes", "seeds"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def full(cls, **kw):
        """The full 5 x 5 grid."""
        return cls(alpha_np=(32, 64, 128, 256, 490), alpha_a=(0.0, 0.125, 0.25, 0.5, 1.0), **kw)

    def cells(self):
        """All (mode, alpha_a, alpha_np) cells; alpha_a is None for the baseline."""
        out = []
        for n in self.alpha_np:
            for mode in self.modes:
                if mode == "baseline_cbct":
                    out.append((mode, None, n))
                elif mode == "no_misalignment":
                    out.append((mode, 0.0, n))
                else:
                    out.extend((mode, float(a), n) for a in self.alpha_a if a > 0)
        return out

    def training_groups(self):
        """Cells grouped by identical training data: {(alpha_a, alpha_np): [modes]}."""
        groups = {}
        for mode, a, n in self.cells():
            groups.setdefault((a, n), []).append(mode)
        return groups


def _spec_for(grid, alpha_a, mode):
    if alpha_a is None:
        return None
    return MisalignmentSpec(alpha_a, grid.misalign_seed, mode, grid.translation_scale)


def run_training_group(grid, alpha_a, alpha_np, modes, cache=None):
    """Train once per seed on affine-misaligned data and evaluate each mode on the test split.

    Returns ``[(task, mode, alpha_a, alpha_np, seed, dice), ...]``.
    """
    from .nnet import TrainConfig, UNetConfig, build_unet, predict, train

    cache = cache if cache is not None else PairCache(grid.cache_dir)
    train_spec = _spec_for(grid, alpha_a, "affine_only")
    data = build_dataset(grid.n_phantoms, alpha_np, train_spec, grid.data, cache)
    train_set, val_set, test_set = split(data, seed=grid.split_seed)
    test_ids = [s.provenance["phantom_seed"] - grid.data.base_seed for s in test_set]

    eval_sets = {}
    for mode in modes:
        if mode == "elastic":
            full = build_dataset(grid.n_phantoms, alpha_np,
                                 _spec_for(grid, alpha_a, "affine_then_elastic"), grid.data, cache)
            eval_sets[mode] = [full[i] for i in test_ids]
        else:
            eval_sets[mode] = test_set

    in_channels = 1 if alpha_a is None else 2
    ucfg = UNetConfig(in_channels=in_channels, **grid.unet)
    tr = [s.arrays() for s in train_set]
    va = [s.arrays() for s in val_set]
    rows = []
    for seed in grid.seeds:
        model = build_unet(ucfg, seed=seed)
        train(model, tr, TrainConfig(seed=seed, **grid.train), va)
        for mode in modes:
            rep = DiceReport()
            for s in eval_sets[mode]:
                x, _ = s.arrays()
                rep.add(predict(model, x), s.labels)
            for task, value in rep.mean.items():
                rows.append((task, mode, alpha_a, alpha_np, seed, value))
        log.info("alpha_np=%s alpha_a=%s seed=%s done", alpha_np, alpha_a, seed)
    return rows


def run_cell(grid, mode, alpha_a, alpha_np, cache=None):
    """Per-seed test Dice of one cell: ``{task: [dice for each seed]}``."""
    if mode == "baseline_cbct":
        alpha_a = None
    elif mode == "no_misalignment":
        alpha_a = 0.0
    rows = run_training_group(grid, alpha_a, alpha_np, [mode], cache)
    out = {t: [] for t in CLASSES}
    for task, _, _, _, _, value in rows:
        out[task].append(value)
    return out


@dataclass
class GridResult:
    records: list = field(default_factory=list)   # dicts with RESULT_COLUMNS

    def add_rows(self, rows):
        for task, mode, a, n, seed, d in rows:
            self.records.append({"task": task, "mode": mode,
                                 "alpha_a": None if a is None else float(a),
                                 "alpha_np": int(n), "seed": int(seed), "dice": float(d)})

    def values(self, task, mode, alpha_a, alpha_np):
        out = []
        for r in self.records:
            if (r["task"] == task and r["mode"] == mode and r["alpha_np"] == alpha_np
                    and _same_alpha(r["alpha_a"], alpha_a)):
                out.append(r["dice"])
        return out

    def mean(self, task, mode, alpha_a, alpha_np):
        v = [x for x in self.values(task, mode, alpha_a, alpha_np) if not math.isnan(x)]
        return float(np.mean(v)) if v else float("nan")

    def alpha_np_values(self):
        return sorted({r["alpha_np"] for r in self.records}, reverse=True)

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.records:
            row = dict(r)
            row["alpha_a"] = "" if r["alpha_a"] is None else r["alpha_a"]
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def read_csv(cls, path):
        return cls.from_csv(Path(path).read_text())

    @classmethod
    def from_csv(cls, text):
        res = cls()
        for row in csv.DictReader(io.StringIO(text)):
            a = row["alpha_a"].strip()
            res.records.append({"task": row["task"], "mode": row["mode"],
                                "alpha_a": None if a in ("", "None") else float(a),
                                "alpha_np": int(row["alpha_np"]), "seed": int(row["seed"]),
                                "dice": float(row["dice"])})
        return res


def _same_alpha(a, b):
    if a is None or b is None:
        return a is None and b is None
    return abs(a - b) < 1e-12


def _group_job(args, cache=None):
    grid, alpha_a, alpha_np, modes = args
    try:
        return run_training_group(grid, alpha_a, alpha_np, modes, cache)
    except Exception as exc:  # a failed group must not sink the grid
        log.error("group alpha_a=%s alpha_np=%s failed: %s", alpha_a, alpha_np, exc)
        seeds = grid.seeds
        return [(t, m, alpha_a, alpha_np, s, float("nan"))
                for m in modes for s in seeds for t in CLASSES]


def run_grid(grid, out_dir=None, workers=None):
    """Run every training group; results do not depend on ``workers``."""
    workers = workers or int(os.environ.get("CBFUSE_THREADS", "1"))
    jobs = [(grid, a, n, modes) for (a, n), modes in grid.training_groups().items()]
    result = GridResult()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_group_job, jobs))
    else:
        cache = PairCache(grid.cache_dir)    # groups share simulated pairs
        outputs = [_group_job(j, cache) for j in jobs]
    for rows in outputs:
        result.add_rows(rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.to_csv(out / "results.csv")
        (out / "summary.md").write_text(render_table(result).to_markdown())
    return result


# ---------------------------------------------------------------------------
# reporting

BOLD_DELTA = 0.05


def _row_label(mode, alpha_a):
    if mode == "baseline_cbct":
        return "base CBCT"
    if mode == "no_misalignment":
        return "no misalignment"
    return f"{'affine' if mode == 'affine' else 'elastic'}-s{alpha_a:g}"


def _sign(delta):
    if delta > 0:
        return "+"
    if delta < 0:
        return "-"
    return ""


@dataclass
class Table:
    rows: list   # one dict per (row label, task, alpha_np)

    def to_csv(self):
        buf = io.StringIO()
        cols = ["row", "task", "alpha_np", "dice", "delta_base", "improved", "degraded",
                "bold", "prev_sign", "prev_marked"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (f"{r[k]:.3f}" if isinstance(r[k], float) else r[k]) for k in cols})
        return buf.getvalue()

    def to_markdown(self):
        labels = list(dict.fromkeys(r["row"] for r in self.rows))
        tasks = list(dict.fromkeys(r["task"] for r in self.rows))
        nps = list(dict.fromkeys(r["alpha_np"] for r in self.rows))
        idx = {(r["row"], r["task"], r["alpha_np"]): r for r in self.rows}
        head = [""] + [f"{t} {n}" for t in tasks for n in nps]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for lab in labels:
            cells = [f"**{lab}**"]
            for t in tasks:
                for n in nps:
                    r = idx.get((lab, t, n))
                    if r is None or math.isnan(r["dice"]):
                        cells.append("n/a")
                        continue
                    v = f"{r['dice']:.3f}"
                    if r["bold"]:
                        v = f"**{v}**"
                    arrow = "↑" if r["improved"] else ("↓" if r["degraded"] else "")
                    sign = r["prev_sign"] + ("!" if r["prev_marked"] else "")
                    cells.append(f"{v}{arrow} {sign}".rstrip())
            lines.append("| " + " | ".join(cells) + " |")
        lines += ["", "↑/↓: better/worse than base CBCT; bold: |Δ| ≥ 0.05 vs base CBCT; "
                      "+/-: vs the next less aligned row, ! when |Δ| ≥ 0.05."]
        return "\n".join(lines) + "\n"


def render_table(results, baseline=None):
    """Per-cell means with deltas against the CBCT-only baseline.

    Rows are ordered base CBCT, no misalignment, then affine-s*, elastic-s*
    from the largest alpha_a down. The "previous" row of each mode chain is
    the next less aligned setting: affine-s(max) compares with base CBCT, and
    no misalignment compares with the smallest positive affine alpha_a.
    """
    baseline = baseline if baseline is not None else results
    nps = results.alpha_np_values()
    base_nps = baseline.alpha_np_values()
    if any(n not in base_nps for n in nps):
        raise ColumnMismatch(f"baseline columns {base_nps} do not cover {nps}")
    tasks = [t for t in CLASSES if any(r["task"] == t for r in results.records)]
    alphas = {m: sorted({r["alpha_a"] for r in results.records if r["mode"] == m}, reverse=True)
              for m in ("affine", "elastic")}

    order = [("baseline_cbct", None, None), ("no_misalignment", 0.0,
                                             ("affine", alphas["affine"][-1])
                                             if alphas["affine"] else ("baseline_cbct", None))]
    for m in ("affine", "elastic"):
        prev = ("baseline_cbct", None)
        for a in alphas[m]:
            order.append((m, a, prev))
            prev = (m, a)

    rows = []
    for mode, a, prev in order:
        src = baseline if mode == "baseline_cbct" else results
        if not any(r["mode"] == mode for r in src.records):
            continue
        for t in tasks:
            for n in nps:
                v = src.mean(t, mode, a, n)
                base = baseline.mean(t, "baseline_cbct", None, n)
                delta = round(v - base, 9)
                row = {"row": _row_label(mode, a), "task": t, "alpha_np": n, "dice": v,
                       "delta_base": delta, "improved": delta > 0, "degraded": delta < 0,
                       "bold": abs(delta) >= BOLD_DELTA, "prev_sign": "", "prev_marked": False}
                if prev is not None:
                    pm, pa = prev
                    pv = (baseline if pm == "baseline_cbct" else results).mean(t, pm, pa, n)
                    dp = round(v - pv, 9)
                    row["prev_sign"] = _sign(dp)
                    row["prev_marked"] = abs(dp) >= BOLD_DELTA
                rows.append(row)
    return Table(rows)


def reference_table():
    """Reference mean Dice values of the full 5 x 5 grid, in results.csv layout."""
    text = resources.files("cbfuse").joinpath("data/reference_grid.csv").read_text()
    return GridResult.from_csv(text)


def grid_config_dump(grid):
    d = asdict(grid)
    return json.dumps(d, indent=2)
