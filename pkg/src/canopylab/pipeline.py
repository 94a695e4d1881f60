"""Multi-epoch batch runs driven by an INI manifest.

Example manifest (relative paths resolve against the manifest's directory)::

    [run]
    output_dir = out
    seed = 42
    threads = 0

    [rasterize]
    input = cloud.las          ; or: stats = stats.cnpy (skip rasterizing)
    cell_size = 0.5
    radius = 0.75

    [label]
    rule = num_returns.max >= 2 && elevation.std >= 1.0
    ; rule_file = rules.txt

    [train]
    image = naip2017.cnpy
    year = 2017
    C = 10
    gamma = 1
    samples = 5000

    [predict]                  ; year = image, strictly increasing years
    2011 = naip2011.cnpy
    2013 = naip2013.cnpy

    [truth]                    ; optional; .mask, or .asc land cover
    2013 = truth2013.mask
    truth_class = 1

    [change]
    overlay_alpha = 0.5
    aoi.shore = 0,0,64,64      ; col0,row0,width,height in image cells

Stages run in order rasterize, label, train, predict, evaluate, change,
overlay.  Everything lands in ``output_dir`` together with ``index.json``;
a failing stage leaves ``FAILED`` (stage name and error) next to whatever
was already written.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .change import Window, change, overlay_png
from .errors import CanopyError, InputError, ParameterError, StageError, UndefinedBaselineError
from .metrics import evaluate, report_dict
from .pointcloud import read_point_cloud
from .raster import (
    BinaryMask,
    export_png,
    load_container,
    load_mask,
    read_categorical_ascii_grid,
    resample_nearest,
    save_container,
    save_mask,
)
from .rules import DEFAULT_TREE_RULE, evaluate_rule, parse_rule, read_rule_file
from .stats import DEFAULT_CELL_SIZE, DEFAULT_RADIUS, StatsStack, grid_for_cloud, rasterize_stats, stack_to_pseudo_rgb
from .svm import TrainConfig, extract_training_samples, predict_mask, train_svm, write_model

logger = logging.getLogger(__name__)

STAGES = ("rasterize", "label", "train", "predict", "evaluate", "change", "overlay")
FAILURE_MARKER = "FAILED"
INDEX_FILE = "index.json"


@dataclass
class RunManifest:
    output_dir: Path
    train_image: Path
    train_year: int
    cloud: Path | None = None
    stats: Path | None = None
    cell_size: float = DEFAULT_CELL_SIZE
    radius: float = DEFAULT_RADIUS
    rule: str = DEFAULT_TREE_RULE
    train: TrainConfig = field(default_factory=TrainConfig)
    inference: list[tuple[int, Path]] = field(default_factory=list)
    truths: dict[int, Path] = field(default_factory=dict)
    truth_class: int = 1
    aois: dict[str, Window] = field(default_factory=dict)
    overlay_alpha: float = 0.5
    seed: int = 0
    threads: int = 0

    def validate(self) -> None:
        if (self.cloud is None) == (self.stats is None):
            raise ParameterError("manifest needs exactly one of [rasterize] input or stats")
        years = [y for y, _ in self.inference]
        if any(b <= a for a, b in zip(years, years[1:])):
            raise ParameterError(f"inference years must be strictly increasing: {years}")
        for path in self.input_files():
            if not path.is_file():
                raise InputError(f"manifest references missing file {path}")
        parse_rule(self.rule)
        if not 0 <= self.overlay_alpha <= 1:
            raise ParameterError("overlay_alpha must lie in [0, 1]")

    def input_files(self) -> list[Path]:
        files = [p for p in (self.cloud, self.stats, self.train_image) if p is not None]
        files += [p for _, p in self.inference]
        files += list(self.truths.values())
        return files


def load_manifest(path: str | Path) -> RunManifest:
    path = Path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";",), interpolation=None)
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise InputError(f"{path}: {exc}") from None
    base = path.parent

    def p(value: str) -> Path:
        q = Path(value)
        return q if q.is_absolute() else base / q

    def section(name):
        return cp[name] if cp.has_section(name) else {}

    try:
        run, ras, lab, tr = section("run"), section("rasterize"), section("label"), section("train")
        if "image" not in tr or "year" not in tr:
            raise ParameterError("[train] needs image and year")
        seed = int(run.get("seed", 0))
        rule = lab.get("rule", DEFAULT_TREE_RULE)
        if "rule_file" in lab:
            rule = read_rule_file(p(lab["rule_file"]))
        cfg = TrainConfig(
            C=float(tr.get("C", 10.0)),
            gamma=float(tr.get("gamma", 1.0)),
            tol=float(tr.get("tol", 1e-3)),
            max_passes=int(tr.get("max_passes", 5)),
            sample_count=int(tr.get("samples", 5000)),
            seed=int(tr.get("seed", seed)),
        )
        inference = [(int(k), p(v)) for k, v in section("predict").items()]
        truth_sec = dict(section("truth"))
        truth_class = int(truth_sec.pop("truth_class", 1))
        truths = {int(k): p(v) for k, v in truth_sec.items()}
        ch = dict(section("change"))
        alpha = float(ch.pop("overlay_alpha", 0.5))
        aois = {}
        for k, v in ch.items():
            if not k.startswith("aoi."):
                raise ParameterError(f"unknown [change] key {k!r}")
            aois[k[4:]] = Window.parse(v)
        manifest = RunManifest(
            output_dir=p(run.get("output_dir", "out")),
            train_image=p(tr["image"]),
            train_year=int(tr["year"]),
            cloud=p(ras["input"]) if "input" in ras else None,
            stats=p(ras["stats"]) if "stats" in ras else None,
            cell_size=float(ras.get("cell_size", DEFAULT_CELL_SIZE)),
            radius=float(ras.get("radius", DEFAULT_RADIUS)),
            rule=rule,
            train=cfg,
            inference=inference,
            truths=truths,
            truth_class=truth_class,
            aois=aois,
            overlay_alpha=alpha,
            seed=seed,
            threads=int(run.get("threads", 0)),
        )
    except ValueError as exc:
        if isinstance(exc, CanopyError):
            raise
        raise ParameterError(f"{path}: {exc}") from None
    return manifest


def load_truth(path: Path, truth_class: int = 1) -> BinaryMask:
    """Exact labels: a mask container, or an ASCII land-cover grid."""
    if path.suffix.lower() == ".asc":
        return read_categorical_ascii_grid(path.read_text()).to_mask(truth_class)
    return load_mask(path)


def _rgb_base(image):
    names = ("red", "green", "blue")
    return image.select(names) if all(n in image.names for n in names) else image


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


class _Run:
    def __init__(self, manifest: RunManifest):
        self.m = manifest
        self.out = manifest.output_dir
        self.artifacts: dict[str, str] = {}
        self.stages: list[str] = []

    def record(self, key: str, path: Path) -> Path:
        self.artifacts[key] = path.name
        return path

    def stage(self, name, fn, *args):
        logger.info("stage %s", name)
        try:
            result = fn(*args)
        except Exception as exc:
            (self.out / FAILURE_MARKER).write_text(f"stage: {name}\nerror: {exc}\n")
            raise StageError(name, exc) from exc
        self.stages.append(name)
        return result

    # stages -----------------------------------------------------------------

    def rasterize(self) -> StatsStack:
        m = self.m
        if m.stats is not None:
            return StatsStack(load_container(m.stats))
        cloud = read_point_cloud(m.cloud)
        stack = rasterize_stats(cloud, grid_for_cloud(cloud, m.cell_size), m.radius, m.threads)
        save_container(self.record("stats", self.out / "stats.cnpy"), stack.multiband)
        self.record("stats_png", self.out / "stats_pseudo_rgb.png").write_bytes(
            export_png(stack_to_pseudo_rgb(stack))
        )
        return stack

    def label(self, stack: StatsStack) -> BinaryMask:
        noisy = evaluate_rule(parse_rule(self.m.rule), stack)
        save_mask(self.record("noisy", self.out / "noisy.mask"), noisy)
        return noisy

    def train(self, noisy: BinaryMask):
        m = self.m
        image = load_container(m.train_image)
        labels = resample_nearest(noisy, image.spec)
        save_mask(self.record("noisy_on_image", self.out / "noisy_on_image.mask"), labels)
        samples = extract_training_samples(image, labels, m.train.sample_count, m.train.seed)
        model = train_svm(samples, m.train)
        write_model(self.record("model", self.out / "model.svm"), model)
        return model, labels

    def predict(self, model) -> dict[int, tuple]:
        preds = {}
        for year, path in self.m.inference:
            image = load_container(path)
            pred = predict_mask(model, image, self.m.threads)
            save_mask(self.record(f"pred_{year}", self.out / f"pred_{year}.mask"), pred)
            preds[year] = (pred, image)
        return preds

    def evaluate(self, preds, noisy_on_image) -> dict[int, dict]:
        reports = {}
        for year, path in sorted(self.m.truths.items()):
            truth = load_truth(path, self.m.truth_class)
            entry = {}
            if year in preds:
                pred = preds[year][0]
                counts, rep = evaluate(pred, resample_nearest(truth, pred.spec))
                entry["model"] = report_dict(counts, rep)
            if year == self.m.train_year:
                counts, rep = evaluate(noisy_on_image, resample_nearest(truth, noisy_on_image.spec))
                entry["noisy_labels"] = report_dict(counts, rep)
            if not entry:
                continue
            _write_json(self.record(f"eval_{year}", self.out / f"eval_{year}.json"), entry)
            reports[year] = entry
        return reports

    def change(self, preds) -> list[tuple[int, int, BinaryMask]]:
        years = [y for y, _ in self.m.inference]
        losses = []
        for y1, y2 in zip(years, years[1:]):
            before, after = preds[y1][0], preds[y2][0]
            regions = {"full": None, **self.m.aois}
            doc = {"before_year": y1, "after_year": y2, "regions": {}}
            full_loss = None
            for name, aoi in regions.items():
                try:
                    rep = change(before, after, aoi)
                    doc["regions"][name] = rep.to_dict()
                    if aoi is None:
                        full_loss = rep.loss_mask
                except UndefinedBaselineError as exc:
                    doc["regions"][name] = {
                        "aoi": None if aoi is None else aoi.as_text(),
                        "relative_change_pct": None,
                        "error": str(exc),
                    }
            if full_loss is None:
                both = before.valid & after.valid
                full_loss = BinaryMask(before.spec, before.bits & ~after.bits & both, both)
            _write_json(self.record(f"change_{y1}_{y2}", self.out / f"change_{y1}_{y2}.json"), doc)
            save_mask(self.record(f"loss_{y1}_{y2}", self.out / f"loss_{y1}_{y2}.mask"), full_loss)
            losses.append((y1, y2, full_loss))
        return losses

    def overlay(self, preds, losses) -> None:
        for y1, y2, loss in losses:
            image = preds[y2][1]
            png = overlay_png(_rgb_base(image), loss, self.m.overlay_alpha)
            self.record(f"overlay_{y1}_{y2}", self.out / f"overlay_{y1}_{y2}.png").write_bytes(png)

    def index(self) -> None:
        doc = {
            "stages": self.stages,
            "artifacts": {
                k: {"file": name, "sha256": _sha256(self.out / name)}
                for k, name in sorted(self.artifacts.items())
            },
        }
        _write_json(self.out / INDEX_FILE, doc)


def run_pipeline(manifest: RunManifest) -> dict:
    """Execute every applicable stage; return the index document."""
    manifest.validate()
    out = manifest.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / FAILURE_MARKER).unlink(missing_ok=True)
    run = _Run(manifest)
    stack = run.stage("rasterize", run.rasterize)
    noisy = run.stage("label", run.label, stack)
    model, noisy_on_image = run.stage("train", run.train, noisy)
    preds = run.stage("predict", run.predict, model) if manifest.inference else {}
    if manifest.truths:
        run.stage("evaluate", run.evaluate, preds, noisy_on_image)
    if len(preds) >= 2:
        losses = run.stage("change", run.change, preds)
        run.stage("overlay", run.overlay, preds, losses)
    run.index()
    return json.loads((out / INDEX_FILE).read_text())
