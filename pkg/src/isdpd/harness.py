"""Scenario configuration, Monte-Carlo experiments and result emission.

A scenario is one JSON document (``"schema": "isdpd.scenario"``, ``"version": 1``)
describing the receivers, emitters, radio, search box, estimator knobs, SNR
list and trial budget.  Every number an experiment emits is a function of the
document and its master seed: trial ``t`` draws its waveforms, attenuations,
noise and estimator uniforms from ``seed_streams(seed, t)``, and the same
trial seeds are reused across every sweep value so the cells are paired.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import CoincidentGeometry, IsdpdError, SchemaError, ValidationError
from .estimator import MEAN_MODES, EstimatorKnobs, estimate_positions, is_dpd_run
from .likelihood import DeltaSetup
from .oracle import DEFAULT_BUDGET, exhaustive_ml
from .sampler import SearchBox
from .scene import RadioParams, ReceiverGeometry
from .synth import Scene, generate_attenuations, generate_waveforms, seed_streams, snr_to_sigma2, synthesize

log = logging.getLogger(__name__)

SCHEMA = "isdpd.scenario"
SCHEMA_VERSION = 1
SWEEP_PARAMETERS = ("snr", "rho0", "rho1", "R", "grid_step", "mean_mode")

RESULT_COLUMNS = ("sweep", "value", "snr_db", "emitter", "rmse_m", "trials", "excluded", "seed", "runtime_s")
TRIAL_COLUMNS = ("sweep", "value", "snr_db", "trial", "emitter", "x", "y", "error_m", "runtime_s")
ORACLE_COLUMNS = ("trial", "agree", "oracle_s", "is_dpd_s", "speedup", "max_cell_offset")


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario with the derived geometry materialized."""

    name: str
    radio: RadioParams
    geometry: ReceiverGeometry
    emitters: np.ndarray  # (Q, 2)
    box: SearchBox
    knobs: EstimatorKnobs
    snr_db: tuple
    trials: int
    seed: int
    attenuation_mean: float = 1.0
    attenuation_std: float = 0.1
    sweeps: tuple = ()
    delta: dict | None = None
    document: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_emitters(self) -> int:
        return self.emitters.shape[0]

    def scene(self) -> Scene:
        return Scene(self.geometry, self.radio, self.emitters)

    def delta_setup(self) -> DeltaSetup:
        """Single-receiver setup for the diagonal-dominance study."""
        d = self.delta or {}
        rx = self.document["receivers"][0]
        return DeltaSetup(
            carrier_frequency=self.radio.carrier_frequency,
            propagation_speed=self.radio.propagation_speed,
            observation_time=self.radio.observation_time,
            samples_per_interval=self.radio.samples_per_interval,
            speed=float(rx["speed"]),
            num_elements=int(rx["num_elements"]),
            half_extent=float(d.get("half_extent", 100e3)),
        )

    def to_dict(self) -> dict:
        return copy.deepcopy(self.document)


def _require(doc: dict, key: str, where: str):
    if not isinstance(doc, dict):
        raise ValidationError(f"{where}: expected an object")
    if key not in doc:
        raise ValidationError(f"{where}.{key}: missing" if where else f"{key}: missing")
    return doc[key]


def _number(value, where: str, *, positive: bool = False, integer: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{where}: expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ValidationError(f"{where}: must be finite")
    if integer and int(value) != value:
        raise ValidationError(f"{where}: expected an integer")
    if positive and not value > 0:
        raise ValidationError(f"{where}: must be > 0")
    return int(value) if integer else float(value)


def _point(value, where: str) -> np.ndarray:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ValidationError(f"{where}: expected [x, y]")
    return np.array([_number(v, f"{where}[{i}]") for i, v in enumerate(value)])


def _parse_radio(doc: dict) -> RadioParams:
    r = _require(doc, "radio", "")
    return RadioParams(
        _number(_require(r, "carrier_frequency", "radio"), "radio.carrier_frequency", positive=True),
        _number(_require(r, "propagation_speed", "radio"), "radio.propagation_speed", positive=True),
        _number(_require(r, "observation_time", "radio"), "radio.observation_time", positive=True),
        _number(_require(r, "samples_per_interval", "radio"), "radio.samples_per_interval", positive=True, integer=True),
    )


def _parse_receivers(doc: dict, radio: RadioParams) -> ReceiverGeometry:
    rx = _require(doc, "receivers", "")
    if not isinstance(rx, list) or not rx:
        raise ValidationError("receivers: expected a non-empty list")
    tracks = []
    for l, t in enumerate(rx):
        where = f"receivers[{l}]"
        track = {
            "start": _point(_require(t, "start", where), f"{where}.start"),
            "end": _point(_require(t, "end", where), f"{where}.end"),
            "speed": _number(_require(t, "speed", where), f"{where}.speed"),
            "num_elements": _number(_require(t, "num_elements", where), f"{where}.num_elements", positive=True, integer=True),
            "num_intervals": _number(_require(t, "num_intervals", where), f"{where}.num_intervals", positive=True, integer=True),
        }
        if not 0 <= track["speed"] < radio.propagation_speed:
            raise ValidationError(f"{where}.speed: must lie in [0, c)")
        if "heading" in t:
            track["heading"] = _point(t["heading"], f"{where}.heading")
        if "element_spacing" in t:
            track["element_spacing"] = _number(t["element_spacing"], f"{where}.element_spacing", positive=True)
        tracks.append(track)
    for key in ("num_elements", "num_intervals"):
        values = {t[key] for t in tracks}
        if len(values) > 1:
            raise ValidationError(f"receivers[*].{key}: must agree across receivers, got {sorted(values)}")
    try:
        return ReceiverGeometry.from_tracks(tracks, radio)
    except (ValueError, ArithmeticError) as exc:
        raise ValidationError(f"receivers: {exc}") from None


def _parse_box(doc: dict) -> SearchBox:
    b = _require(doc, "search_box", "")
    lim = {k: _number(_require(b, k, "search_box"), f"search_box.{k}") for k in ("x_min", "x_max", "y_min", "y_max")}
    try:
        if "step" in b:
            step = b["step"]
            if isinstance(step, list):
                sx, sy = (_number(s, "search_box.step", positive=True) for s in step)
            else:
                sx = sy = _number(step, "search_box.step", positive=True)
            return SearchBox.from_step(lim["x_min"], lim["x_max"], lim["y_min"], lim["y_max"], sx, sy)
        nx = _number(_require(b, "nx", "search_box"), "search_box.nx", integer=True)
        ny = _number(_require(b, "ny", "search_box"), "search_box.ny", integer=True)
        return SearchBox(lim["x_min"], lim["x_max"], lim["y_min"], lim["y_max"], nx, ny)
    except ValueError as exc:
        if str(exc).startswith("search_box"):
            raise
        raise ValidationError(f"search_box: {exc}") from None


def _parse_sweeps(exp: dict) -> tuple:
    out = []
    for i, s in enumerate(exp.get("sweeps", [])):
        where = f"experiment.sweeps[{i}]"
        param = _require(s, "parameter", where)
        if param not in SWEEP_PARAMETERS:
            raise ValidationError(f"{where}.parameter: must be one of {SWEEP_PARAMETERS}")
        values = _require(s, "values", where)
        if not isinstance(values, list) or not values:
            raise ValidationError(f"{where}.values: expected a non-empty list")
        out.append((param, tuple(values)))
    return tuple(out)


def parse_scenario(doc: dict) -> ScenarioConfig:
    """Validate a scenario document and materialize its geometry.

    Raises
    ------
    SchemaError
        Wrong ``schema`` tag or unsupported ``version``.
    ValidationError
        A field is missing or inconsistent; the message names the field.
    """
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA:
        raise SchemaError(f"not an {SCHEMA} document")
    if doc.get("version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported scenario version {doc.get('version')!r}")

    radio = _parse_radio(doc)
    geometry = _parse_receivers(doc, radio)
    em = _require(doc, "emitters", "")
    if not isinstance(em, list) or not em:
        raise ValidationError("emitters: expected a non-empty list of [x, y]")
    emitters = np.array([_point(p, f"emitters[{q}]") for q, p in enumerate(em)])
    box = _parse_box(doc)
    for q, p in enumerate(emitters):
        if not box.contains(p[None])[0]:
            raise ValidationError(f"emitters[{q}]: {p.tolist()} lies outside the search box")

    est = doc.get("estimator", {})
    try:
        knobs = EstimatorKnobs(**{k: est[k] for k in ("rho0", "rho1", "R", "mean_mode") if k in est})
    except ValidationError as exc:
        raise ValidationError(f"estimator: {exc}") from None

    snr = _require(_require(doc, "noise", ""), "snr_db", "noise")
    snr = [snr] if isinstance(snr, (int, float)) else snr
    if not isinstance(snr, list) or not snr:
        raise ValidationError("noise.snr_db: expected a number or a non-empty list")
    snr = tuple(float(_number(s, f"noise.snr_db[{i}]")) if s != "inf" else math.inf for i, s in enumerate(snr))

    exp = doc.get("experiment", {})
    trials = _number(exp.get("trials", 1), "experiment.trials", positive=True, integer=True)
    seed = _number(exp.get("seed", 0), "experiment.seed", integer=True)
    if seed < 0:
        raise ValidationError("experiment.seed: must be >= 0")
    att = doc.get("attenuation", {})
    return ScenarioConfig(
        name=str(doc.get("name", "scenario")),
        radio=radio,
        geometry=geometry,
        emitters=emitters,
        box=box,
        knobs=knobs,
        snr_db=snr,
        trials=trials,
        seed=seed,
        attenuation_mean=_number(att.get("mean", 1.0), "attenuation.mean"),
        attenuation_std=_number(att.get("std", 0.1), "attenuation.std"),
        sweeps=_parse_sweeps(exp),
        delta=doc.get("delta"),
        document=copy.deepcopy(doc),
    )


def preset_names() -> list:
    return sorted(p.name[:-5] for p in resources.files("isdpd.presets").iterdir() if p.name.endswith(".json"))


def load_preset_document(name: str) -> dict:
    res = resources.files("isdpd.presets").joinpath(f"{name}.json")
    if not res.is_file():
        raise FileNotFoundError(f"no preset named {name!r}; available: {', '.join(preset_names())}")
    return json.loads(res.read_text())


def load_scenario(path) -> ScenarioConfig:
    """Read a scenario from a JSON file, or a bundled preset by name."""
    p = Path(path)
    if p.is_file():
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{p}: invalid JSON ({exc})") from None
    else:
        doc = load_preset_document(str(path))
    return parse_scenario(doc)


def with_overrides(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    """Re-validate ``cfg`` after patching top-level blocks of its document.

    Keyword names follow the document layout with dots replaced by
    underscores: ``seed``, ``trials``, ``snr_db``, ``emitters``, ``step``,
    ``nx``/``ny`` and any estimator knob.
    """
    doc = cfg.to_dict()
    exp = doc.setdefault("experiment", {})
    est = doc.setdefault("estimator", {})
    for key, value in changes.items():
        if value is None:
            continue
        if key in ("seed", "trials"):
            exp[key] = int(value)
        elif key == "snr_db":
            vals = list(value) if isinstance(value, (list, tuple)) else [value]
            doc.setdefault("noise", {})["snr_db"] = ["inf" if v == math.inf else v for v in vals]
        elif key == "emitters":
            doc["emitters"] = np.asarray(value, dtype=float).tolist()
        elif key == "step":
            doc["search_box"] = {k: v for k, v in doc["search_box"].items() if k not in ("nx", "ny")}
            doc["search_box"]["step"] = value
        elif key in ("nx", "ny"):
            doc["search_box"].pop("step", None)
            doc["search_box"][key] = int(value)
        elif key in ("rho0", "rho1", "R", "mean_mode"):
            est[key] = value
        else:
            raise TypeError(f"unknown override {key!r}")
    return parse_scenario(doc)


# -- trials ------------------------------------------------------------------


def make_observations(cfg: ScenarioConfig, snr_db: float, trial: int, seed: int | None = None):
    """Fresh waveforms, attenuations and noise for one trial.

    Returns ``(obs, streams)``; ``streams["estimator"]`` seeds the estimator.
    """
    st = seed_streams(cfg.seed if seed is None else seed, trial)
    K, L = cfg.geometry.num_intervals, cfg.geometry.num_receivers
    w = generate_waveforms(st["waveforms"], cfg.num_emitters, K, cfg.radio.samples_per_interval)
    b = generate_attenuations(st["attenuations"], cfg.num_emitters, K, L, cfg.attenuation_mean, cfg.attenuation_std)
    obs = synthesize(cfg.scene(), w, b, st["noise"], snr_to_sigma2(snr_db, w))
    return obs, st


def rmse(estimates, truth) -> np.ndarray:
    """Root mean squared Euclidean error per emitter.

    Parameters
    ----------
    estimates : array_like, shape (T, Q, 2)
    truth : array_like, shape (Q, 2)
    """
    est = np.asarray(estimates, dtype=float)
    if est.ndim == 2:
        est = est[None]
    if est.shape[0] < 1:
        raise ValueError("rmse needs at least one trial")
    err2 = np.sum((est - np.asarray(truth, dtype=float)[None]) ** 2, axis=-1)
    return np.sqrt(err2.mean(axis=0))


@dataclass(frozen=True)
class _TrialTask:
    cfg: ScenarioConfig
    snr_db: float
    trial: int
    knobs: EstimatorKnobs
    box: SearchBox
    modes: tuple


def _run_trial(task: _TrialTask) -> dict:
    """One seeded trial; errors come back as data instead of propagating."""
    t0 = time.perf_counter()
    try:
        obs, st = make_observations(task.cfg, task.snr_db, task.trial)
        run = is_dpd_run(obs, task.box, task.knobs, st["estimator"])
        est = {m: estimate_positions(run.realizations, run.weights, task.box, m).positions for m in task.modes}
        return {"trial": task.trial, "estimates": est, "runtime": time.perf_counter() - t0, "error": None}
    except (IsdpdError, CoincidentGeometry) as exc:
        return {"trial": task.trial, "estimates": None, "runtime": time.perf_counter() - t0,
                "error": f"{type(exc).__name__}: {exc}"}


def _map(tasks, workers: int):
    if workers <= 1:
        return [_run_trial(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_trial, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


@dataclass
class ExperimentResult:
    """Aggregated RMSE rows plus every per-trial estimate behind them."""

    name: str
    sweep: str
    rows: list
    trials: list
    errors: list

    @property
    def excluded(self) -> int:
        return len(self.errors)

    def rmse_table(self) -> dict:
        """``{(snr_db, value): ndarray(Q)}`` of RMSE."""
        table = {}
        for r in self.rows:
            table.setdefault((r["snr_db"], r["value"]), {})[r["emitter"]] = r["rmse_m"]
        return {k: np.array([v[q] for q in sorted(v)]) for k, v in table.items()}

    def to_dict(self) -> dict:
        return {"name": self.name, "sweep": self.sweep, "rows": self.rows, "trials": self.trials, "errors": self.errors}

    def write(self, out_dir, stem: str = "sweep") -> dict:
        """Write ``<stem>.csv`` (RMSE rows), ``<stem>_trials.csv`` and ``<stem>.json``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"csv": out / f"{stem}.csv", "trials_csv": out / f"{stem}_trials.csv", "json": out / f"{stem}.json"}
        write_rows(paths["csv"], RESULT_COLUMNS, self.rows)
        write_rows(paths["trials_csv"], TRIAL_COLUMNS, self.trials)
        paths["json"].write_text(json.dumps(self.to_dict(), indent=1, default=_json_default))
        return paths


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def read_rows(path) -> list:
    """Parse a CSV written by :func:`write_rows`; numeric fields come back as numbers."""
    def conv(v):
        for f in (int, float):
            try:
                return f(v)
            except ValueError:
                pass
        return v

    with open(path, newline="") as fh:
        return [{k: conv(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _cell_setup(cfg: ScenarioConfig, sweep: str, value):
    knobs, box, snr = cfg.knobs, cfg.box, None
    if sweep == "snr":
        snr = float(value)
    elif sweep in ("rho0", "rho1"):
        knobs = knobs.replace(**{sweep: float(value)})
    elif sweep == "R":
        knobs = knobs.replace(R=int(value))
    elif sweep == "grid_step":
        b = cfg.box
        box = SearchBox.from_step(b.x_min, b.x_max, b.y_min, b.y_max, float(value))
    elif sweep == "mean_mode":
        if value not in MEAN_MODES:
            raise ValidationError(f"mean_mode sweep value {value!r} not in {MEAN_MODES}")
    else:
        raise ValidationError(f"sweep must be one of {SWEEP_PARAMETERS}")
    return knobs, box, snr


def run_experiment(cfg: ScenarioConfig, sweep: str, values=None, trials: int | None = None,
                   snr_db=None, workers: int = 1) -> ExperimentResult:
    """Monte-Carlo RMSE for every sweep value (and every SNR unless sweeping SNR).

    Trial ``t`` of every cell reuses ``seed_streams(cfg.seed, t)``.  A
    ``mean_mode`` sweep runs the estimator once per trial and applies both
    means to the same weighted draws.  Failed trials are kept in
    ``errors``, excluded from the RMSE and counted in each row.
    """
    if sweep not in SWEEP_PARAMETERS:
        raise ValidationError(f"sweep must be one of {SWEEP_PARAMETERS}")
    if values is None:
        values = dict(cfg.sweeps).get(sweep)
        if values is None:
            values = cfg.snr_db if sweep == "snr" else None
        if values is None:
            raise ValidationError(f"no values given for the {sweep} sweep and none in the config")
    values = list(values)
    n = cfg.trials if trials is None else int(trials)
    snrs = list(cfg.snr_db if snr_db is None else snr_db)
    if sweep == "snr":
        snrs = [None]

    cells = []  # (snr, values covered, knobs, box, modes)
    if sweep == "mean_mode":
        for v in values:
            _cell_setup(cfg, sweep, v)
        cells = [(s, values, cfg.knobs, cfg.box, tuple(values)) for s in snrs]
    else:
        for s in snrs:
            for v in values:
                knobs, box, snr = _cell_setup(cfg, sweep, v)
                cells.append((s if snr is None else snr, [v], knobs, box, (knobs.mean_mode,)))

    rows, per_trial, errors = [], [], []
    for snr, cell_values, knobs, box, modes in cells:
        tasks = [_TrialTask(cfg, snr, t, knobs, box, modes) for t in range(n)]
        t0 = time.perf_counter()
        results = sorted(_map(tasks, workers), key=lambda r: r["trial"])
        elapsed = time.perf_counter() - t0
        ok = [r for r in results if r["error"] is None]
        for r in results:
            if r["error"] is not None:
                errors.append({"snr_db": snr, "values": list(cell_values), "trial": r["trial"], "error": r["error"]})
        if len(ok) < len(results):
            log.warning("%d of %d trials excluded at snr=%s %s=%s", len(results) - len(ok), len(results),
                        snr, sweep, cell_values)
        for v in cell_values:
            mode = v if sweep == "mean_mode" else modes[0]
            if ok:
                est = np.stack([r["estimates"][mode] for r in ok])
                err = rmse(est, cfg.emitters)
            else:
                est, err = None, np.full(cfg.num_emitters, np.nan)
            for q in range(cfg.num_emitters):
                rows.append({
                    "sweep": sweep, "value": v, "snr_db": snr, "emitter": q, "rmse_m": float(err[q]),
                    "trials": len(ok), "excluded": len(results) - len(ok), "seed": cfg.seed, "runtime_s": elapsed,
                })
            for r in ok:
                p = r["estimates"][mode]
                for q in range(cfg.num_emitters):
                    per_trial.append({
                        "sweep": sweep, "value": v, "snr_db": snr, "trial": r["trial"], "emitter": q,
                        "x": float(p[q, 0]), "y": float(p[q, 1]),
                        "error_m": float(np.linalg.norm(p[q] - cfg.emitters[q])), "runtime_s": r["runtime"],
                    })
    return ExperimentResult(cfg.name, sweep, rows, per_trial, errors)


# -- oracle comparison -------------------------------------------------------


@dataclass
class OracleAgreement:
    """Per-trial IS-DPD vs exhaustive-ML agreement and timing."""

    snr_db: float
    box: dict
    trials: list

    @property
    def agreement(self) -> float:
        return float(np.mean([t["agree"] for t in self.trials]))

    @property
    def speedup(self) -> float:
        """Total exhaustive-search time over total IS-DPD time."""
        return float(sum(t["oracle_s"] for t in self.trials) / sum(t["is_dpd_s"] for t in self.trials))

    @property
    def median_speedup(self) -> float:
        return float(np.median([t["speedup"] for t in self.trials]))

    def to_dict(self) -> dict:
        return {
            "snr_db": self.snr_db, "box": self.box, "agreement": self.agreement,
            "speedup_total": self.speedup, "speedup_median": self.median_speedup,
            "reference_speedup_100x100": 9091, "trials": self.trials,
        }

    def write(self, out_dir, stem: str = "compare_oracle") -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"csv": out / f"{stem}.csv", "json": out / f"{stem}.json"}
        write_rows(paths["csv"], ORACLE_COLUMNS, self.trials)
        paths["json"].write_text(json.dumps(self.to_dict(), indent=1, default=_json_default))
        return paths


def compare_oracle(cfg: ScenarioConfig, trials: int | None = None, snr_db: float | None = None,
                   budget: int = DEFAULT_BUDGET) -> OracleAgreement:
    """IS-DPD against the exhaustive grid argmax on the config's box.

    A trial agrees when every emitter estimate is within one grid step of
    the oracle node on both axes.

    Raises
    ------
    BudgetExceeded
        If the joint grid exceeds ``budget`` evaluations.
    """
    from .estimator import run_is_dpd

    n = cfg.trials if trials is None else int(trials)
    snr = cfg.snr_db[0] if snr_db is None else float(snr_db)
    box = cfg.box
    step = np.array([box.step_x, box.step_y])
    rows = []
    for t in range(n):
        obs, st = make_observations(cfg, snr, t)
        orc = exhaustive_ml(obs, box, budget=budget)
        t0 = time.perf_counter()
        est = run_is_dpd(obs, box, cfg.knobs, st["estimator"])
        t_is = time.perf_counter() - t0
        offset = np.abs(est.positions - orc.argmax) / step
        rows.append({
            "trial": t, "agree": bool(np.all(offset <= 1.0 + 1e-9)), "oracle_s": orc.elapsed, "is_dpd_s": t_is,
            "speedup": orc.elapsed / t_is, "max_cell_offset": float(offset.max()),
        })
    return OracleAgreement(snr, box.to_dict(), rows)
