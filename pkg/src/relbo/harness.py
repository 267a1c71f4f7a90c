"""The outer optimization loop: initial designs, strategy dispatch,
recommendation of the most reliable design, ground-truth scoring, repeat
management with per-repeat seed discipline, and CSV trace persistence.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .acquisition import (
    AcquisitionSpec,
    IterationStreams,
    egra_next,
    ei_next,
    hc_next,
    kg_discrete_next,
    kg_oneshot_next,
    sobol_next,
    ts_mr_next,
)
from .numerics import SobolStream
from .optimizers import BoundedObjective, RestartPlan, boltzmann_restarts, multistart_qn
from .problems import Problem, get_problem
from .reliability import (
    SmoothingConfig,
    draw_is_sample,
    estimate_pn,
    estimate_pn_batch,
    evaluate_true_failure,
    smooth_feasibility,
)
from .surrogate import fit_map

log = logging.getLogger(__name__)

_FLOAT_FMT = "%.17g"


@dataclass
class ExperimentConfig:
    problem: str
    acquisition: AcquisitionSpec
    n_tot: int
    repeats: int = 1
    base_seed: int = 0
    mode: str = "extreme"
    out_dir: Path = Path("runs")
    rec_restarts: int = 10
    rec_n_u_coarse: int = 1024
    rec_n_u_fine: int = 131072
    rec_stride: int = 1
    score_n_u: int = 2**20
    record_timing: bool = True

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        prob = get_problem(self.problem, self.mode)
        if prob.n_0 > self.n_tot:
            raise ValueError(
                f"initial design size {prob.n_0} exceeds budget {self.n_tot}"
            )

    def to_dict(self) -> dict:
        acq = {k: v for k, v in vars(self.acquisition).items()}
        return {
            "problem": self.problem,
            "mode": self.mode,
            "acquisition": acq,
            "n_tot": self.n_tot,
            "repeats": self.repeats,
            "base_seed": self.base_seed,
            "rec_restarts": self.rec_restarts,
            "rec_n_u_coarse": self.rec_n_u_coarse,
            "rec_n_u_fine": self.rec_n_u_fine,
            "rec_stride": self.rec_stride,
            "score_n_u": self.score_n_u,
            "record_timing": self.record_timing,
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_CONFIG_SECTIONS = {
    "problem": {"name", "mode"},
    "acquisition": {
        "kind",
        "n_u",
        "n_v",
        "n_x",
        "tau",
        "rho",
        "kappa",
        "eps_s",
        "delta_band",
        "use_log",
        "n_raw",
        "n_restarts",
    },
    "budget": {"n_tot", "repeats", "base_seed"},
    "recommendation": {
        "restarts",
        "n_u_coarse",
        "n_u_fine",
        "stride",
        "score_n_u",
        "record_timing",
    },
}


def load_config(path, out_dir=None) -> ExperimentConfig:
    """Parse an INI experiment config; unknown sections or keys are errors."""
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    for section in parser.sections():
        if section not in _CONFIG_SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        unknown = set(parser[section]) - _CONFIG_SECTIONS[section]
        if unknown:
            raise ValueError(
                f"unknown keys in [{section}]: {', '.join(sorted(unknown))}"
            )
    prob = parser["problem"]
    acq = parser["acquisition"]
    budget = parser["budget"]
    rec = parser["recommendation"] if parser.has_section("recommendation") else {}

    mode = prob.get("mode", "extreme")
    spec_kwargs = {"kind": acq["kind"]}
    for key, cast in (
        ("n_u", int),
        ("n_v", int),
        ("n_x", int),
        ("tau", float),
        ("rho", float),
        ("kappa", float),
        ("eps_s", float),
        ("delta_band", float),
        ("n_raw", int),
        ("n_restarts", int),
    ):
        if key in acq:
            spec_kwargs[key] = cast(acq[key])
    if "use_log" in acq:
        spec_kwargs["use_log"] = acq.getboolean("use_log")
    else:
        spec_kwargs["use_log"] = mode == "extreme"
    if "tau" not in spec_kwargs and mode == "non_extreme":
        spec_kwargs["tau"] = 1.0
    problem = get_problem(prob["name"], mode)
    spec_kwargs.setdefault("eps_s", problem.eps_s)
    spec_kwargs.setdefault("delta_band", problem.delta_band)
    spec = AcquisitionSpec(**spec_kwargs)

    kwargs = {}
    if "restarts" in rec:
        kwargs["rec_restarts"] = int(rec["restarts"])
    if "n_u_coarse" in rec:
        kwargs["rec_n_u_coarse"] = int(rec["n_u_coarse"])
    if "n_u_fine" in rec:
        kwargs["rec_n_u_fine"] = int(rec["n_u_fine"])
    if "stride" in rec:
        kwargs["rec_stride"] = int(rec["stride"])
    if "score_n_u" in rec:
        kwargs["score_n_u"] = int(rec["score_n_u"])
    if "record_timing" in rec:
        kwargs["record_timing"] = parser["recommendation"].getboolean("record_timing")
    if out_dir is not None:
        kwargs["out_dir"] = Path(out_dir)
    return ExperimentConfig(
        problem=prob["name"],
        acquisition=spec,
        n_tot=int(budget["n_tot"]),
        repeats=int(budget.get("repeats", 1)),
        base_seed=int(budget.get("base_seed", 0)),
        mode=mode,
        **kwargs,
    )


# -- seed discipline -------------------------------------------------------


def _child_seed(*entropy) -> int:
    words = [
        e if isinstance(e, (int, np.integer))
        else int.from_bytes(hashlib.sha256(str(e).encode()).digest()[:4], "little")
        for e in entropy
    ]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


# -- initial design --------------------------------------------------------


def initial_design(problem: Problem, seed: int):
    """Scrambled-Sobol' initial design of the problem's pinned size."""
    stream = SobolStream(problem.dim, scramble_seed=seed)
    pts = problem.bounds[:, 0] + stream.take(problem.n_0) * (
        problem.bounds[:, 1] - problem.bounds[:, 0]
    )
    return pts, problem.evaluate(pts)


# -- recommendation --------------------------------------------------------


def recommend(
    state,
    problem: Problem,
    stage: str = "auto",
    seed: int = 0,
    tau: float | None = None,
    restarts: int = 10,
    n_u_coarse: int = 1024,
    n_u_fine: int = 131072,
):
    """The design with the best estimated reliability under the surrogate.

    Scans Sobol' candidates with a coarse importance sample, Boltzmann-selects
    restarts (argmax always included) and polishes with bounded quasi-Newton;
    for higher-dimensional problems ("fine" stage) the winner is re-polished
    under a much larger sample.

    Returns (x_rec, p_hat at x_rec).
    """
    bounds = problem.bounds
    d = problem.dim
    if stage == "auto":
        stage = "fine" if d > 2 else "coarse"
    if tau is None:
        tau = problem.default_tau
    smoothing = SmoothingConfig.for_box(bounds)
    u_stream = SobolStream(2 * ((d + 1) // 2), scramble_seed=_child_seed(seed, 1))
    sample = draw_is_sample(problem.perturb, tau, n_u_coarse, u_stream)
    cands = bounds[:, 0] + SobolStream(d, scramble_seed=_child_seed(seed, 2)).take(
        1024
    ) * (bounds[:, 1] - bounds[:, 0])
    log_p = estimate_pn_batch(state, cands, sample, bounds, smoothing, problem.c)
    if np.all(np.isinf(log_p)):
        # Every candidate has estimated failure probability zero; fall back to
        # the candidate keeping the most perturbation mass inside the box.
        log.warning("recommend: all candidates at zero estimated probability")
        w = np.exp(sample.log_weights)
        mass = [
            float(np.mean(w * smooth_feasibility(x + sample.points, bounds, smoothing.delta)))
            for x in cands
        ]
        best = int(np.argmax(mass))
        return cands[best], 0.0
    starts = boltzmann_restarts(
        cands, -log_p, RestartPlan(len(cands), restarts), _child_seed(seed, 3)
    )

    def objective(x):
        est = estimate_pn(state, x, sample, bounds, smoothing, problem.c)
        return est.log_p, est.grad_log_p

    x_best, val, _ = multistart_qn(
        BoundedObjective(d, bounds, objective, sense="min"), starts
    )
    if stage == "fine":
        fine_stream = SobolStream(
            2 * ((d + 1) // 2), scramble_seed=_child_seed(seed, 4)
        )
        fine_sample = draw_is_sample(problem.perturb, tau, n_u_fine, fine_stream)

        def objective_fine(x):
            est = estimate_pn(state, x, fine_sample, bounds, smoothing, problem.c)
            return est.log_p, est.grad_log_p

        x_best, val, _ = multistart_qn(
            BoundedObjective(d, bounds, objective_fine, sense="min"),
            [x_best],
            max_iters=50,
        )
    return x_best, float(np.exp(val))


# -- trace persistence -----------------------------------------------------


class TraceWriter:
    """Append-only CSV trace with a terminal completeness marker row."""

    def __init__(self, path: Path, dim: int):
        self.path = Path(path)
        self.dim = dim
        y_cols = [f"y_{j + 1}" for j in range(dim)]
        x_cols = [f"x_rec_{j + 1}" for j in range(dim)]
        self.header = (
            ["repeat", "n", "phase"]
            + y_cols
            + ["v", "acq_value", "rule"]
            + x_cols
            + ["p_hat", "p_true", "wall_ms"]
        )

    def start(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w") as fh:
            fh.write(",".join(self.header) + "\n")

    def _fmt(self, v):
        if v is None:
            return ""
        if isinstance(v, str):
            return v
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        return _FLOAT_FMT % float(v)

    def append(self, repeat, n, phase, y=None, v=None, acq_value=None, rule="",
               x_rec=None, p_hat=None, p_true=None, wall_ms=None):
        y = [None] * self.dim if y is None else list(y)
        x_rec = [None] * self.dim if x_rec is None else list(x_rec)
        row = [repeat, n, phase] + y + [v, acq_value, rule] + x_rec + [
            p_hat, p_true, wall_ms
        ]
        with open(self.path, "a") as fh:
            fh.write(",".join(self._fmt(c) for c in row) + "\n")

    def finish(self, repeat):
        self.append(repeat, -1, "done")


def read_trace(path):
    """Parse a trace CSV into a list of row dicts (floats where numeric)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = []
        for line in fh:
            cells = line.rstrip("\n").split(",")
            row = {}
            for key, cell in zip(header, cells):
                if key in ("repeat", "n"):
                    row[key] = int(cell)
                elif key in ("phase", "rule"):
                    row[key] = cell
                else:
                    row[key] = float(cell) if cell else None
            rows.append(row)
    return header, rows


def trace_is_complete(path) -> bool:
    path = Path(path)
    if not path.exists():
        return False
    _, rows = read_trace(path)
    return bool(rows) and rows[-1]["phase"] == "done"


# -- the BO loop -----------------------------------------------------------


_STRATEGY_LABELS = {
    "ts_mr": "ts_mr",
    "kg_mr_discrete": "kg_mr_discrete",
    "kg_mr_oneshot": "kg_mr_oneshot",
    "hc": "hc",
    "egra": "egra",
    "ei": "ei",
    "sobol": "sobol",
}


def run_bo(config: ExperimentConfig, repeat_index: int, trace_path=None) -> Path:
    """One optimization run: fit, select, evaluate, recommend, score, trace.

    If an incomplete trace exists for this repeat, the run resumes after the
    last complete record by replaying the stored observations.
    """
    problem = get_problem(config.problem, config.mode)
    spec = config.acquisition
    spec = replace(
        spec,
        eps_s=spec.eps_s if spec.eps_s is not None else problem.eps_s,
        delta_band=spec.delta_band if spec.delta_band is not None else problem.delta_band,
    )
    seed = config.base_seed + repeat_index
    d = problem.dim
    if trace_path is None:
        trace_path = config.out_dir / f"trace_{config.hash()}_r{repeat_index}.csv"
    writer = TraceWriter(trace_path, d)

    resumed_rows = []
    if Path(trace_path).exists():
        if trace_is_complete(trace_path):
            return Path(trace_path)
        _, resumed_rows = read_trace(trace_path)
        resumed_rows = [r for r in resumed_rows if r["phase"] in ("init", "iter")]

    if resumed_rows:
        Y = np.array([[r[f"y_{j + 1}"] for j in range(d)] for r in resumed_rows])
        v = np.array([r["v"] for r in resumed_rows])
        if len(Y) < problem.n_0:
            # Partial initial design: simplest correct restart is from scratch.
            resumed_rows = []
    if not resumed_rows:
        writer.start()
        Y, v = initial_design(problem, _child_seed(seed, "design"))
        for i in range(problem.n_0):
            writer.append(repeat_index, i + 1, "init", y=Y[i], v=v[i])

    sobol_stream = None
    if spec.kind == "sobol":
        sobol_stream = SobolStream(d, scramble_seed=_child_seed(seed, "sobol"))
        if len(v) > problem.n_0:  # resumed run: skip already-consumed points
            sobol_stream.take(len(v) - problem.n_0)

    warm = None
    for n in range(len(v), config.n_tot):
        t0 = time.monotonic()
        state = fit_map(
            Y, v, bounds=problem.bounds, seed=_child_seed(seed, "fit", n), warm_start=warm
        )
        warm = state.hyperparams
        streams = IterationStreams.from_seed(_child_seed(seed, "acq", n), d)
        if spec.kind == "ts_mr":
            y_next, diag = ts_mr_next(state, problem, spec, streams)
        elif spec.kind == "kg_mr_discrete":
            y_next, diag = kg_discrete_next(state, problem, spec, streams)
        elif spec.kind == "kg_mr_oneshot":
            y_next, diag = kg_oneshot_next(state, problem, spec, streams)
        elif spec.kind == "hc":
            y_next, diag = hc_next(state, (Y, v), spec, problem.bounds, problem.c, streams)
        elif spec.kind == "egra":
            y_next, diag = egra_next(state, spec, problem.bounds, problem.c, streams)
        elif spec.kind == "ei":
            y_next, diag = ei_next(state, (Y, v), spec, problem.bounds, streams)
        elif spec.kind == "sobol":
            y_next, diag = sobol_next(sobol_stream, problem.bounds)
        else:  # pragma: no cover - guarded by AcquisitionSpec
            raise ValueError(spec.kind)
        v_next = float(problem.evaluate(y_next[None, :])[0])
        Y = np.vstack([Y, y_next[None, :]])
        v = np.append(v, v_next)

        is_checkpoint = ((n + 1 - problem.n_0) % config.rec_stride == 0) or (
            n + 1 == config.n_tot
        )
        x_rec = p_hat = p_true = None
        if is_checkpoint:
            post_state = fit_map(
                Y,
                v,
                bounds=problem.bounds,
                seed=_child_seed(seed, "fit", n + 1),
                warm_start=warm,
            )
            x_rec, p_hat = recommend(
                post_state,
                problem,
                seed=_child_seed(seed, "rec", n),
                tau=spec.tau,
                restarts=config.rec_restarts,
                n_u_coarse=config.rec_n_u_coarse,
                n_u_fine=config.rec_n_u_fine,
            )
            p_true = evaluate_true_failure(
                problem, x_rec, n_u=config.score_n_u, tau=spec.tau,
                seed=_child_seed(seed, "score"),
            )
        wall_ms = (time.monotonic() - t0) * 1e3 if config.record_timing else 0.0
        writer.append(
            repeat_index,
            n + 1,
            "iter",
            y=y_next,
            v=v_next,
            acq_value=diag.value if np.isfinite(diag.value) else None,
            rule=diag.rule,
            x_rec=x_rec,
            p_hat=p_hat,
            p_true=p_true,
            wall_ms=wall_ms,
        )
    writer.finish(repeat_index)
    return Path(trace_path)


def run_experiment(config: ExperimentConfig) -> dict:
    """Run all repeats sequentially and write a manifest describing them."""
    config.out_dir.mkdir(parents=True, exist_ok=True)
    statuses = {}
    traces = {}
    for r in range(config.repeats):
        try:
            path = run_bo(config, r)
            statuses[r] = "ok"
            traces[r] = str(path)
        except Exception as err:  # noqa: BLE001 - record and continue
            log.exception("repeat %d failed", r)
            statuses[r] = f"failed: {err}"
    manifest = {
        "config": config.to_dict(),
        "config_hash": config.hash(),
        "seeds": [config.base_seed + r for r in range(config.repeats)],
        "repeats": {
            str(r): {
                "status": statuses[r],
                "trace": traces.get(r),
                "sha256": (
                    hashlib.sha256(Path(traces[r]).read_bytes()).hexdigest()
                    if r in traces
                    else None
                ),
            }
            for r in range(config.repeats)
        },
        "failed_repeats": [r for r, s in statuses.items() if s != "ok"],
    }
    manifest_path = config.out_dir / f"manifest_{config.hash()}.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    manifest["manifest_path"] = str(manifest_path)
    return manifest
