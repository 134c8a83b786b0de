"""Experiment orchestration: configs, seeded runs, sweeps and CSV/SVG output.

Seed splitting: run ``i`` of a sweep draws everything (initial weights, then
the transition uniforms) from ``SeedSequence(master_seed, spawn_key=(i,))``.
Every grid cell therefore sees the same initial nets and the same uniform
stream for a given seed index, and adding cells never shifts another cell's
stream.
"""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .approx import FeatureMap, init_net
from .exact import solve_forward
from .kernels import _codes
from .learners import ALGORITHMS, LearnerConfig
from .mdp import Policy, SamplingTables, TabularMdp, mdp_from_dict, policy_matrices, \
    visitation_distribution

DEFAULT_ALPHAS = (0.3, 0.1, 0.03, 0.01, 0.003)
DEFAULT_LAMBDAS = (0.0, 0.2, 0.4, 0.6, 0.8, 0.9, 0.95)
METHODS = ("TD0", "TDLambda", "RefreshedTDLambda", "BiTD_FR", "BiTD_BiR", "BiTD_FBi")


def method_to_learner(method: str) -> tuple[str, str]:
    """``(algorithm, parameterization)`` for a method name such as ``BiTD_FR``."""
    if method in ALGORITHMS and method != "BiTD":
        return method, "BiTD_FR"
    if method.startswith("BiTD_"):
        return "BiTD", method
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


@dataclass(frozen=True)
class ExperimentConfig:
    environment: dict = field(default_factory=lambda: {"preset": "chain"})
    methods: tuple[str, ...] = ("TDLambda", "BiTD_FR")
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS
    steps: int = 20_000
    eval_interval: int = 100
    seeds: int = 20
    master_seed: int = 0
    out: str = "results"
    features: str = "triangular"
    anchors: tuple[int, ...] | None = None
    hidden: int = 9
    torso: str = "relu"
    init_scale: float = 0.5
    theta_target: str = "td"
    phi_target: str = "mc"
    psi_target: str = "bellman"
    update_at_episode_start: bool = False
    max_episode_steps: int = 10_000

    def __post_init__(self):
        for name in ("methods", "alphas", "lambdas"):
            value = tuple(getattr(self, name))
            if not value:
                raise ValueError(f"{name} grid must not be empty")
            object.__setattr__(self, name, value)
        for m in self.methods:
            method_to_learner(m)
        if self.anchors is not None:
            object.__setattr__(self, "anchors", tuple(self.anchors))
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if self.seeds < 1:
            raise ValueError("need at least one seed")
        if self.eval_interval <= 0:
            raise ValueError("eval_interval must be positive")
        if self.features not in ("triangular", "one_hot"):
            raise ValueError("features must be 'triangular' or 'one_hot'")

    @classmethod
    def from_dict(cls, blob: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(blob) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**blob)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def learner_config(self, method: str, alpha: float, lam: float) -> LearnerConfig:
        algorithm, param = method_to_learner(method)
        return LearnerConfig(algorithm, alpha, lam, self.build_mdp().gamma, param,
                             self.theta_target, self.phi_target, self.psi_target,
                             self.update_at_episode_start)

    def build_mdp(self) -> TabularMdp:
        return mdp_from_dict(self.environment)


@dataclass(frozen=True)
class Problem:
    """Everything a training run needs that does not depend on the seed."""

    mdp: TabularMdp
    tables: SamplingTables
    features: np.ndarray
    n_inputs: int
    p_pi: np.ndarray
    r_pi: np.ndarray
    visit: np.ndarray
    v_true: np.ndarray

    @classmethod
    def build(cls, config: ExperimentConfig) -> "Problem":
        mdp = config.build_mdp()
        policy = Policy.uniform(mdp)
        live = mdp.nonterminal
        if config.features == "one_hot":
            fmap = FeatureMap.one_hot(len(live))
        else:
            fmap = FeatureMap.triangular(len(live), config.anchors)
        feats = np.zeros((mdp.n_states, fmap.dim))
        for i, s in enumerate(live):
            feats[s] = fmap.encode(i)
        p_pi, r_pi = policy_matrices(mdp, policy)
        return cls(mdp, SamplingTables.build(mdp, policy), feats, fmap.dim, p_pi, r_pi,
                   visitation_distribution(mdp, policy),
                   np.asarray(solve_forward(mdp, policy).values, float))


@dataclass(frozen=True, eq=False)
class RunRecord:
    method: str
    alpha: float
    lam: float
    seed: int
    steps: np.ndarray
    mstde: np.ndarray
    rmsve: np.ndarray
    diverged: bool
    duration: float = field(compare=False, default=0.0)
    final_params: np.ndarray | None = field(compare=False, default=None, repr=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RunRecord):
            return NotImplemented
        return (self.key == other.key and self.diverged == other.diverged
                and all(np.array_equal(a, b) for a, b in
                        ((self.steps, other.steps), (self.mstde, other.mstde),
                         (self.rmsve, other.rmsve))))

    __hash__ = None

    @property
    def auc(self) -> float:
        return auc(self.steps, self.mstde)

    @property
    def key(self) -> tuple:
        return (self.method, self.alpha, self.lam, self.seed)


def auc(steps: np.ndarray, values: np.ndarray) -> float:
    """Trapezoidal area under a curve; infinite if any point is not finite."""
    values = np.asarray(values, float)
    if not np.all(np.isfinite(values)):
        return math.inf
    if len(values) < 2:
        return 0.0
    x = np.asarray(steps, float)
    return float(np.sum((values[1:] + values[:-1]) * np.diff(x)) / 2.0)


def seed_rng(master_seed: int, seed_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(seed_index,)))


def seed_material(config: ExperimentConfig, problem: Problem, seed_index: int):
    """Initial parameters and the ``(3, steps)`` uniforms for one seed index."""
    rng = seed_rng(config.master_seed, seed_index)
    net = init_net(problem.n_inputs, config.hidden, rng, torso=config.torso,
                   scale=config.init_scale)
    uniforms = rng.random((3, config.steps))
    return net, uniforms


def run_single(config: ExperimentConfig, method: str, alpha: float, lam: float, seed: int,
               problem: Problem | None = None, backend=None) -> RunRecord:
    problem = problem or Problem.build(config)
    lc = config.learner_config(method, alpha, lam)
    net, uniforms = seed_material(config, problem, seed)
    t = problem.tables
    run = backend or kernels.train_run
    start = time.perf_counter()
    mstde, rmsve, diverged, params = run(
        problem.features, t.terminal.astype(np.uint8), t.start_cdf, t.policy_cdf,
        t.transition_cdf, t.reward, problem.p_pi, problem.r_pi, problem.visit, problem.v_true,
        net.params, problem.n_inputs, net.hidden, _codes.TORSO[net.torso],
        _codes.PARAMETERIZATION[lc.parameterization], _codes.ALGORITHM[lc.algorithm],
        lc.alpha, lc.lam, lc.gamma, _codes.THETA[lc.theta_target], _codes.PHI[lc.phi_target],
        _codes.PSI[lc.psi_target], lc.update_at_episode_start, uniforms,
        config.eval_interval, config.max_episode_steps)
    steps = np.arange(len(mstde)) * config.eval_interval
    return RunRecord(method, float(alpha), float(lam), int(seed), steps, np.asarray(mstde),
                     np.asarray(rmsve), bool(diverged), time.perf_counter() - start,
                     np.asarray(params))


@dataclass(frozen=True)
class CellSummary:
    method: str
    alpha: float
    lam: float
    n_seeds: int
    n_diverged: int
    mean_curve: np.ndarray
    stderr_curve: np.ndarray
    mean_auc: float
    stderr_auc: float
    best: bool = False


def _stderr(x: np.ndarray, axis=0) -> np.ndarray:
    n = x.shape[axis]
    if n < 2:
        return np.zeros(np.delete(x.shape, axis)) if x.ndim > 1 else np.float64(0.0)
    with np.errstate(invalid="ignore"):
        return np.std(x, axis=axis, ddof=1) / math.sqrt(n)


def summarize(records: list[RunRecord]) -> list[CellSummary]:
    cells: dict[tuple, list[RunRecord]] = {}
    for rec in sorted(records, key=lambda r: r.key):
        cells.setdefault((rec.method, rec.alpha, rec.lam), []).append(rec)
    out = []
    for (method, alpha, lam), recs in cells.items():
        curves = np.stack([r.mstde for r in recs])
        aucs = np.array([r.auc for r in recs])
        with np.errstate(invalid="ignore"):
            out.append(CellSummary(method, alpha, lam, len(recs), sum(r.diverged for r in recs),
                                   curves.mean(axis=0), _stderr(curves),
                                   float(aucs.mean()), float(_stderr(aucs))))
    best = {}
    for i, c in enumerate(out):
        j = best.get(c.method)
        if j is None or c.mean_auc < out[j].mean_auc:
            best[c.method] = i
    return [replace(c, best=(best.get(c.method) == i)) for i, c in enumerate(out)]


def _run_job(args):
    config, method, alpha, lam, seed = args
    return run_single(config, method, alpha, lam, seed, _problem_cache(config))


_PROBLEMS: dict[str, Problem] = {}


def _problem_cache(config: ExperimentConfig) -> Problem:
    key = json.dumps([config.environment, config.features, config.anchors], sort_keys=True)
    if key not in _PROBLEMS:
        _PROBLEMS[key] = Problem.build(config)
    return _PROBLEMS[key]


def run_sweep(config: ExperimentConfig, workers: int = 1,
              progress=None) -> tuple[list[RunRecord], list[CellSummary]]:
    """Every (method, alpha, lambda, seed); results merged by key, not arrival order.

    Methods without a trace parameter run once per alpha with ``lam = 0``.
    """
    jobs = []
    for method in config.methods:
        lams = (0.0,) if method == "TD0" else config.lambdas
        for alpha in config.alphas:
            for lam in lams:
                for seed in range(config.seeds):
                    jobs.append((config, method, float(alpha), float(lam), seed))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        records = []
        for i, job in enumerate(jobs):
            records.append(_run_job(job))
            if progress is not None:
                progress(i + 1, len(jobs))
    records.sort(key=lambda r: r.key)
    return records, summarize(records)


# -- output ----------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".10g")


def _write_csv(path: Path, header: list[str], rows) -> None:
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


CURVE_HEADER = ["step", "algorithm", "alpha", "lambda", "seed", "mstde", "rmsve"]
SUMMARY_HEADER = ["algorithm", "alpha", "lambda", "n_seeds", "n_diverged", "final_mstde_mean",
                  "final_mstde_stderr", "auc_mean", "auc_stderr", "best"]
MEAN_HEADER = ["step", "algorithm", "alpha", "lambda", "mstde_mean", "mstde_stderr"]


def emit_outputs(records: list[RunRecord], summary: list[CellSummary], out_dir: str | Path,
                 svg: bool = False) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    curves = out / "curves.csv"
    _write_csv(curves, CURVE_HEADER,
               ([int(st), r.method, r.alpha, r.lam, r.seed, m, v]
                for r in sorted(records, key=lambda r: r.key)
                for st, m, v in zip(r.steps, r.mstde, r.rmsve)))
    summ = out / "summary.csv"
    _write_csv(summ, SUMMARY_HEADER,
               ([c.method, c.alpha, c.lam, c.n_seeds, c.n_diverged, c.mean_curve[-1],
                 c.stderr_curve[-1], c.mean_auc, c.stderr_auc, c.best] for c in summary))
    steps = records[0].steps if records else np.zeros(0)
    means = out / "mean_curves.csv"
    _write_csv(means, MEAN_HEADER,
               ([int(st), c.method, c.alpha, c.lam, m, e]
                for c in summary
                for st, m, e in zip(steps, c.mean_curve, c.stderr_curve)))
    written = [curves, summ, means]
    if svg:
        path = out / "curves.svg"
        try:
            path.write_text(render_svg(steps, [c for c in summary if c.best]))
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        written.append(path)
    return written


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def render_svg(steps: np.ndarray, cells: list[CellSummary], width: int = 640,
               height: int = 400) -> str:
    """Log-scale MSTDE curves of the given cells as a standalone SVG."""
    pad_l, pad_r, pad_t, pad_b = 70, 20, 20, 50
    curves = [(c, np.asarray(c.mean_curve, float)) for c in cells]
    finite = np.concatenate([y[np.isfinite(y) & (y > 0)] for _, y in curves] or [np.ones(1)])
    if finite.size == 0:
        finite = np.ones(1)
    lo, hi = math.log10(finite.min()), math.log10(finite.max())
    if hi - lo < 1e-9:
        lo, hi = lo - 1, hi + 1
    x_max = float(steps[-1]) if len(steps) and steps[-1] > 0 else 1.0

    def px(x):
        return pad_l + (width - pad_l - pad_r) * x / x_max

    def py(y):
        return pad_t + (height - pad_t - pad_b) * (hi - math.log10(y)) / (hi - lo)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="sans-serif" font-size="11">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{pad_l}" y1="{height - pad_b}" x2="{width - pad_r}" '
             f'y2="{height - pad_b}" stroke="black"/>',
             f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{height - pad_b}" stroke="black"/>',
             f'<text x="{(width + pad_l) / 2:.1f}" y="{height - 12}" text-anchor="middle">'
             f'environment steps</text>',
             f'<text x="14" y="{(height - pad_b + pad_t) / 2:.1f}" text-anchor="middle" '
             f'transform="rotate(-90 14 {(height - pad_b + pad_t) / 2:.1f})">MSTDE (log)</text>']
    for e in range(math.floor(lo), math.ceil(hi) + 1):
        if lo <= e <= hi:
            y = py(10.0**e)
            parts.append(f'<text x="{pad_l - 6}" y="{y + 4:.1f}" text-anchor="end">1e{e}</text>')
    parts.append(f'<text x="{px(x_max):.1f}" y="{height - pad_b + 16}" '
                 f'text-anchor="end">{int(x_max)}</text>')
    for i, (cell, y) in enumerate(curves):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(x):.1f},{py(v):.1f}" for x, v in zip(steps, y)
                       if math.isfinite(v) and v > 0)
        if pts:
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                         f'points="{pts}"/>')
        label = f"{cell.method} a={_fmt(cell.alpha)} l={_fmt(cell.lam)}"
        parts.append(f'<text x="{width - pad_r - 4}" y="{pad_t + 14 * (i + 1)}" '
                     f'text-anchor="end" fill="{color}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
