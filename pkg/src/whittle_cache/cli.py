"""Command-line front end: one JSON config, four subcommands, CSV out.

Everything an invocation produces is a pure function of the config file
bytes and the flags: seeds derive from ``master_seed``, no timestamps are
emitted, and every output starts with a ``#`` header embedding the tool
version plus the fully resolved config (defaults filled in, keys sorted),
so reruns are byte-identical and any artifact documents how to remake it.

Precedence: flags override config fields (``--seed`` beats
``master_seed``, ``--horizon`` beats ``simulate.horizon``, and so on);
whatever won is what the header echoes.

Exit codes: 0 success; 1 runtime/numerical failure; 2 usage or config
error (also used when the closed-form index hits a degenerate
denominator, in which case the rows computed so far are still written).
"""

import argparse
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DegenerateDenominator, WhittleCacheError
from .index import whittle_table
from .learning import (
    GAUSSIAN_RBF,
    GEOMETRIC,
    ONEHOT,
    THEOREM1,
    FeatureSpec,
    StepSizeSchedule,
    ThresholdFixedPoint,
    lfa_run,
    q_whittle_run,
    qplus_whittle_run,
    qplus_whittle_sweep,
)
from .mdp import PerContentParams, content_rng
from .simulator import (
    IndexPolicy,
    LfuPolicy,
    LruPolicy,
    RandomPolicy,
    SystemConfig,
    run_comparison,
)
from .workload import Workload, poisson_trace, write_trace, zipf_workload

ALGORITHMS = ("q-whittle", "q+-whittle", "q+-whittle-lfa")
POLICY_NAMES = ("whittle-oracle", "whittle-learned", "lru", "lfu", "random")
DEFAULT_LEARNED_INDEX = "learned_index.csv"


# ---------------------------------------------------------------------------
# configuration


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _pop_block(raw: dict, name: str) -> dict:
    block = raw.pop(name, {})
    _require(isinstance(block, dict), f"'{name}' must be a JSON object")
    return dict(block)


def _number(block: dict, path: str, key: str, default, *, low=None, integer=False):
    value = block.pop(key, default)
    kinds = (int,) if integer else (int, float)
    _require(
        isinstance(value, kinds) and not isinstance(value, bool),
        f"'{path}{key}' must be {'an integer' if integer else 'a number'}",
    )
    if low is not None:
        _require(value >= low, f"'{path}{key}' must be >= {low}")
    return value


def resolve_config(raw: dict, seed_override=None) -> dict:
    """Validate the JSON document and fill every default in.

    The returned dict is the canonical record of the run: flat blocks,
    every field present, suitable for echoing into output headers.
    Defaults: alpha 0.98, gamma0 0.1, eta0 0.01, d 20, nu 18, B = M/10
    (at least 1), total arrival rate 0.8 * nu * B.
    """
    _require(isinstance(raw, dict), "config root must be a JSON object")
    raw = dict(raw)
    master_seed = raw.pop("master_seed", 0)
    if seed_override is not None:
        master_seed = seed_override
    _require(
        isinstance(master_seed, int) and not isinstance(master_seed, bool),
        "'master_seed' must be an integer",
    )
    _require(0 <= master_seed < 2**64, "'master_seed' must fit an unsigned 64-bit int")

    workload = _pop_block(raw, "workload")
    rates = workload.pop("rates", None)
    if rates is not None:
        _require(
            isinstance(rates, list)
            and len(rates) >= 1
            and all(isinstance(r, (int, float)) and r > 0 for r in rates),
            "'workload.rates' must be a non-empty list of positive numbers",
        )
        m_count = len(rates)
        kappa = None
        total_rate = float(sum(rates))
        _require(
            not workload, f"unknown workload fields: {sorted(workload)}"
        )
    else:
        m_count = _number(workload, "workload.", "M", 20, low=1, integer=True)
        kappa = _number(workload, "workload.", "kappa", 0.9, low=0.0)
        total_rate = workload.pop("total_rate", None)
        _require(not workload, f"unknown workload fields: {sorted(workload)}")

    s_max = _number(raw, "", "s_max", 10, low=1, integer=True)
    nu = _number(raw, "", "nu", 18.0)
    _require(nu > 0, "'nu' must be positive")
    alpha = _number(raw, "", "alpha", 0.98)
    _require(0 < alpha < 1, "'alpha' must lie strictly between 0 and 1")
    b_default = max(1, m_count // 10)
    b_slots = _number(raw, "", "B", b_default, low=1, integer=True)

    if rates is None:
        if total_rate is None:
            total_rate = 0.8 * nu * b_slots  # keeps the relaxed system stable
        _require(
            isinstance(total_rate, (int, float)) and total_rate > 0,
            "'workload.total_rate' must be a positive number",
        )

    schedule = _pop_block(raw, "schedule")
    kind = schedule.pop("kind", GEOMETRIC)
    _require(
        kind in (GEOMETRIC, THEOREM1),
        f"'schedule.kind' must be one of {[GEOMETRIC, THEOREM1]}",
    )
    gamma0 = _number(schedule, "schedule.", "gamma0", 0.1)
    eta0 = _number(schedule, "schedule.", "eta0", 0.01)
    decay_factor = _number(schedule, "schedule.", "decay_factor", 1.1)
    decay_period = _number(schedule, "schedule.", "decay_period", 1000, low=1, integer=True)
    _require(not schedule, f"unknown schedule fields: {sorted(schedule)}")

    features = _pop_block(raw, "features")
    feat_kind = features.pop("kind", GAUSSIAN_RBF)
    _require(
        feat_kind in (ONEHOT, GAUSSIAN_RBF),
        f"'features.kind' must be one of {[ONEHOT, GAUSSIAN_RBF]}",
    )
    feat_d = features.pop("d", 20 if feat_kind == GAUSSIAN_RBF else 2 * (s_max + 1))
    bandwidth = features.pop("bandwidth", None)
    _require(not features, f"unknown features fields: {sorted(features)}")

    learn = _pop_block(raw, "learn")
    learn_t = _number(learn, "learn.", "T", 20000, low=0, integer=True)
    epsilon = _number(learn, "learn.", "epsilon", 0.1)
    _require(0 <= epsilon <= 1, "'learn.epsilon' must lie in [0, 1]")
    trace_every = learn.pop("trace_every", None)
    if trace_every is not None:
        _require(
            isinstance(trace_every, int) and trace_every >= 1,
            "'learn.trace_every' must be a positive integer",
        )
    _require(not learn, f"unknown learn fields: {sorted(learn)}")

    simulate = _pop_block(raw, "simulate")
    horizon = _number(simulate, "simulate.", "horizon", 1e4)
    _require(horizon > 0, "'simulate.horizon' must be positive")
    n_seeds = _number(simulate, "simulate.", "n_seeds", 50, low=1, integer=True)
    policies = simulate.pop("policies", ["whittle-oracle", "lru", "lfu", "random"])
    _require(
        isinstance(policies, list) and policies and all(p in POLICY_NAMES for p in policies),
        f"'simulate.policies' must be a non-empty list drawn from {list(POLICY_NAMES)}",
    )
    _require(not simulate, f"unknown simulate fields: {sorted(simulate)}")
    _require(not raw, f"unknown config fields: {sorted(raw)}")

    workload_block = {"M": m_count}
    if rates is not None:
        workload_block["rates"] = [float(r) for r in rates]
    else:
        workload_block["kappa"] = float(kappa)
        workload_block["total_rate"] = float(total_rate)
    return {
        "master_seed": master_seed,
        "workload": workload_block,
        "nu": float(nu),
        "s_max": s_max,
        "alpha": float(alpha),
        "B": b_slots,
        "schedule": {
            "kind": kind,
            "gamma0": float(gamma0),
            "eta0": float(eta0),
            "decay_factor": float(decay_factor),
            "decay_period": decay_period,
        },
        "features": {"kind": feat_kind, "d": feat_d, "bandwidth": bandwidth},
        "learn": {"T": learn_t, "epsilon": float(epsilon), "trace_every": trace_every},
        "simulate": {
            "horizon": float(horizon),
            "n_seeds": n_seeds,
            "policies": list(policies),
        },
    }


def load_config(path: str, seed_override=None) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path!r} is not valid JSON: {exc}") from exc
    return resolve_config(raw, seed_override=seed_override)


def config_rates(cfg: dict) -> np.ndarray:
    block = cfg["workload"]
    if "rates" in block:
        return np.asarray(block["rates"], dtype=np.float64)
    return zipf_workload(block["M"], block["kappa"], block["total_rate"]).rates


def content_params(cfg: dict, lam: float) -> PerContentParams:
    return PerContentParams(
        lam=float(lam), nu=cfg["nu"], s_max=cfg["s_max"], alpha=cfg["alpha"]
    )


def config_schedule(cfg: dict) -> StepSizeSchedule:
    s = cfg["schedule"]
    return StepSizeSchedule(
        kind=s["kind"],
        gamma0=s["gamma0"],
        eta0=s["eta0"],
        decay_factor=s["decay_factor"],
        decay_period=s["decay_period"],
    )


def config_features(cfg: dict) -> FeatureSpec:
    f = cfg["features"]
    return FeatureSpec(
        kind=f["kind"], s_max=cfg["s_max"], d=f["d"], bandwidth=f["bandwidth"]
    )


# ---------------------------------------------------------------------------
# output plumbing


def _header_lines(cfg: dict, extra=()) -> list:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return [f"# whittle-cache {__version__}", f"# config: {blob}", *extra]


def _write_lines(out: str, lines) -> None:
    text = "\n".join(lines) + "\n"
    if out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# subcommands


def cmd_index(cfg: dict, out: str) -> int:
    """Closed-form index tables for every content; partial output on
    a degenerate threshold denominator (exit 2), as upstream of it the
    rows are still valid."""
    rates = config_rates(cfg)
    rows, failure = [], None
    for m, lam in enumerate(rates):
        try:
            table = whittle_table(content_params(cfg, lam))
        except DegenerateDenominator as exc:
            failure = (m, exc)
            break
        for r_state, value in enumerate(table.indices):
            rows.append(f"{m},{r_state},{_fmt(value)},{str(table.indexable).lower()}")
    lines = _header_lines(cfg) + ["content_id,R,whittle_index,indexable"] + rows
    _write_lines(out, lines)
    if failure is not None:
        m, exc = failure
        print(
            f"degenerate denominator while indexing content {m}: {exc}; "
            f"wrote the {m} completed contents",
            file=sys.stderr,
        )
        return 2
    return 0


def _learn_one(cfg: dict, algorithm: str, m: int, lam: float):
    """Run one content's learner; returns (w, trace_rows).

    Trace rows are (epoch, R, W_n, M_n-or-None) at `trace_every` strides.
    The baseline learner keeps no per-epoch history, so its trace is
    empty; the Lyapunov residual M_n is only defined for the tabular
    sweeps, where the per-threshold fixed point is computable.
    """
    params = content_params(cfg, lam)
    schedule = config_schedule(cfg)
    t_epochs = cfg["learn"]["T"]
    rng = content_rng(cfg["master_seed"], m)
    every = cfg["learn"]["trace_every"] or max(1, t_epochs // 100)
    rows = []

    if algorithm == "q-whittle":
        run = q_whittle_run(
            params, schedule, t_epochs, rng=rng, epsilon=cfg["learn"]["epsilon"]
        )
        return run.w, rows

    if algorithm == "q+-whittle-lfa":
        run = lfa_run(params, schedule, config_features(cfg), t_epochs, rng=rng, record=True)
        if run.w_trace is not None:
            for r_state in range(params.n_states):
                for k in range(0, t_epochs, every):
                    n = r_state * t_epochs + k
                    rows.append((n, r_state, run.w_trace[n], None))
        return run.w, rows

    # tabular sweeps, driven one threshold at a time so the per-sweep
    # fixed point can annotate the trace with the Lyapunov residual
    n_states = params.n_states
    q = np.zeros((n_states, 2))
    w = np.zeros(n_states)
    w_prev = 0.0
    for r_state in range(n_states):
        try:
            fp = ThresholdFixedPoint(params, r_state)
        except (WhittleCacheError, np.linalg.LinAlgError):
            fp = None
        result = qplus_whittle_sweep(
            params,
            r_state,
            schedule,
            t_epochs,
            rng=rng,
            q=q,
            w0=w_prev,
            record=True,
            fixed_point=fp,
        )
        w[r_state] = result.w_final
        w_prev = result.w_final
        for k in range(0, t_epochs, every):
            m_val = result.m_trace[k] if result.m_trace is not None else None
            rows.append((r_state * t_epochs + k, r_state, result.w_trace[k], m_val))
    return w, rows


def cmd_learn(cfg: dict, algorithm: str, out: str, trace_out) -> int:
    if algorithm not in ALGORITHMS:
        print(
            f"unknown algorithm {algorithm!r}; choose from {', '.join(ALGORITHMS)}",
            file=sys.stderr,
        )
        return 2
    rates = config_rates(cfg)
    index_rows, trace_rows = [], []
    for m, lam in enumerate(rates):
        w, rows = _learn_one(cfg, algorithm, m, float(lam))
        for r_state, value in enumerate(w):
            index_rows.append(f"{m},{r_state},{_fmt(value)}")
        for n, r_state, w_n, m_n in rows:
            m_field = "" if m_n is None else _fmt(m_n)
            trace_rows.append(f"{m},{n},{r_state},{_fmt(w_n)},{m_field}")
    _write_lines(out, _header_lines(cfg) + ["content_id,R,whittle_index"] + index_rows)
    if trace_out is not None:
        _write_lines(
            trace_out,
            _header_lines(cfg) + ["content_id,n,R,W_n,M_n"] + trace_rows,
        )
    return 0


def read_learned_tables(path: str, m_count: int, n_states: int):
    """Load a cmd_learn final-index CSV into per-content index tables."""
    table_path = Path(path)
    if not table_path.exists():
        raise ConfigError(
            f"whittle-learned policy needs an index table at {str(table_path)!r} "
            f"(produce one with `whittle-cache learn`)"
        )
    tables = np.full((m_count, n_states), np.nan)
    for line in table_path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line == "content_id,R,whittle_index":
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ConfigError(f"malformed learned-index row {line!r} in {path}")
        m, r_state, value = int(parts[0]), int(parts[1]), float(parts[2])
        if 0 <= m < m_count and 0 <= r_state < n_states:
            tables[m, r_state] = value
    if np.isnan(tables).any():
        missing = int(np.isnan(tables).sum())
        raise ConfigError(
            f"learned-index table {path} does not cover every content state "
            f"({missing} of {m_count * n_states} entries missing)"
        )
    return [tables[m] for m in range(m_count)]


def _build_policy(name: str, cfg: dict, rates: np.ndarray, learned_index: str):
    if name == "whittle-oracle":
        tables = [
            whittle_table(content_params(cfg, float(lam))).indices for lam in rates
        ]
        return IndexPolicy(tables, kind="whittle-oracle")
    if name == "whittle-learned":
        tables = read_learned_tables(learned_index, rates.size, cfg["s_max"] + 1)
        return IndexPolicy(tables, kind="whittle-learned")
    if name == "lru":
        return LruPolicy()
    if name == "lfu":
        return LfuPolicy()
    return RandomPolicy()


def episode_seeds(master_seed: int, n_seeds: int) -> list:
    """Deterministic per-episode seeds, paired across policies."""
    return [
        int(np.random.SeedSequence((master_seed, 1 + i)).generate_state(1, np.uint64)[0])
        for i in range(n_seeds)
    ]


def cmd_simulate(cfg: dict, out: str, learned_index: str) -> int:
    rates = config_rates(cfg)
    sim = cfg["simulate"]
    policies = [
        _build_policy(name, cfg, rates, learned_index) for name in sim["policies"]
    ]
    system = SystemConfig(
        lams=rates, nus=np.full(rates.size, cfg["nu"]), s_max=cfg["s_max"], B=cfg["B"]
    )
    seeds = episode_seeds(cfg["master_seed"], sim["n_seeds"])
    result = run_comparison(system, sim["horizon"], policies, seeds)
    rows = [
        f"{r.policy},{r.seed},{_fmt(r.accumulated_cost)},{_fmt(r.average_cost)},{r.events}"
        for r in result.rows
    ]
    for agg in result.aggregates:
        rows.append(
            f"{agg.policy},mean,{_fmt(agg.mean_accumulated_cost)},"
            f"{_fmt(agg.mean_average_cost)},"
        )
        rows.append(
            f"{agg.policy},stderr,{_fmt(agg.stderr_accumulated_cost)},"
            f"{_fmt(agg.stderr_accumulated_cost / sim['horizon'])},"
        )
    lines = _header_lines(
        cfg, extra=["# aggregate rows carry 'mean'/'stderr' in the seed column"]
    )
    _write_lines(out, lines + ["policy,seed,accumulated_cost,average_cost,events"] + rows)
    return 0


def cmd_workload(cfg: dict, out: str, gen_trace: bool, horizon) -> int:
    block = cfg["workload"]
    if "rates" in block:
        rates = np.asarray(block["rates"])
        workload = Workload(
            rates=rates, labels=np.arange(rates.size), source="config rates"
        )
    else:
        workload = zipf_workload(block["M"], block["kappa"], block["total_rate"])
    if gen_trace:
        span = horizon if horizon is not None else cfg["simulate"]["horizon"]
        events = poisson_trace(
            workload, span, rng=np.random.default_rng(cfg["master_seed"])
        )
        buf = io.StringIO()
        write_trace(events, buf)
        _write_lines(out, _header_lines(cfg) + buf.getvalue().splitlines())
        return 0
    rows = [
        f"{label},{_fmt(rate)}"
        for label, rate in zip(workload.labels, workload.rates)
    ]
    _write_lines(out, _header_lines(cfg) + ["content_id,rate"] + rows)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="whittle-cache",
        description="Whittle-index edge-cache toolkit: exact index tables, "
        "index learners, and the event-driven cache simulator.",
    )
    parser.add_argument("--version", action="version", version=f"whittle-cache {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
        p.add_argument("--out", default="-", help="output CSV path (default stdout)")

    p_index = sub.add_parser("index", help="closed-form Whittle index tables")
    common(p_index)

    p_learn = sub.add_parser("learn", help="learn index tables by Q-learning")
    common(p_learn)
    p_learn.add_argument(
        "--algorithm",
        default="q+-whittle",
        help=f"one of {', '.join(ALGORITHMS)} (default q+-whittle)",
    )
    p_learn.add_argument(
        "--trace-out",
        default=None,
        help="also write the per-epoch learning trace CSV here",
    )
    p_learn.add_argument(
        "--epochs", type=int, default=None, help="override learn.T from the config"
    )

    p_sim = sub.add_parser("simulate", help="compare cache policies by simulation")
    common(p_sim)
    p_sim.add_argument(
        "--policies",
        default=None,
        help=f"comma-separated subset of {','.join(POLICY_NAMES)}",
    )
    p_sim.add_argument(
        "--horizon", type=float, default=None, help="override simulate.horizon"
    )
    p_sim.add_argument(
        "--seeds", type=int, default=None, help="override simulate.n_seeds"
    )
    p_sim.add_argument(
        "--learned-index",
        default=DEFAULT_LEARNED_INDEX,
        help="final-index CSV for the whittle-learned policy "
        f"(default {DEFAULT_LEARNED_INDEX})",
    )

    p_work = sub.add_parser("workload", help="emit rates or a synthetic trace")
    common(p_work)
    p_work.add_argument(
        "--gen-trace",
        action="store_true",
        help="emit a sampled request trace instead of the rate table",
    )
    p_work.add_argument(
        "--horizon", type=float, default=None, help="trace length in time units"
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        if args.command == "index":
            return cmd_index(cfg, args.out)
        if args.command == "learn":
            if args.epochs is not None:
                if args.epochs < 0:
                    raise ConfigError("--epochs must be >= 0")
                cfg["learn"]["T"] = args.epochs
            return cmd_learn(cfg, args.algorithm, args.out, args.trace_out)
        if args.command == "simulate":
            if args.horizon is not None:
                if args.horizon <= 0:
                    raise ConfigError("--horizon must be positive")
                cfg["simulate"]["horizon"] = args.horizon
            if args.seeds is not None:
                if args.seeds < 1:
                    raise ConfigError("--seeds must be >= 1")
                cfg["simulate"]["n_seeds"] = args.seeds
            if args.policies is not None:
                names = [p.strip() for p in args.policies.split(",") if p.strip()]
                if not names or any(p not in POLICY_NAMES for p in names):
                    raise ConfigError(
                        f"--policies must be a comma-separated subset of "
                        f"{','.join(POLICY_NAMES)}"
                    )
                cfg["simulate"]["policies"] = names
            return cmd_simulate(cfg, args.out, args.learned_index)
        if args.horizon is not None and args.horizon <= 0:
            raise ConfigError("--horizon must be positive")
        return cmd_workload(cfg, args.out, args.gen_trace, args.horizon)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except WhittleCacheError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
