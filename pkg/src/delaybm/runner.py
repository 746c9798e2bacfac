"""Run configuration, scenario sweeps and output collation.

Configurations are TOML files with the sections ``run``, ``topology``,
``buffer``, ``policy``, ``transport``, ``workload`` and ``steady``. Every
section and key is optional; unknown keys are rejected so that a typo never
silently falls back to a default.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

from . import metrics
from .analytics import CrossCheckReport, Tolerances, cross_check
from .net import GBPS, TopologySpec
from .policies import SCHEMES, ConfigError
from .scenario import CellSpec, run_cell
from .steady import PersistentCongestion, run_persistent
from .transport import TRANSPORTS
from .workload import FlowSizeCdf, WorkloadError, websearch_cdf

log = logging.getLogger(__name__)

BUFFER_PRESETS: Dict[str, float] = {"trident2": 9.6, "tomahawk": 6.0, "tofino": 5.12}
OUTPUT_ROOT_ENV = "DELAYBM_OUTPUT_ROOT"
POLICY_PARAM_KEYS = ("fab_cutoff_bytes", "fab_boost", "ib_tolerance", "ib_table_size", "abm_mu_min")


# ---------------------------------------------------------------- config types

@dataclass(frozen=True)
class RunSection:
    name: str = "desk"
    seeds: Tuple[int, ...] = (1, 2, 3)
    duration_ms: float = 100.0
    drain_ms: float = 50.0
    output_dir: str = ""


@dataclass(frozen=True)
class TopologySection:
    spines: int = 2
    leaves: int = 4
    hosts_per_leaf: int = 16
    host_link_gbps: float = 1.0
    uplink_gbps: float = 2.0
    propagation_us: float = 10.0
    oversubscription: float = 4.0

    def spec(self) -> TopologySpec:
        return TopologySpec(self.spines, self.leaves, self.hosts_per_leaf, _gbps(self.host_link_gbps),
                            _gbps(self.uplink_gbps), int(round(self.propagation_us * 1000)), self.oversubscription)


@dataclass(frozen=True)
class BufferSection:
    # sweep entries: preset names or KB per port per Gbps
    sizes: Tuple[Any, ...] = ("trident2",)


@dataclass(frozen=True)
class PolicySection:
    schemes: Tuple[str, ...] = ("delay-bm", "dt", "cs")
    alphas: Tuple[float, ...] = (0.5,)  # indexed by priority class
    min_bytes: int = 1500
    congestion_fraction: float = 0.9
    congestion_reference: str = "threshold"
    update_period_us: float = 0.0  # 0: base RTT of the longest path
    first_rtt_schemes: Tuple[str, ...] = ("delay-bm",)
    first_rtt_alpha_factor: float = 2.0
    fab_cutoff_bytes: int = 100_000
    fab_boost: float = 4.0
    ib_tolerance: float = 2.0
    ib_table_size: int = 64
    abm_mu_min: float = 0.01


@dataclass(frozen=True)
class TransportSection:
    per_priority: Tuple[str, ...] = ("dctcp",)
    init_cwnd_packets: int = 10
    dctcp_g: float = 0.0625
    min_rto_us: float = 1000.0
    ecn_k_packets: int = 65


@dataclass(frozen=True)
class WorkloadSection:
    loads: Tuple[float, ...] = (0.4,)
    bursts: Tuple[float, ...] = (0.3,)
    websearch_cdf: str = ""
    incast_fanout: int = 8
    incast_requests_per_second: float = 2.0
    incast_cross_leaf: bool = True
    incast_priority: int = 0
    short_flow_cutoff: int = 100_000


@dataclass(frozen=True)
class SteadySection:
    total_bytes: int = 983_040
    capacity_gbps: float = 10.0
    alphas: Tuple[float, ...] = (0.25, 0.5, 1.0, 2.0)
    duration_ms: float = 5.0
    overload: float = 0.001
    update_period_us: float = 20.0
    relative_tolerance_fluid: float = 0.01
    relative_tolerance_packet: float = 0.05


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = RunSection()
    topology: TopologySection = TopologySection()
    buffer: BufferSection = BufferSection()
    policy: PolicySection = PolicySection()
    transport: TransportSection = TransportSection()
    workload: WorkloadSection = WorkloadSection()
    steady: SteadySection = SteadySection()

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        out: Dict[str, Dict[str, Any]] = {}
        for f in fields(self):
            section = asdict(getattr(self, f.name))
            out[f.name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


def _gbps(x: float) -> int:
    return int(round(x * GBPS))


def buffer_kb(entry: Any) -> float:
    if isinstance(entry, str):
        try:
            return BUFFER_PRESETS[entry]
        except KeyError:
            raise ConfigError(f"buffer.sizes: unknown preset {entry!r}; expected one of "
                              f"{', '.join(BUFFER_PRESETS)} or a number") from None
    return float(entry)


def buffer_label(entry: Any) -> str:
    return entry if isinstance(entry, str) else f"{float(entry):g}kb"


# ---------------------------------------------------------------- parsing

_SECTION_TYPES = {"run": RunSection, "topology": TopologySection, "buffer": BufferSection,
                  "policy": PolicySection, "transport": TransportSection, "workload": WorkloadSection,
                  "steady": SteadySection}


def _coerce(path: str, default: Any, value: Any) -> Any:
    """Check ``value`` against the type of the default; lists become tuples."""
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        if default:
            proto = default[0]
            if isinstance(proto, (int, float)) and not isinstance(proto, bool):
                for i, v in enumerate(value):
                    if path == "buffer.sizes":
                        break
                    if isinstance(v, bool) or not isinstance(v, (int, float)):
                        raise ConfigError(f"{path}[{i}]: expected a number, got {v!r}")
                    if isinstance(proto, int) and not isinstance(v, int):
                        raise ConfigError(f"{path}[{i}]: expected an integer, got {v!r}")
                if isinstance(proto, float):
                    value = [float(v) for v in value]
            elif isinstance(proto, str) and path != "buffer.sizes":
                for i, v in enumerate(value):
                    if not isinstance(v, str):
                        raise ConfigError(f"{path}[{i}]: expected a string, got {v!r}")
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def config_from_dict(data: Mapping[str, Any]) -> RunConfig:
    sections = {}
    for name, value in data.items():
        if name not in _SECTION_TYPES:
            raise ConfigError(f"unknown section [{name}]; expected one of {', '.join(_SECTION_TYPES)}")
        if not isinstance(value, dict):
            raise ConfigError(f"[{name}] must be a table")
        cls = _SECTION_TYPES[name]
        defaults = cls()
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, v in value.items():
            if name == "policy" and key == "scheme":
                key, v = "schemes", [v] if isinstance(v, str) else v
            if key not in known:
                raise ConfigError(f"{name}.{key}: unknown key; expected one of {', '.join(sorted(known))}")
            kwargs[key] = _coerce(f"{name}.{key}", getattr(defaults, key), v)
        sections[name] = cls(**kwargs)
    cfg = RunConfig(**sections)
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{p}: configuration file not found")
    try:
        data = tomllib.loads(p.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from None
    return config_from_dict(data)


def _positive(path: str, x) -> None:
    if not x > 0:
        raise ConfigError(f"{path}: must be positive, got {x}")


def validate(cfg: RunConfig) -> None:
    r, t, pol, tr, w, st = cfg.run, cfg.topology, cfg.policy, cfg.transport, cfg.workload, cfg.steady
    if not r.seeds:
        raise ConfigError("run.seeds: must list at least one seed")
    if len(set(r.seeds)) != len(r.seeds):
        raise ConfigError("run.seeds: duplicate seed")
    _positive("run.duration_ms", r.duration_ms)
    if r.drain_ms < 0:
        raise ConfigError("run.drain_ms: must be non-negative")
    try:
        t.spec().validate()
    except ConfigError as exc:
        raise ConfigError(f"topology: {exc}") from None
    if not cfg.buffer.sizes:
        raise ConfigError("buffer.sizes: must not be empty")
    for entry in cfg.buffer.sizes:
        _positive("buffer.sizes", buffer_kb(entry))
    if not pol.schemes:
        raise ConfigError("policy.schemes: must not be empty")
    for s in pol.schemes + pol.first_rtt_schemes:
        if s not in SCHEMES:
            raise ConfigError(f"policy.schemes: unknown scheme {s!r}; expected one of {', '.join(SCHEMES)}")
    if not pol.alphas:
        raise ConfigError("policy.alphas: need one alpha per priority class")
    for i, a in enumerate(pol.alphas):
        _positive(f"policy.alphas[{i}]", a)
    if not 0 < pol.congestion_fraction <= 1:
        raise ConfigError("policy.congestion_fraction: must lie in (0, 1]")
    if pol.congestion_reference not in ("threshold", "buffer"):
        raise ConfigError("policy.congestion_reference: expected 'threshold' or 'buffer'")
    if pol.min_bytes < 0 or pol.update_period_us < 0 or pol.first_rtt_alpha_factor < 0:
        raise ConfigError("policy: min_bytes, update_period_us and first_rtt_alpha_factor must be >= 0")
    if len(tr.per_priority) != len(pol.alphas):
        raise ConfigError(f"transport.per_priority: {len(tr.per_priority)} entries for "
                          f"{len(pol.alphas)} priority classes")
    for kind in tr.per_priority:
        if kind not in TRANSPORTS:
            raise ConfigError(f"transport.per_priority: unknown transport {kind!r}; "
                              f"expected one of {', '.join(TRANSPORTS)}")
    if not 0 < tr.dctcp_g <= 1:
        raise ConfigError("transport.dctcp_g: must lie in (0, 1]")
    _positive("transport.init_cwnd_packets", tr.init_cwnd_packets)
    _positive("transport.min_rto_us", tr.min_rto_us)
    if not w.loads or not w.bursts:
        raise ConfigError("workload.loads and workload.bursts must not be empty")
    for x in w.loads:
        if not 0 <= x < 1:
            raise ConfigError(f"workload.loads: {x} outside [0, 1)")
    for x in w.bursts:
        if not 0 <= x <= 1:
            raise ConfigError(f"workload.bursts: {x} outside [0, 1]")
    if w.incast_fanout < 2:
        raise ConfigError("workload.incast_fanout: must be >= 2")
    if w.incast_fanout > t.spec().n_hosts - 1:
        raise ConfigError(f"workload.incast_fanout: {w.incast_fanout} responders but only "
                          f"{t.spec().n_hosts - 1} other hosts")
    if not 0 <= w.incast_priority < len(pol.alphas):
        raise ConfigError("workload.incast_priority: no such priority class")
    if w.websearch_cdf:
        if not Path(w.websearch_cdf).is_file():
            raise ConfigError(f"workload.websearch_cdf: {w.websearch_cdf} not found")
        try:
            FlowSizeCdf.from_file(w.websearch_cdf)
        except WorkloadError as exc:
            raise ConfigError(f"workload.websearch_cdf: {exc}") from None
    if not st.alphas:
        raise ConfigError("steady.alphas: must not be empty")
    _positive("steady.total_bytes", st.total_bytes)
    _positive("steady.capacity_gbps", st.capacity_gbps)


def expected_flow_count(cfg: RunConfig) -> float:
    """Expected number of flows started during one cell at the lowest load."""
    t = cfg.topology.spec()
    w = cfg.workload
    cdf = FlowSizeCdf.from_file(w.websearch_cdf) if w.websearch_cdf else websearch_cdf()
    seconds = cfg.run.duration_ms / 1000
    capacity = t.leaves * t.spines * t.uplink_bps
    web = min(w.loads) * capacity / 8 / cdf.mean() * seconds
    incast = w.incast_requests_per_second * t.n_hosts * seconds * w.incast_fanout if max(w.bursts) > 0 else 0
    return web + incast


# ---------------------------------------------------------------- matrix

@dataclass(frozen=True)
class Cell:
    scheme: str
    load: float
    burst: float
    buffer: Any
    seed: int

    @property
    def scenario(self) -> str:
        return f"load={self.load:g},burst={self.burst:g},buffer={buffer_label(self.buffer)}"

    @property
    def relpath(self) -> Path:
        return Path(self.scheme) / f"load{self.load:g}_burst{self.burst:g}_{buffer_label(self.buffer)}" / \
            f"seed{self.seed}"


@dataclass(frozen=True)
class ScenarioMatrix:
    cells: Tuple[Cell, ...]

    @classmethod
    def expand(cls, cfg: RunConfig, filters: Optional[Mapping[str, Sequence[str]]] = None) -> "ScenarioMatrix":
        combos = itertools.product(cfg.policy.schemes, cfg.workload.loads, cfg.workload.bursts,
                                   cfg.buffer.sizes, cfg.run.seeds)
        cells = [Cell(*c) for c in combos]
        for key, allowed in (filters or {}).items():
            cells = [c for c in cells if _cell_value(c, key) in allowed]
        paths = [c.relpath for c in cells]
        if len(set(paths)) != len(paths):
            raise ConfigError("scenario matrix has duplicate cells")
        return cls(tuple(cells))

    def __len__(self) -> int:
        return len(self.cells)


def _cell_value(cell: Cell, key: str) -> str:
    if key == "scheme":
        return cell.scheme
    if key == "seed":
        return str(cell.seed)
    if key == "load":
        return f"{cell.load:g}"
    if key == "burst":
        return f"{cell.burst:g}"
    if key == "buffer":
        return buffer_label(cell.buffer)
    raise ConfigError(f"--filter: unknown key {key!r}; expected scheme, load, burst, buffer or seed")


def parse_filters(items: Sequence[str]) -> Dict[str, List[str]]:
    out: Dict[str, List[str]] = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not value:
            raise ConfigError(f"--filter: expected key=value, got {item!r}")
        _cell_value(Cell("", 0, 0, 0, 0), key)  # validates the key
        out.setdefault(key, []).extend(v for v in value.split(",") if v)
    return out


def cell_spec(cfg: RunConfig, cell: Cell) -> CellSpec:
    pol, tr, w = cfg.policy, cfg.transport, cfg.workload
    params = tuple((k, getattr(pol, k)) for k in POLICY_PARAM_KEYS)
    return CellSpec(
        scheme=cell.scheme, seed=cell.seed, topology=cfg.topology.spec(),
        kb_per_port_per_gbps=buffer_kb(cell.buffer),
        alphas=tuple(enumerate(pol.alphas)), transports=tuple(enumerate(tr.per_priority)),
        load=cell.load, burst=cell.burst, incast_fanout=w.incast_fanout,
        incast_requests_per_second=w.incast_requests_per_second, incast_cross_leaf=w.incast_cross_leaf,
        incast_priority=w.incast_priority, websearch_cdf=w.websearch_cdf or None,
        duration_ns=int(round(cfg.run.duration_ms * 1e6)), drain_ns=int(round(cfg.run.drain_ms * 1e6)),
        min_bytes=pol.min_bytes, congestion_fraction=pol.congestion_fraction,
        congestion_reference=pol.congestion_reference,
        update_period_ns=int(round(pol.update_period_us * 1000)) or None,
        first_rtt_schemes=pol.first_rtt_schemes, first_rtt_alpha_factor=pol.first_rtt_alpha_factor,
        ecn_k_packets=tr.ecn_k_packets, init_cwnd_pkts=tr.init_cwnd_packets, dctcp_g=tr.dctcp_g,
        min_rto_ns=int(round(tr.min_rto_us * 1000)), short_flow_cutoff=w.short_flow_cutoff,
        policy_params=params, scenario=cell.scenario)


SUMMARY_EXTRA = ("load", "burst", "buffer")


@dataclass
class CellOutcome:
    cell: Cell
    row: Optional[Dict[str, Any]] = None
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.row is not None


def _run_one(cfg: RunConfig, cell: Cell, out_root: str) -> CellOutcome:
    out_dir = Path(out_root) / cell.relpath
    try:
        result = run_cell(cell_spec(cfg, cell))
        result.write(out_dir)
        row = result.summary_row({"load": f"{cell.load:g}", "burst": f"{cell.burst:g}",
                                  "buffer": buffer_label(cell.buffer)})
        with open(out_dir / "summary_row.json", "w") as fh:
            json.dump(row, fh, sort_keys=True)
        return CellOutcome(cell, row)
    except Exception:  # one failing cell must not take down the sweep
        out_dir.mkdir(parents=True, exist_ok=True)
        tb = traceback.format_exc()
        (out_dir / "error.txt").write_text(tb)
        return CellOutcome(cell, error=tb.strip().splitlines()[-1])


@dataclass
class MatrixResult:
    out_dir: Path
    outcomes: List[CellOutcome] = field(default_factory=list)

    @property
    def failures(self) -> List[CellOutcome]:
        return [o for o in self.outcomes if not o.ok]

    @property
    def rows(self) -> List[Dict[str, Any]]:
        return [o.row for o in self.outcomes if o.ok]


def write_summary(path: Path, rows: Sequence[Mapping[str, Any]]) -> None:
    header = metrics.summary_header(SUMMARY_EXTRA)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, header, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in header})


def default_output_dir(cfg: RunConfig) -> Path:
    if cfg.run.output_dir:
        return Path(cfg.run.output_dir)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / cfg.run.name


def run_matrix(cfg: RunConfig, out_dir: Optional[Path] = None, jobs: int = 1,
               filters: Optional[Mapping[str, Sequence[str]]] = None, cell_runner=_run_one) -> MatrixResult:
    out = Path(out_dir) if out_dir is not None else default_output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.toml").write_text(cfg.to_toml())
    matrix = ScenarioMatrix.expand(cfg, filters)
    expected = expected_flow_count(cfg)
    if expected < 1000:
        log.warning("about %.0f flows per cell at the lowest load; percentiles rest on fewer than 1000 flows",
                    expected)
    if jobs > 1 and len(matrix) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(cell_runner, cfg, c, str(out)) for c in matrix.cells]
            outcomes = []
            for c, fut in zip(matrix.cells, futures):
                try:
                    outcomes.append(fut.result())
                except Exception as exc:  # worker died
                    outcomes.append(CellOutcome(c, error=f"{type(exc).__name__}: {exc}"))
    else:
        outcomes = [cell_runner(cfg, c, str(out)) for c in matrix.cells]
    result = MatrixResult(out, outcomes)
    write_summary(out / "summary.csv", result.rows)
    fail_path = out / "failures.txt"
    if result.failures:
        fail_path.write_text("".join(f"{o.cell.relpath}: {o.error}\n" for o in result.failures))
    elif fail_path.exists():
        fail_path.unlink()
    return result


def summarize(out_dir: Path) -> Tuple[Path, List[Dict[str, Any]]]:
    """Rebuild ``summary.csv`` from the per-cell rows found under ``out_dir``."""
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise ConfigError(f"{out_dir}: not a directory")
    rows = []
    for path in sorted(out_dir.rglob("summary_row.json")):
        rows.append(json.loads(path.read_text()))
    if not rows:
        raise ConfigError(f"{out_dir}: no cell results found")
    rows.sort(key=lambda r: (r["scheme"], r["scenario"], int(r["seed"])))
    target = out_dir / "summary.csv"
    write_summary(target, rows)
    return target, rows


def median_table(rows: Sequence[Mapping[str, Any]], column: str) -> Dict[Tuple[str, str], float]:
    groups: Dict[Tuple[str, str], List[float]] = {}
    for r in rows:
        v = r.get(column, "")
        if v != "":
            groups.setdefault((r["scheme"], r["scenario"]), []).append(float(v))
    out = {}
    for key, vals in groups.items():
        vals.sort()
        n = len(vals)
        out[key] = vals[n // 2] if n % 2 else (vals[n // 2 - 1] + vals[n // 2]) / 2
    return out


# ---------------------------------------------------------------- steady state

@dataclass
class SteadyCase:
    label: str
    setup: PersistentCongestion
    tolerance: float
    report: Optional[CrossCheckReport] = None

    @property
    def passed(self) -> bool:
        return self.report is not None and (self.report.passed or
                                            (self.setup.scheme != "delay-bm" and
                                             self.report.outcome == "not applicable"))


def steady_cases(cfg: RunConfig) -> List[SteadyCase]:
    st = cfg.steady
    common = dict(total_B=st.total_bytes, capacity_bps=_gbps(st.capacity_gbps), overload=st.overload,
                  duration_ns=int(round(st.duration_ms * 1e6)),
                  update_period_ns=int(round(st.update_period_us * 1000)), min_bytes=cfg.policy.min_bytes)
    cases = []
    for a in st.alphas:
        cases.append(SteadyCase(f"fluid single queue alpha={a:g}",
                                PersistentCongestion(alphas={0: a}, fluid=True, **common),
                                st.relative_tolerance_fluid))
    cases.append(SteadyCase("packet single queue alpha=0.5",
                            PersistentCongestion(alphas={0: 0.5}, fluid=False, **common),
                            st.relative_tolerance_packet))
    cases.append(SteadyCase("packet two priorities alpha=0.5",
                            PersistentCongestion(alphas={0: 0.5, 1: 0.5}, saturated=((0, 0), (1, 1)),
                                                 fluid=False, **common),
                            st.relative_tolerance_packet))
    cases.append(SteadyCase("complete sharing (bounds do not apply)",
                            PersistentCongestion(alphas={0: 0.5}, scheme="cs", fluid=False, **common),
                            st.relative_tolerance_packet))
    return cases


def verify_steady_state(cfg: RunConfig) -> Tuple[str, bool, List[SteadyCase]]:
    cases = steady_cases(cfg)
    lines = []
    for case in cases:
        res = run_persistent(case.setup)
        case.report = cross_check(res.trace, case.setup.inputs(), Tolerances(relative=case.tolerance))
        lines.append(f"== {case.label}: {'PASS' if case.passed else 'FAIL'}")
        lines.append(case.report.to_text())
    ok = all(c.passed for c in cases)
    lines.append(f"overall: {'PASS' if ok else 'FAIL'}")
    return "\n".join(lines) + "\n", ok, cases


def with_overrides(cfg: RunConfig, **sections: Mapping[str, Any]) -> RunConfig:
    """A copy of ``cfg`` with some section fields replaced (validated)."""
    kw = {}
    for name, changes in sections.items():
        kw[name] = replace(getattr(cfg, name), **changes)
    out = replace(cfg, **kw)
    validate(out)
    return out
