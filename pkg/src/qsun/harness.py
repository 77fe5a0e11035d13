"""Deterministic ensemble runner: configuration, worker pool, CSV persistence.

One disorder realization is the unit of work.  A worker computes everything
the enabled analyses need for its realization and returns plain payloads;
the parent merges them in realization order, so output bytes are a function
of the configuration alone and never of the worker count.  Every CSV starts
with a versioned comment line naming its schema.
"""

from __future__ import annotations

import csv
import json
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .localization import localization_report
from .model import (
    Full,
    ModelParams,
    assemble,
    params_from_dict,
    params_to_dict,
    sample_disorder,
    uniform_stream,
)
from .perturbation import (
    BoundViolated,
    ContourTooClose,
    NotIsolated,
    half_step_frame,
    projected_hamiltonian_series,
    series_Bmo,
)
from .pointprocess import (
    PointProcessSample,
    TooFewLevels,
    default_test_functions,
    dos_count,
    gap_ratio,
    laplace_functional,
    mean_spacing,
    rescale,
    semi_perturbed,
)
from .probes import MultiConfiguration, free_factorization, gap_antigap, lclt_check
from .resonance import (
    antiresonance_set,
    partition_patches,
    patch_threshold,
    series_base,
    trace_genealogy,
)
from .spectral import label_ladder

ANALYSES = ("patches", "localization", "stats", "perturbation", "probes")
CSV_VERSION = "qsun-csv v1"
WORKER_ENV = "QSUN_WORKERS"
FAILURE_BUDGET = 0.01

# Ensemble-level Monte Carlo must not share Philox keys with the disorder
# streams (which use the master seed verbatim), so key derivation mixes a
# fixed odd constant per purpose.
_SEED_SALT = 0x9E3779B97F4A7C15

SCHEMAS = {
    "patch_fractions": ("scale", "k", "count", "fraction", "se"),
    "genealogy_events": ("step", "A_holds", "G_holds", "new_patches"),
    "antires": ("scale", "hit_fraction", "se"),
    "localization": ("realization", "sigma", "ipr", "ell", "tail_overlap"),
    "perturb_check": ("patch_id", "series", "k", "coeff_norm", "bound", "ok"),
    "laplace": ("phi_id", "n", "alpha", "estimate", "se", "reference"),
    "dos": ("interval", "mean", "se"),
    "rstat": ("n", "alpha", "mean", "se"),
    "probes_factorization": ("m", "k", "joint", "product", "mc_err"),
    "probes_lclt": ("n", "scaled_sup"),
    "probes_gaps": ("realization", "dmin", "dplus"),
    "dissolve_trace": ("scale", "patch", "size", "width", "v", "origin", "A_holds", "G_holds"),
}

_FILES_BY_ANALYSIS = {
    "patches": ("patch_fractions", "genealogy_events", "antires"),
    "localization": ("localization",),
    "stats": ("laplace", "dos", "rstat"),
    "perturbation": ("perturb_check",),
    "probes": ("probes_factorization", "probes_lclt", "probes_gaps"),
}


class ConfigError(ValueError):
    """Configuration rejected before any work starts."""


def _derived_seed(master_seed: int, tag: int) -> int:
    return (master_seed ^ (_SEED_SALT * tag)) % (1 << 64)


@dataclass(frozen=True)
class RunConfig:
    """Validated description of one ensemble run.

    Fields beyond the model parameters stay close to the analysis functions
    they feed: `window`/`offset` go to the rescaling, `cuts` picks the tail
    cuts written per eigenvector, `order`/`nodes`/`patch_budget` govern the
    projector-series check, `split` the semi-perturbed comparison spectrum,
    and the `lclt_*`/`factor_*` knobs the ensemble-independent probes.
    """

    params: ModelParams
    realizations: int = 1
    analyses: tuple = ANALYSES
    out_dir: str = "qsun-out"
    workers: int = 1
    window: float = 25.0
    offset: float = 0.0
    scale_window: tuple | None = None
    cuts: tuple | None = None
    dos_intervals: tuple = ((-1.0, 1.0),)
    order: int = 4
    nodes: int = 256
    patch_budget: int = 50
    split: int | None = None
    lclt_ns: tuple = (4, 16, 64, 256)
    lclt_step: float = 1e-3
    factor_m: int = 400
    factor_k: int = 2
    factor_trials: int = 200_000

    def __post_init__(self) -> None:
        p = self.params
        if not isinstance(p, ModelParams):
            raise ConfigError("params must be a ModelParams value")
        put = lambda name, val: object.__setattr__(self, name, val)

        if int(self.realizations) < 1:
            raise ConfigError(f"realizations must be at least 1, got {self.realizations}")
        put("realizations", int(self.realizations))

        names = tuple(self.analyses)
        for a in names:
            if a not in ANALYSES:
                raise ConfigError(f"unknown analysis {a!r}; valid names: {', '.join(ANALYSES)}")
        put("analyses", tuple(a for a in ANALYSES if a in names))

        put("out_dir", str(self.out_dir))
        if int(self.workers) < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")
        put("workers", int(self.workers))

        if not (math.isfinite(self.window) and self.window > 0):
            raise ConfigError(f"window must be a positive number, got {self.window}")
        put("window", float(self.window))
        if not math.isfinite(self.offset):
            raise ConfigError(f"offset must be finite, got {self.offset}")
        put("offset", float(self.offset))

        if self.scale_window is not None:
            lo, hi = (int(v) for v in self.scale_window)
            if not (p.n_B <= lo <= hi <= p.n):
                raise ConfigError(
                    f"scale_window must satisfy {p.n_B} <= lo <= hi <= {p.n}, got ({lo}, {hi})"
                )
            put("scale_window", (lo, hi))

        if self.cuts is not None:
            cuts = tuple(sorted(int(c) for c in self.cuts))
            if not cuts:
                raise ConfigError("cuts must be a non-empty list of cut sites, or omitted")
            for c in cuts:
                if not (p.n_B + 1 <= c <= p.n):
                    raise ConfigError(f"cuts must lie in [{p.n_B + 1}, {p.n}], got {c}")
            put("cuts", cuts)

        ivs = tuple((float(a), float(b)) for a, b in self.dos_intervals)
        if not ivs:
            raise ConfigError("dos_intervals must hold at least one interval")
        for a, b in ivs:
            if not (math.isfinite(a) and math.isfinite(b) and a < b):
                raise ConfigError(f"dos interval endpoints must be finite and ordered, got ({a}, {b})")
        put("dos_intervals", ivs)

        if int(self.order) < 1:
            raise ConfigError(f"order must be at least 1, got {self.order}")
        put("order", int(self.order))
        if int(self.nodes) < 8:
            raise ConfigError(f"nodes must be at least 8, got {self.nodes}")
        put("nodes", int(self.nodes))
        if int(self.patch_budget) < 0:
            raise ConfigError(f"patch_budget must be non-negative, got {self.patch_budget}")
        put("patch_budget", int(self.patch_budget))

        if self.split is not None:
            s = int(self.split)
            if not (p.n_B <= s < p.n):
                raise ConfigError(f"split must lie in [{p.n_B}, {p.n}), got {s}")
            put("split", s)

        ns = tuple(int(v) for v in self.lclt_ns)
        if not ns or any(v < 1 for v in ns):
            raise ConfigError(f"lclt_ns must hold positive orders, got {self.lclt_ns}")
        if any(a >= b for a, b in zip(ns, ns[1:])):
            raise ConfigError(f"lclt_ns must be strictly increasing, got {self.lclt_ns}")
        put("lclt_ns", ns)

        step = float(self.lclt_step)
        w = int(round(0.5 / step)) if step > 0 else 0
        if w < 1 or abs(w * step - 0.5) > 1e-9 * step:
            raise ConfigError(f"lclt_step must divide the half-unit box evenly, got {self.lclt_step}")
        put("lclt_step", step)

        for name in ("factor_m", "factor_k", "factor_trials"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
            put(name, int(getattr(self, name)))


_CONFIG_KEYS = (
    "realizations", "analyses", "out_dir", "workers", "window", "offset",
    "scale_window", "cuts", "dos_intervals", "order", "nodes", "patch_budget",
    "split", "lclt_ns", "lclt_step", "factor_m", "factor_k", "factor_trials",
)


def config_to_dict(config: RunConfig) -> dict:
    out = {"params": params_to_dict(config.params)}
    for key in _CONFIG_KEYS:
        val = getattr(config, key)
        if isinstance(val, tuple):
            val = [list(v) if isinstance(v, tuple) else v for v in val]
        out[key] = val
    return out


def config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    if "params" not in d:
        raise ConfigError("config needs a params section (n, alpha, theta, master_seed)")
    unknown = sorted(set(d) - set(_CONFIG_KEYS) - {"params"})
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        params = params_from_dict(d["params"])
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(f"params: {e}") from e
    kwargs = {k: d[k] for k in _CONFIG_KEYS if k in d and d[k] is not None}
    return RunConfig(params=params, **kwargs)


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2) + "\n")


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# per-realization work
# ---------------------------------------------------------------------------

def _perturb_payload(config: RunConfig, disorder, r: int, ladder) -> dict:
    """Projector-series rows for the size->=2 patches one scale below the top."""
    params = config.params
    n = params.n
    if ladder is not None and (n - 1) in ladder.spectra:
        prev = ladder.spectra[n - 1].values
    else:
        prev = np.linalg.eigvalsh(assemble(params, disorder, Full(n - 1)))
    parts = partition_patches(prev, patch_threshold(params.alpha, params.theta, n - 1))
    h = float(disorder.h[n - 1])
    rows, skips = [], []
    frames = 0
    for i in range(parts.count):
        if frames >= config.patch_budget or parts.sizes[i] < 2:
            continue
        for mu in (1, -1):
            if frames >= config.patch_budget:
                break
            patch_id = f"{r}:{i}:{mu:+d}"
            lo = float(parts.los[i]) + mu * h
            hi = float(parts.his[i]) + mu * h
            try:
                frame = half_step_frame(params, disorder, lo, hi, nodes=config.nodes)
                bmo, _ = series_Bmo(frame, config.order)
                series = projected_hamiltonian_series(frame, bmo, config.order)
            except (ContourTooClose, BoundViolated, NotIsolated) as e:
                skips.append((patch_id, f"{type(e).__name__}: {e}"))
                continue
            frames += 1
            for k in range(1, config.order + 1):
                for kind, norm, env in (
                    ("Bo", float(np.linalg.norm(bmo[k - 1], 2)), frame.env_bmo**k),
                    ("RL", float(series.rl_norms[k - 1]), frame.env_rl**k),
                    ("Bt", float(series.coeff_norms[k - 1]), frame.env_bt**k),
                ):
                    rows.append((patch_id, kind, k, norm, env, int(norm <= env)))
    return {"rows": rows, "skips": skips}


def _realize(config: RunConfig, r: int) -> dict:
    params = config.params
    disorder = sample_disorder(params, r)
    enabled = set(config.analyses)

    ladder = None
    if enabled & {"patches", "localization", "stats", "probes"}:
        want = {params.n} if "localization" in enabled else ()
        ladder = label_ladder(params, disorder, want_vectors=want)
    trace = None
    if enabled & {"patches", "localization"}:
        trace = trace_genealogy(ladder)

    out = {}
    if "patches" in enabled:
        scales = sorted(trace.partitions)
        lo, hi = config.scale_window or (scales[0], scales[-1])
        out["patches"] = {
            "sizes": {
                m: trace.partitions[m].size_counts() for m in scales if lo <= m <= hi
            },
            "steps": [
                (s.m, bool(s.A_holds), bool(s.G_holds), int(s.new_count))
                for s in trace.steps
                if lo <= s.m < hi
            ],
            "antires": {
                m: float(antiresonance_set(ladder.spectrum(m), params.alpha, params.theta).hit_fraction)
                for m in scales
                if lo <= m <= hi
            },
        }

    if "localization" in enabled:
        a_flags = {s.m: bool(s.A_holds) for s in trace.steps}
        report = localization_report(ladder, a_flags)
        cuts = config.cuts or tuple(report.cut_values())
        out["localization"] = {
            "labels": report.labels,
            "iprs": report.iprs,
            "cuts": cuts,
            "tails": {ell: report.tail(ell) for ell in cuts},
        }

    if "stats" in enabled:
        direct = rescale(
            ladder.spectrum(params.n).values, params.n,
            realization=r, window=config.window, offset=config.offset,
        )
        semi = semi_perturbed(ladder, params, split=config.split)
        semi_sample = rescale(
            semi.sorted_values, params.n,
            realization=r, window=config.window, offset=config.offset,
        )
        out["stats"] = {
            "direct": (direct.points, direct.energies),
            "semi": (semi_sample.points, semi_sample.energies),
        }

    if "perturbation" in enabled:
        out["perturbation"] = _perturb_payload(config, disorder, r, ladder)

    if "probes" in enabled:
        g = gap_antigap(ladder.spectrum(params.n).values)
        out["probes"] = {"gap": (float(g.dmin), float(g.dplus))}

    return out


def _worker(task) -> tuple:
    """Top-level so process pools can pickle it; one realization per call.

    A failure inside one realization is returned as data, never raised: the
    run continues and the manifest records the index.
    """
    cfg_dict, r = task
    try:
        config = config_from_dict(cfg_dict)
        return r, "ok", _realize(config, r)
    except Exception as e:  # noqa: BLE001 - crash isolation is the contract
        return r, "err", f"{type(e).__name__}: {e}"


# ---------------------------------------------------------------------------
# CSV plumbing
# ---------------------------------------------------------------------------

def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def write_csv(path, schema: str, rows) -> int:
    """Write rows under a versioned schema header; returns the row count."""
    header = SCHEMAS[schema]
    count = 0
    with open(path, "w", newline="") as fh:
        fh.write(f"# {CSV_VERSION} schema={schema}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(x) for x in row])
            count += 1
    return count


def read_csv(path) -> tuple[str, list[dict]]:
    """Read back a harness CSV; returns (schema name, rows as dicts of strings)."""
    with open(path, newline="") as fh:
        head = fh.readline().strip()
        prefix = f"# {CSV_VERSION} schema="
        if not head.startswith(prefix):
            raise ValueError(f"{path} lacks the versioned schema header")
        schema = head[len(prefix):]
        return schema, list(csv.DictReader(fh))


def _mean_se(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return mean, se


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def _patches_rows(payloads) -> dict:
    per_scale, steps, antires = {}, {}, {}
    for _, p in payloads:
        for m, counts in p["sizes"].items():
            per_scale.setdefault(m, []).append(counts)
        for m, a, g, new in p["steps"]:
            steps.setdefault(m, []).append((a, g, new))
        for m, frac in p["antires"].items():
            antires.setdefault(m, []).append(frac)

    fraction_rows = []
    for m in sorted(per_scale):
        dicts = per_scale[m]
        totals = [sum(d.values()) for d in dicts]
        for k in sorted(set().union(*dicts)):
            fracs = [d.get(k, 0) / t for d, t in zip(dicts, totals)]
            mean, se = _mean_se(fracs)
            fraction_rows.append((m, k, sum(d.get(k, 0) for d in dicts), mean, se))

    step_rows = []
    for m in sorted(steps):
        trio = steps[m]
        step_rows.append((
            m,
            float(np.mean([t[0] for t in trio])),
            float(np.mean([t[1] for t in trio])),
            float(np.mean([t[2] for t in trio])),
        ))

    antires_rows = []
    for m in sorted(antires):
        mean, se = _mean_se(antires[m])
        antires_rows.append((m, mean, se))

    return {
        "patch_fractions": fraction_rows,
        "genealogy_events": step_rows,
        "antires": antires_rows,
    }


def _localization_rows(payloads):
    for r, p in payloads:
        labels, iprs = p["labels"], p["iprs"]
        for i in range(labels.size):
            for ell in p["cuts"]:
                yield (r, int(labels[i]), float(iprs[i]), ell, float(p["tails"][ell][i]))


def _stats_rows(config: RunConfig, payloads, notes: list) -> dict:
    p = config.params
    spacing = mean_spacing(p.n)
    direct, semi = [], []
    for r, payload in payloads:
        for dest, key in ((direct, "direct"), (semi, "semi")):
            points, energies = payload[key]
            dest.append(PointProcessSample(
                realization=r, n=p.n, spacing=spacing, window=config.window,
                offset=config.offset, points=np.asarray(points), energies=np.asarray(energies),
            ))

    laplace_rows = []
    if direct:
        for suffix, samples in (("", direct), (":semi", semi)):
            for phi in default_test_functions():
                est = laplace_functional(samples, phi)
                laplace_rows.append(
                    (phi.label + suffix, p.n, p.alpha, est.estimate, est.se, est.reference)
                )

    dos_rows = []
    if direct:
        for lo, hi in config.dos_intervals:
            est = dos_count(direct, (lo, hi))
            dos_rows.append((f"[{lo:g},{hi:g}]", est.mean, est.se))

    rstat_rows = []
    if direct:
        try:
            est = gap_ratio(direct)
            rstat_rows.append((p.n, p.alpha, est.mean, est.se))
        except TooFewLevels as e:
            notes.append(f"rstat skipped: {e}")

    return {"laplace": laplace_rows, "dos": dos_rows, "rstat": rstat_rows}


def _perturb_rows(config: RunConfig, payloads, skipped: list) -> list:
    rows = []
    seen = []
    for r, p in payloads:
        skipped.extend({"patch_id": pid, "reason": why} for pid, why in p["skips"])
        for row in p["rows"]:
            pid = row[0]
            if pid not in seen:
                if len(seen) == config.patch_budget:
                    return rows
                seen.append(pid)
            rows.append(row)
    return rows


def _probes_rows(config: RunConfig, payloads, notes: list) -> dict:
    gap_rows = [(r, p["gap"][0], p["gap"][1]) for r, p in payloads]

    lclt = lclt_check(config.lclt_ns, config.lclt_step)
    lclt_rows = list(zip(lclt.ns, lclt.scaled_sup))

    m, k = config.factor_m, config.factor_k
    draw = uniform_stream(_derived_seed(config.params.master_seed, 1), 0, m * k)
    sigma = np.where(draw >= 0.0, 1, -1).reshape(k, m)
    width = math.sqrt(m / 12.0)
    report = free_factorization(
        MultiConfiguration(sigma),
        intervals=((0.0, width),) * k,
        trials=config.factor_trials,
        seed=_derived_seed(config.params.master_seed, 2),
    )
    factor_rows = [(report.m, report.k, report.joint, report.product, report.mc_err)]
    return {
        "probes_factorization": factor_rows,
        "probes_lclt": lclt_rows,
        "probes_gaps": gap_rows,
    }


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunResult:
    out_dir: Path
    manifest: dict
    failures: tuple

    @property
    def ok(self) -> bool:
        budget = FAILURE_BUDGET * self.manifest["realizations"]
        return len(self.failures) <= budget


def run_ensemble(config: RunConfig) -> RunResult:
    """Run every enabled analysis over the ensemble and persist the bundle.

    Writes one CSV per analysis table plus manifest.json.  Reruns with the
    same configuration produce byte-identical CSVs; the manifest differs
    only in its wall-time entry.
    """
    t0 = time.monotonic()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_dict = config_to_dict(config)
    tasks = [(cfg_dict, r) for r in range(config.realizations)]

    if config.workers == 1 or config.realizations == 1:
        raw = [_worker(t) for t in tasks]
    else:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=config.workers, mp_context=ctx) as ex:
            raw = list(ex.map(_worker, tasks))

    payloads = [(r, data) for r, status, data in raw if status == "ok"]
    failures = tuple((r, data) for r, status, data in raw if status == "err")

    notes: list = []
    skipped: list = []
    tables: dict = {}
    if "patches" in config.analyses:
        tables.update(_patches_rows([(r, p["patches"]) for r, p in payloads]))
    if "localization" in config.analyses:
        tables["localization"] = _localization_rows([(r, p["localization"]) for r, p in payloads])
    if "stats" in config.analyses:
        tables.update(_stats_rows(config, [(r, p["stats"]) for r, p in payloads], notes))
    if "perturbation" in config.analyses:
        tables["perturb_check"] = _perturb_rows(
            config, [(r, p["perturbation"]) for r, p in payloads], skipped
        )
    if "probes" in config.analyses:
        tables.update(_probes_rows(config, [(r, p["probes"]) for r, p in payloads], notes))

    files = {}
    for analysis in config.analyses:
        for schema in _FILES_BY_ANALYSIS[analysis]:
            name = f"{schema}.csv"
            files[name] = {
                "schema": schema,
                "rows": write_csv(out / name, schema, tables.get(schema, ())),
            }

    manifest = {
        "format": "qsun-manifest v1",
        "code_version": __version__,
        "config": cfg_dict,
        "wall_time_s": round(time.monotonic() - t0, 3),
        "realizations": config.realizations,
        "failures": [{"realization": r, "error": msg} for r, msg in failures],
        "skipped_patches": skipped,
        "notes": notes,
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return RunResult(out_dir=out, manifest=manifest, failures=failures)


def dissolve_trace(config: RunConfig, realization: int) -> Path:
    """Per-(scale, patch) narrative of one realization's patch genealogy.

    Each row carries the patch hull data plus the separation and gap flags
    of the step that produced its scale; base-scale rows leave them blank.
    """
    if realization < 0:
        raise ConfigError(f"realization must be non-negative, got {realization}")
    params = config.params
    disorder = sample_disorder(params, realization)
    ladder = label_ladder(params, disorder)
    trace = trace_genealogy(ladder)
    la = math.log(series_base(params.alpha, params.theta))
    step_into = {s.m + 1: s for s in trace.steps}

    rows = []
    for m in sorted(trace.nodes):
        step = step_into.get(m)
        for node in trace.nodes[m]:
            width = node.hi - node.lo
            v = ""
            if width > 1e-15 and la != 0.0:
                v = math.log(width) / (m * la)
            rows.append((
                m, node.index, node.size, width, v, node.origin,
                "" if step is None else int(step.A_holds),
                "" if step is None else int(step.G_holds),
            ))

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"dissolve_trace_r{realization}.csv"
    write_csv(path, "dissolve_trace", rows)
    return path
