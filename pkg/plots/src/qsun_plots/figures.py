"""One figure kind per harness CSV schema.

Builders draw the file's numbers verbatim: no means, fits or rebinned
statistics are computed here (histogram bin edges and axis transforms are
presentation).  Rendering is pyplot-free so no global state leaks between
figures, and the rc settings pin every run of the same spec to the same
bytes.
"""

import dataclasses
import math
from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .reader import EmptyData, SchemaMismatch, load_rows

__all__ = ["FigureSpec", "render", "FIGURE_KINDS"]

_RC = {
    "svg.hashsalt": "qsun-render",
    "svg.fonttype": "path",
    "font.family": "DejaVu Sans",
    "figure.autolayout": True,
}

_SERIES_COLORS = {"Bo": "tab:blue", "RL": "tab:orange", "Bt": "tab:green"}
_ORIGIN_COLORS = {"base": "tab:gray", "old": "tab:blue", "new": "tab:red"}


def _floats(rows, col):
    return np.array([float(r[col]) for r in rows])


def _patch_fractions(fig, rows):
    ax = fig.add_subplot()
    by_k = {}
    for r in rows:
        by_k.setdefault(int(r["k"]), []).append(r)
    for k, part in sorted(by_k.items()):
        ax.errorbar(_floats(part, "scale"), _floats(part, "fraction"),
                    yerr=_floats(part, "se"), marker="o", capsize=3, label=f"size {k}")
    ax.set_xlabel("scale")
    ax.set_ylabel("ensemble fraction of levels")


def _genealogy_events(fig, rows):
    ax = fig.add_subplot()
    steps = _floats(rows, "step")
    ax.plot(steps, _floats(rows, "A_holds"), marker="o", label="separation holds")
    ax.plot(steps, _floats(rows, "G_holds"), marker="s", label="gap event holds")
    ax.set_xlabel("step")
    ax.set_ylabel("ensemble fraction")
    ax.set_ylim(-0.05, 1.05)
    twin = ax.twinx()
    twin.bar(steps, _floats(rows, "new_patches"), width=0.5, alpha=0.3,
             color="tab:red", label="new patches (mean)")
    twin.set_ylabel("new patches per step")


def _antires(fig, rows):
    ax = fig.add_subplot()
    ax.errorbar(_floats(rows, "scale"), _floats(rows, "hit_fraction"),
                yerr=_floats(rows, "se"), marker="o", capsize=3)
    ax.set_xlabel("scale")
    ax.set_ylabel("antiresonant fraction")


def _localization(fig, rows):
    left, right = fig.subplots(1, 2)
    cuts = _floats(rows, "ell")
    comp = 1.0 - _floats(rows, "tail_overlap")
    pos = comp > 0
    if np.any(pos):
        left.scatter(cuts[pos], comp[pos], s=6, alpha=0.25)
        left.set_yscale("log")
    else:
        left.scatter(cuts, comp, s=6, alpha=0.25)
    left.set_xlabel("cut")
    left.set_ylabel("1 - tail overlap")
    right.hist(_floats(rows, "ipr"), bins=40, color="tab:blue")
    right.set_xlabel("participation number")
    right.set_ylabel("eigenvectors")


def _perturb_check(fig, rows):
    ax = fig.add_subplot()
    for series, color in _SERIES_COLORS.items():
        part = [r for r in rows if r["series"] == series]
        if not part:
            continue
        k = _floats(part, "k")
        ax.scatter(k - 0.1, _floats(part, "coeff_norm"), s=14, color=color,
                   label=f"{series} norm")
        ax.scatter(k + 0.1, _floats(part, "bound"), s=20, facecolors="none",
                   edgecolors=color, label=f"{series} bound")
    bad = [r for r in rows if r["ok"] == "0"]
    if bad:
        ax.scatter(_floats(bad, "k"), _floats(bad, "coeff_norm"), s=40,
                   marker="x", color="red", label="violation")
    ax.set_yscale("log")
    ax.set_xlabel("expansion order")
    ax.set_ylabel("operator norm")


def _laplace(fig, rows):
    ax = fig.add_subplot()
    x = np.arange(len(rows))
    ax.bar(x, _floats(rows, "estimate"), yerr=3.0 * _floats(rows, "se"),
           capsize=4, color="tab:blue", alpha=0.8, label="estimate (3 SE)")
    ax.plot(x, _floats(rows, "reference"), "k_", markersize=18, label="reference")
    ax.set_xticks(x, [r["phi_id"] for r in rows], rotation=30, ha="right")
    ax.set_ylabel("Laplace functional")


def _dos(fig, rows):
    ax = fig.add_subplot()
    x = np.arange(len(rows))
    ax.bar(x, _floats(rows, "mean"), yerr=3.0 * _floats(rows, "se"),
           capsize=4, color="tab:blue", alpha=0.8, label="mean count (3 SE)")
    ax.set_xticks(x, [r["interval"] for r in rows])
    ax.set_xlabel("rescaled interval")
    ax.set_ylabel("mean point count")


def _rstat(fig, rows):
    ax = fig.add_subplot()
    ax.errorbar(_floats(rows, "alpha"), _floats(rows, "mean"),
                yerr=_floats(rows, "se"), marker="o", capsize=3, linestyle="none")
    ax.axhline(2.0 * math.log(2.0) - 1.0, color="tab:gray", linestyle="--",
               label="Poisson")
    ax.set_xlabel("coupling")
    ax.set_ylabel("mean gap ratio")


def _probes_factorization(fig, rows):
    ax = fig.add_subplot()
    x = np.arange(len(rows))
    w = 0.35
    ax.bar(x - w / 2, _floats(rows, "joint"), w, yerr=_floats(rows, "mc_err"),
           capsize=4, label="joint")
    ax.bar(x + w / 2, _floats(rows, "product"), w, label="marginal product")
    ax.set_xticks(x, [f"m={r['m']}, k={r['k']}" for r in rows])
    ax.set_ylabel("hit probability")


def _probes_lclt(fig, rows):
    ax = fig.add_subplot()
    ax.plot(_floats(rows, "n"), _floats(rows, "scaled_sup"), marker="o")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("convolution order")
    ax.set_ylabel("sqrt(n) * sup distance to Gaussian")


def _probes_gaps(fig, rows):
    ax = fig.add_subplot()
    dmin, dplus = _floats(rows, "dmin"), _floats(rows, "dplus")
    pos = (dmin > 0) & (dplus > 0)
    ax.scatter(dmin[pos], dplus[pos], s=12)
    if np.any(pos):
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel("smallest gap")
    ax.set_ylabel("smallest anti-gap")


def _dissolve_trace(fig, rows):
    ax = fig.add_subplot()
    for origin, color in _ORIGIN_COLORS.items():
        part = [r for r in rows if r["origin"] == origin]
        if not part:
            continue
        ax.scatter(_floats(part, "scale"), _floats(part, "size"), s=14,
                   alpha=0.5, color=color, label=origin)
    ax.set_yscale("log", base=2)
    ax.set_xlabel("scale")
    ax.set_ylabel("patch size")


_BUILDERS = {
    "patch_fractions": _patch_fractions,
    "genealogy_events": _genealogy_events,
    "antires": _antires,
    "localization": _localization,
    "perturb_check": _perturb_check,
    "laplace": _laplace,
    "dos": _dos,
    "rstat": _rstat,
    "probes_factorization": _probes_factorization,
    "probes_lclt": _probes_lclt,
    "probes_gaps": _probes_gaps,
    "dissolve_trace": _dissolve_trace,
}

FIGURE_KINDS = tuple(_BUILDERS)

_WIDE = {"localization"}


@dataclasses.dataclass(frozen=True)
class FigureSpec:
    """What to draw: input CSVs, the figure kind, and presentation options.

    `kind` may be omitted and is then inferred from the CSV header; when
    given it must match the header.  `out` names the image stem, a .png or
    .svg suffix is stripped and both formats are written next to it.
    """

    csv: tuple[str, ...]
    out: str
    kind: str | None = None
    title: str | None = None
    xlabel: str | None = None
    ylabel: str | None = None
    legend: bool = True
    dpi: int = 150

    def __post_init__(self):
        if isinstance(self.csv, (str, Path)):
            object.__setattr__(self, "csv", (str(self.csv),))
        else:
            object.__setattr__(self, "csv", tuple(str(p) for p in self.csv))
        if self.kind is not None and self.kind not in _BUILDERS:
            raise SchemaMismatch(
                f"unknown figure kind '{self.kind}', expected one of {', '.join(FIGURE_KINDS)}"
            )
        if self.dpi < 30 or self.dpi > 600:
            raise ValueError(f"dpi {self.dpi} outside [30, 600]")


_SPEC_KEYS = {f.name for f in dataclasses.fields(FigureSpec)}


def spec_from_mapping(d: dict) -> FigureSpec:
    unknown = set(d) - _SPEC_KEYS
    if unknown:
        raise ValueError(f"unknown spec keys: {', '.join(sorted(unknown))}")
    if "csv" not in d or "out" not in d:
        raise ValueError("spec needs 'csv' and 'out'")
    return FigureSpec(**d)


def render(spec: FigureSpec) -> tuple[Path, Path]:
    """Draw the figure and write deterministic PNG and SVG siblings."""
    kind, rows = load_rows(spec.csv, spec.kind)
    stem = Path(spec.out)
    if stem.suffix in (".png", ".svg"):
        stem = stem.with_suffix("")
    stem.parent.mkdir(parents=True, exist_ok=True)

    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(9.0, 4.0) if kind in _WIDE else (7.0, 4.5), dpi=spec.dpi)
        _BUILDERS[kind](fig, rows)
        ax = fig.axes[0]
        ax.set_title(spec.title if spec.title is not None else kind)
        if spec.xlabel is not None:
            ax.set_xlabel(spec.xlabel)
        if spec.ylabel is not None:
            ax.set_ylabel(spec.ylabel)
        if spec.legend:
            for a in fig.axes:
                handles, labels = a.get_legend_handles_labels()
                if labels:
                    a.legend(loc="best")
        png = stem.with_suffix(".png")
        svg = stem.with_suffix(".svg")
        fig.savefig(png, format="png", metadata={"Software": "qsun-render"})
        fig.savefig(svg, format="svg", metadata={"Date": None})
    return png, svg
