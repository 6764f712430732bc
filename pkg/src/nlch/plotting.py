"""Plot data for finished run directories.

``emit_plots`` writes whitespace-delimited ``.dat`` files with selected,
decimated columns, a gnuplot script that reads them, and matplotlib PNG
renderings of the same curves into ``<run>/plots``.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .diagnostics import EnergyLedger  # noqa: E402

MAX_ROWS = 1000

LEDGER_PLOTS = {
    "energy": ("E_eps", "E_lyap"),
    "residual": ("residual",),
    "monitors": ("theta_V", "mu_reg", "phit_Vdual", "alpha_phit_sq", "vnorm_sq"),
    "means": ("mean_phi", "mean_theta", "mean_mu", "mean_mu_bound"),
}


class PlotError(FileNotFoundError):
    pass


def _read_table(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    data = np.array([[_cell(v) for v in r] for r in body], dtype=float)
    return header, data.reshape(len(body), len(header))


def _cell(v: str) -> float:
    if v in ("True", "False"):
        return float(v == "True")
    try:
        return float(v)
    except ValueError:
        return np.nan  # text columns such as a run status


def _write_dat(path: Path, names, columns):
    with open(path, "w") as fh:
        fh.write("# " + " ".join(names) + "\n")
        for row in zip(*columns):
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def _gnuplot_block(dat: str, names, title: str, logy: bool = False, logx: bool = False) -> str:
    lines = [f"set output '{Path(dat).stem}.svg'", f"set title '{title}'", f"set xlabel '{names[0]}'"]
    lines.append("set logscale y" if logy else "unset logscale y")
    lines.append("set logscale x" if logx else "unset logscale x")
    plots = [f"'{dat}' using 1:{i + 2} with lines title '{n}'" for i, n in enumerate(names[1:])]
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def _png(path: Path, x, ys: dict, xlabel: str, logy: bool = False, logx: bool = False):
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, y in ys.items():
        ax.plot(x, y, label=name)
    ax.set_xlabel(xlabel)
    if logy:
        ax.set_yscale("log")
    if logx:
        ax.set_xscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def _positive(y):
    return bool(np.all(np.asarray(y) > 0))


def emit_plots(run_dir, stride: int | None = None) -> list[Path]:
    """Write plot data, a gnuplot stub and PNGs; returns the written paths."""
    run_dir = Path(run_dir)
    ledger_path = run_dir / "ledger.csv"
    limit_path = run_dir / "limit_study.csv"
    sweep_path = run_dir / "sweep.csv"
    contdep_path = run_dir / "contdep_curves.csv"
    oracle_path = run_dir / "oracle_check.csv"
    sources = [p for p in (ledger_path, limit_path, sweep_path, contdep_path, oracle_path) if p.is_file()]
    if not sources:
        raise PlotError(f"{run_dir}: no ledger or study table to plot")

    # read everything before the first write so a bad input leaves no partial output
    tables = {}
    if ledger_path.is_file():
        led = EnergyLedger.from_csv(ledger_path)
        if len(led) == 0:
            raise PlotError(f"{ledger_path} has no rows")
        s = stride or max(1, -(-len(led) // MAX_ROWS))
        tables["ledger"] = led.decimate(s)
    for key, path in (("limit", limit_path), ("sweep", sweep_path), ("contdep", contdep_path),
                      ("oracle", oracle_path)):
        if path.is_file():
            tables[key] = _read_table(path)

    out = run_dir / "plots"
    out.mkdir(exist_ok=True)
    written, script = [], ["set terminal svg size 800,500"]
    if "ledger" in tables:
        led = tables["ledger"]
        for name, cols in LEDGER_PLOTS.items():
            dat = out / f"{name}.dat"
            _write_dat(dat, ["t", *cols], [led.t, *(led[c] for c in cols)])
            logy = name == "monitors" and all(_positive(led[c]) for c in cols)
            script.append(_gnuplot_block(dat.name, ["t", *cols], name, logy=logy))
            png = out / f"{name}.png"
            _png(png, led.t, {c: led[c] for c in cols}, "t", logy=logy)
            written += [dat, png]
    if "limit" in tables:
        header, data = tables["limit"]
        eps, gap = data[:, header.index("epsilon")], data[:, header.index("gap")]
        dat = out / "gap_loglog.dat"
        _write_dat(dat, ["log10_epsilon", "log10_gap"], [np.log10(eps), np.log10(gap)])
        script.append(_gnuplot_block(dat.name, ["log10_epsilon", "log10_gap"], "gap vs epsilon"))
        png = out / "gap_loglog.png"
        _png(png, eps, {"gap": gap}, "epsilon", logy=True, logx=True)
        written += [dat, png]
    if "sweep" in tables:
        header, data = tables["sweep"]
        axis = header[0]
        cols = [c for c in ("sup_theta_V", "nu3_fit", "E_eps_final") if c in header]
        dat = out / "sweep.dat"
        _write_dat(dat, [axis, *cols], [data[:, 0], *(data[:, header.index(c)] for c in cols)])
        script.append(_gnuplot_block(dat.name, [axis, *cols], f"sweep over {axis}", logx=True))
        png = out / "sweep.png"
        _png(png, data[:, 0], {c: data[:, header.index(c)] for c in cols}, axis, logx=_positive(data[:, 0]))
        written += [dat, png]
    if "contdep" in tables:
        header, data = tables["contdep"]
        t, lhs, log_rhs = data[:, 0], data[:, 1], data[:, 2]
        with np.errstate(divide="ignore"):
            log_lhs = np.log(lhs)
        dat = out / "contdep.dat"
        _write_dat(dat, ["t", "log_lhs", "log_rhs"], [t, log_lhs, log_rhs])
        script.append(_gnuplot_block(dat.name, ["t", "log_lhs", "log_rhs"], "continuous dependence"))
        png = out / "contdep.png"
        _png(png, t, {"log LHS": log_lhs, "log RHS": log_rhs}, "t")
        written += [dat, png]
    if "oracle" in tables:
        header, data = tables["oracle"]
        dat = out / "oracle_check.dat"
        _write_dat(dat, ["dt", "gap"], [data[:, 0], data[:, 1]])
        script.append(_gnuplot_block(dat.name, ["dt", "gap"], "IMEX vs oracle", logy=True, logx=True))
        png = out / "oracle_check.png"
        _png(png, data[:, 0], {"gap": data[:, 1]}, "dt", logy=_positive(data[:, 1]), logx=True)
        written += [dat, png]
    gp = out / "plot.gp"
    gp.write_text("\n".join(script))
    written.append(gp)
    return written
