"""CSV tables, SVG convergence plots and run metadata."""
from __future__ import annotations

import csv
import json

import numpy as np

from .adapt import AdaptiveResult, convergence_rate

COLUMNS = [
    "level",
    "dofs",
    "est_Vh",
    "err_L2_coarse",
    "err_Vh_coarse",
    "err_L2_full",
    "err_Vh_full",
    "err_L2_adjoint",
    "err_Vh_adjoint",
    "err_L2_dg",
    "err_Vh_dg",
    "newton_iters",
]

LABELS = {
    "est_Vh": "estimate",
    "err_Vh_coarse": "coarse",
    "err_Vh_full": "full scale",
    "err_Vh_adjoint": "adjoint",
    "err_Vh_dg": "dG",
    "err_L2_coarse": "coarse",
    "err_L2_full": "full scale",
    "err_L2_adjoint": "adjoint",
    "err_L2_dg": "dG",
}


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and not np.isfinite(x)) else f"{x:.15e}"


def table_rows(result: AdaptiveResult):
    for r in result.records:
        e = r.errors
        yield [
            str(r.level),
            str(r.dofs),
            _fmt(r.estimate),
            *(_fmt(e.get(k)) for k in (
                "L2_coarse", "Vh_coarse", "L2_full", "Vh_full", "L2_adjoint", "Vh_adjoint", "L2_dg", "Vh_dg"
            )),
            "" if r.newton_iters is None else str(r.newton_iters),
        ]


def write_csv(result: AdaptiveResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        w.writerows(table_rows(result))


def _columns(result):
    rows = list(table_rows(result))
    out = {}
    for j, name in enumerate(COLUMNS):
        vals = [row[j] for row in rows]
        if all(vals):
            out[name] = np.array([float(v) for v in vals])
    return out


def rates(result: AdaptiveResult, last: int = 5) -> dict:
    cols = _columns(result)
    if len(cols.get("dofs", [])) < 2:
        return {}
    return {k: convergence_rate(cols["dofs"], v, last) for k, v in cols.items() if k.startswith(("est", "err"))}


def write_plot(result: AdaptiveResult, path, title: str = "") -> None:
    """Log-log plot of the estimate and errors against ``dofs^(1/2)`` with
    the fitted rate of the last five levels in each legend entry."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "resmin"
    cols = _columns(result)
    x = np.sqrt(cols["dofs"])
    r = rates(result)
    groups = [("V_h norm", ["est_Vh", "err_Vh_coarse", "err_Vh_full", "err_Vh_adjoint", "err_Vh_dg"])]
    if any(k.startswith("err_L2") for k in cols):
        groups.append(("L2 norm", ["err_L2_coarse", "err_L2_full", "err_L2_adjoint", "err_L2_dg"]))
    fig, axes = plt.subplots(1, len(groups), figsize=(5.5 * len(groups), 4.5), squeeze=False)
    for ax, (name, keys) in zip(axes[0], groups):
        for key in keys:
            if key not in cols:
                continue
            label = LABELS[key]
            if key in r:
                label += f" (rate {r[key]:.2f})"
            ax.loglog(x, cols[key], marker="o", markersize=3, label=label)
        ax.set_xlabel("dofs$^{1/2}$")
        ax.set_title(name)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_metadata(path, **fields) -> None:
    with open(path, "w") as fh:
        json.dump(fields, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))
