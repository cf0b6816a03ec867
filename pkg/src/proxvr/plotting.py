"""Figure rendering on top of the trace CSVs.

The delimited files remain the canonical output; these helpers draw the
standard views (support size, distance with theoretical slopes, error decay)
next to them when a run is invoked with plotting enabled.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_trace_csv(path):
    """Parse a trace CSV into a dict of columns (floats, NaN for blanks)."""
    meta = {}
    rows = []
    with open(path) as f:
        header = None
        for line in f:
            line = line.rstrip("\n")
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        meta[k] = v
                continue
            if header is None:
                header = line.split(",")
                continue
            rows.append(line.split(","))
    cols = {name: [] for name in header}
    for r in rows:
        for name, val in zip(header, r):
            cols[name].append(val)
    out = {"meta": meta, "event": cols.get("event", [])}
    for name in header:
        if name == "event":
            continue
        out[name] = [float(v) if v != "" else float("nan") for v in cols[name]]
    return out


def _label(path, data):
    name = os.path.splitext(os.path.basename(path))[0]
    method = data["meta"].get("method", "")
    return f"{name}" if method in name else f"{name} ({method})"


def plot_support_csv(paths, out_png):
    fig, ax = plt.subplots(figsize=(6, 4))
    for p in paths:
        d = read_trace_csv(p)
        ax.step(d["k"], d["support_size"], where="post", label=_label(p, d))
    ax.set_xlabel("iteration k")
    ax.set_ylabel("support size")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return out_png


def plot_distance_csv(paths, out_png, rates: dict | None = None):
    """Distance to the reference on a log axis; optional dashed guide lines
    with slope log(rho) anchored at each trace's midpoint."""
    fig, ax = plt.subplots(figsize=(6, 4))
    import numpy as np
    for p in paths:
        d = read_trace_csv(p)
        k = np.asarray(d["k"])
        dist = np.asarray(d["dist_to_ref"])
        ok = np.isfinite(dist) & (dist > 0)
        ax.semilogy(k[ok], dist[ok], label=_label(p, d))
        if rates:
            for nm, rho in rates.items():
                if not (0 < rho < 1):
                    continue
                kk = k[ok]
                if kk.size < 2:
                    continue
                anchor = kk.size // 2
                guide = dist[ok][anchor] * rho ** (kk - kk[anchor])
                ax.semilogy(kk, guide, "--", linewidth=0.8,
                            label=f"{nm}^k" if p == paths[0] else None)
    ax.set_xlabel("iteration k")
    ax.set_ylabel("distance to reference")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return out_png


def plot_eps_csv(paths, out_png):
    fig, ax = plt.subplots(figsize=(6, 4))
    import numpy as np
    for p in paths:
        d = read_trace_csv(p)
        k = np.asarray(d["k"])
        eps = np.asarray(d["eps_norm"])
        ok = np.isfinite(eps) & (eps > 0)
        ax.semilogy(k[ok], eps[ok], label=_label(p, d))
    ax.set_xlabel("iteration k")
    ax.set_ylabel("stochastic error norm")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return out_png
