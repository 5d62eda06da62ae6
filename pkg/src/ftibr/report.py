"""Output writers: time-series CSV, allocator trace, metrics JSON, manifest, SVG."""
import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PER_IBR_COLUMNS = (
    "i{k}_d_amp", "i{k}_q_amp",
    "i_m{k}_d_amp", "i_m{k}_q_amp",
    "v{k}_d_volt", "v{k}_q_volt",
    "p{k}_watt", "q{k}_var",
    "i_ref{k}_d_amp", "i_ref{k}_q_amp",
    "r_hat{k}_ohm", "beta{k}", "lyapunov{k}",
)
AGGREGATE_COLUMNS = ("sum_p_watt", "sum_q_var", "sum_p_pu", "allocator_residual_watt")
TRACE_COLUMNS = ("t_s", "iter", "node", "lambda", "nu", "p_watt", "q_var", "residual_watt")


def timeseries_header(n_ibrs):
    cols = ["t_s"]
    for k in range(1, n_ibrs + 1):
        cols.extend(c.format(k=k) for c in PER_IBR_COLUMNS)
    cols.extend(AGGREGATE_COLUMNS)
    return cols


def _fmt(x):
    # repr gives the shortest round-trip form and never depends on locale
    return repr(float(x))


def _record_row(rec, s_base):
    row = [rec.t]
    for k in range(rec.p.shape[0]):
        row.extend((
            rec.i[k, 0], rec.i[k, 1], rec.i_m[k, 0], rec.i_m[k, 1], rec.v[k, 0], rec.v[k, 1], rec.p[k], rec.q[k],
            rec.i_ref[k, 0], rec.i_ref[k, 1], rec.r_hat[k], rec.beta[k], rec.lyapunov[k],
        ))
    row.extend((rec.sum_p, rec.sum_q, rec.sum_p / s_base, rec.residual))
    return [_fmt(x) for x in row]


def _csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def timeseries_csv(result):
    cfg = result.config
    rows = (_record_row(r, cfg.s_base) for r in result.records)
    return _csv_text(timeseries_header(cfg.n_ibrs), rows)


def trace_csv(trace):
    rows = ([_fmt(t), str(it), str(node)] + [_fmt(v) for v in rest]
            for t, it, node, *rest in trace)
    return _csv_text(TRACE_COLUMNS, rows)


def metrics_json(metrics):
    return json.dumps(metrics, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _polyline(xs, ys, x0, x1, y0, y1, width, height, pad):
    sx = (width - 2 * pad) / ((x1 - x0) or 1.0)
    sy = (height - 2 * pad) / ((y1 - y0) or 1.0)
    pts = " ".join(
        f"{pad + (x - x0) * sx:.2f},{height - pad - (y - y0) * sy:.2f}" for x, y in zip(xs, ys)
    )
    return pts


def svg_chart(t, series, title, width=640, height=320, pad=40, max_points=2000):
    """Plain SVG line chart; ``series`` maps label to y-values aligned with ``t``."""
    t = np.asarray(t, dtype=float)
    stride = max(1, t.size // max_points)
    t = t[::stride]
    ys = {k: np.asarray(v, dtype=float)[::stride] for k, v in series.items()}
    lo = min(float(v.min()) for v in ys.values())
    hi = max(float(v.max()) for v in ys.values())
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{pad}" y="{pad / 2:.0f}" font-size="14" font-family="sans-serif">{title}</text>',
        f'<text x="{pad}" y="{height - 8}" font-size="11" font-family="sans-serif">'
        f't = {t[0]:.3g} .. {t[-1]:.3g} s, y = {lo:.4g} .. {hi:.4g}</text>',
    ]
    for n, (label, y) in enumerate(ys.items()):
        color = colors[n % len(colors)]
        pts = _polyline(t, y, t[0], t[-1], lo, hi, width, height, pad)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        parts.append(
            f'<text x="{width - pad - 110}" y="{pad + 14 * n}" font-size="11" '
            f'font-family="sans-serif" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def power_split_svg(result):
    cfg = result.config
    t = [r.t for r in result.records]
    series = {f"p{k + 1} (pu)": [r.p[k] / cfg.s_base for r in result.records]
              for k in range(cfg.n_ibrs)}
    series["sum p (pu)"] = [r.sum_p / cfg.s_base for r in result.records]
    return svg_chart(t, series, f"{cfg.name}: active power ({cfg.splitter})")


def current_svg(result):
    t = [r.t for r in result.records]
    series = {}
    for k in range(result.config.n_ibrs):
        series[f"i{k + 1}_d"] = [r.i[k, 0] for r in result.records]
        series[f"i{k + 1}_q"] = [r.i[k, 1] for r in result.records]
    return svg_chart(t, series, f"{result.config.name}: dq currents (A)")


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


@dataclass
class RunManifest:
    config_path: str
    out_dir: str
    tool_version: str
    wall_clock_s: float = 0.0
    files: list = field(default_factory=list)

    def add(self, path, data):
        path = Path(path)
        path.write_bytes(data)
        self.files.append({"name": path.name, "sha256": sha256_bytes(data), "bytes": len(data)})

    def verify(self):
        base = Path(self.out_dir)
        return all(
            sha256_bytes((base / f["name"]).read_bytes()) == f["sha256"] for f in self.files
        )

    def to_json(self):
        return json.dumps(
            {
                "config_path": self.config_path,
                "out_dir": self.out_dir,
                "tool_version": self.tool_version,
                "wall_clock_s": self.wall_clock_s,
                "files": self.files,
            },
            indent=2,
        ) + "\n"
