"""Render a harness trace as a two-panel figure (temperature, pin)."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from . import refvp  # noqa: E402
from .harness import read_trace  # noqa: E402


def plot_trace(trace_path, out_path, temp_column: str = refvp.TEMP_KEY,
               gpio_column: str = refvp.GPIO_KEY, t_lo: Optional[float] = refvp.DEFAULT_T_LO,
               t_up: Optional[float] = refvp.DEFAULT_T_UP, pin: int = refvp.PIN,
               title: Optional[str] = None) -> Path:
    header, rows = read_trace(trace_path)
    t = [float(r[0]) for r in rows]
    temp = [float(r[header.index(temp_column)]) for r in rows]
    gpio = [(int(r[header.index(gpio_column)]) >> pin) & 1 for r in rows]

    fig, (ax_t, ax_p) = plt.subplots(2, 1, sharex=True, figsize=(7, 4.5),
                                     gridspec_kw={"height_ratios": [3, 1]})
    ax_t.plot(t, temp, color="tab:red", lw=1.2, label="temperature")
    for level, name in ((t_up, "t_up"), (t_lo, "t_lo")):
        if level is not None:
            ax_t.axhline(level, color="0.4", ls="--", lw=0.8)
            ax_t.annotate(name, (t[0] if t else 0, level), textcoords="offset points",
                          xytext=(2, 2), fontsize=8, color="0.3")
    ax_t.set_ylabel("temperature [°C]")
    ax_t.grid(alpha=0.3)
    ax_p.step(t, gpio, where="post", color="tab:blue", lw=1.2)
    ax_p.set_ylim(-0.2, 1.2)
    ax_p.set_yticks([0, 1])
    ax_p.set_ylabel(f"pin {pin}")
    ax_p.set_xlabel("time [s]")
    ax_p.grid(alpha=0.3)
    if title:
        ax_t.set_title(title)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
