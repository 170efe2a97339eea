"""Static SVG charts of sweeps, zero-current fluxes and profiles"""
import logging
from typing import List, Optional

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

plt.rcParams["font.family"] = "DejaVu Sans"
plt.rcParams["svg.hashsalt"] = "ionflux"

logger = logging.getLogger(__name__)


def sign_changes(x, y) -> List[float]:
    """Linearly interpolated zero crossings of y(x); exact zeros count once"""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    keep = np.isfinite(x) & np.isfinite(y)
    x, y = x[keep], y[keep]
    crossings = []
    for i in range(len(x) - 1):
        if y[i] == 0.0:
            crossings.append(float(x[i]))
        elif y[i] * y[i + 1] < 0:
            crossings.append(float(x[i] - y[i] * (x[i + 1] - x[i]) / (y[i + 1] - y[i])))
    if len(y) and y[-1] == 0.0:
        crossings.append(float(x[-1]))
    return crossings


class Plotter:
    def __init__(self):
        self.colors = {"phi": "#1f2937", "c1": "#dc2626", "c2": "#2563eb", "formula": "#dc2626", "solver": "#2563eb"}

    def _style(self, ax, title: str, xlabel: str, ylabel: str):
        ax.set_title(title, fontsize=14, fontweight="bold", color="#1f2937")
        ax.set_xlabel(xlabel, fontsize=11)
        ax.set_ylabel(ylabel, fontsize=11)
        ax.grid(True, alpha=0.3, color="#6b7280")
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)

    def iv_curve(self, frame: pd.DataFrame, parameter: str, d: float):
        """Current I = I0 + d*I1 against the swept parameter, one marker per zero crossing"""
        try:
            fig, ax = plt.subplots(figsize=(8, 5))
            x = frame[parameter].to_numpy(dtype=float)
            current = (frame["I0"] + d * frame["I1"]).to_numpy(dtype=float)
            ax.plot(x, current, marker="o", markersize=3, linewidth=2, color=self.colors["phi"], label="I")
            ax.axhline(0.0, color="#9ca3af", linewidth=1)
            for x0 in sign_changes(x, current):
                ax.plot([x0], [0.0], marker="D", markersize=8, color=self.colors["c1"], linestyle="none")
            self._style(ax, "Current-voltage relation", parameter, "I")
            fig.tight_layout()
            return fig
        except Exception as e:
            logging.error(f"I-V chart error: {str(e)}")
            raise

    def zero_current_flux(self, frame: pd.DataFrame):
        """J11 from the closed form and from the solver against V"""
        try:
            fig, ax = plt.subplots(figsize=(8, 5))
            ax.plot(frame["V"], frame["J11_formula"], linewidth=2, color=self.colors["formula"], label="closed form")
            if "J11_solver" in frame and frame["J11_solver"].notna().any():
                ax.plot(frame["V"], frame["J11_solver"], linestyle="none", marker="o", markersize=4,
                        color=self.colors["solver"], label="matching solver")
            ax.axhline(0.0, color="#9ca3af", linewidth=1)
            ax.legend(frameon=False)
            self._style(ax, "Zero-current first-order flux", "V", "J11")
            fig.tight_layout()
            return fig
        except Exception as e:
            logging.error(f"Zero-current chart error: {str(e)}")
            raise

    def profile(self, frame: pd.DataFrame, a: float, b: float, zoom: Optional[float] = 0.05):
        """phi, c1, c2 against x with the junctions marked and an inset around x = a"""
        try:
            frame = frame.sort_values("x", kind="stable")
            fig, ax = plt.subplots(figsize=(9, 5))
            for name in ("phi", "c1", "c2"):
                ax.plot(frame["x"], frame[name], linewidth=2, color=self.colors[name], label=name)
            for xj in (a, b):
                ax.axvline(xj, color="#9ca3af", linestyle="--", linewidth=1)
            ax.set_xlim(0.0, 1.0)
            ax.legend(frameon=False, loc="upper right")
            self._style(ax, "Steady-state profile", "x", "value")
            if zoom:
                inset = ax.inset_axes([0.08, 0.55, 0.35, 0.38])
                near = frame[(frame["x"] >= a - zoom) & (frame["x"] <= a + zoom)]
                for name in ("phi", "c1", "c2"):
                    inset.plot(near["x"], near[name], linewidth=1.5, color=self.colors[name])
                inset.axvline(a, color="#9ca3af", linestyle="--", linewidth=1)
                inset.set_xlim(a - zoom, a + zoom)
                inset.tick_params(labelsize=7)
            fig.tight_layout()
            return fig
        except Exception as e:
            logging.error(f"Profile chart error: {str(e)}")
            raise

    def close(self, fig):
        plt.close(fig)
