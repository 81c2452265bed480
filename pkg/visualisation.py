"""All Plotly charts for the car-following dashboard."""

from typing import Optional

import numpy as np
import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from config import REFERENCE_RMSE

# ─── Colour palette ───
MODEL_COLOURS = {
    "ovrv": "#1f77b4",
    "nn": "#ff7f0e",
    "pinn": "#2ca02c",
    "racer": "#d62728",
}

MODEL_LABELS = {
    "ovrv": "OVRV",
    "nn": "NN",
    "pinn": "PINN",
    "racer": "RACER",
}

COMPLIANT, VIOLATING = "#2ca02c", "#d62728"
TRUTH_COLOUR = "#7f7f7f"


def _colour(name: str) -> str:
    return MODEL_COLOURS.get(name, "#9467bd")


def _label(name: str) -> str:
    return MODEL_LABELS.get(name, name)


def plot_trajectory(df: pd.DataFrame, title: str = "Trajectory") -> go.Figure:
    """Lead/follower speeds and spacing over time from a trajectory CSV frame."""
    fig = make_subplots(rows=2, cols=1, shared_xaxes=True, vertical_spacing=0.08,
                        subplot_titles=["Speed (m/s)", "Spacing (m)"])
    fig.add_trace(go.Scatter(x=df["t"], y=df["lead_speed"], name="Lead", line=dict(color="#17becf")), row=1, col=1)
    fig.add_trace(go.Scatter(x=df["t"], y=df["follow_speed"], name="Follower", line=dict(color="#1f77b4")), row=1, col=1)
    fig.add_trace(go.Scatter(x=df["t"], y=df["spacing"], name="Spacing", line=dict(color="#8c564b")), row=2, col=1)
    fig.update_layout(height=550, template="plotly_white", title_text=title)
    fig.update_xaxes(title_text="Time (s)", row=2, col=1)
    return fig


def plot_rollout(df: pd.DataFrame, name: str) -> go.Figure:
    """Simulated vs. observed spacing and speed for one rollout CSV frame."""
    colour = _colour(name)
    fig = make_subplots(rows=2, cols=1, shared_xaxes=True, vertical_spacing=0.08,
                        subplot_titles=["Spacing (m)", "Speed (m/s)"])
    fig.add_trace(go.Scatter(x=df["t"], y=df["spacing_true"], name="Observed spacing",
                             line=dict(color=TRUTH_COLOUR, dash="dash")), row=1, col=1)
    fig.add_trace(go.Scatter(x=df["t"], y=df["spacing_sim"], name=f"{_label(name)} spacing",
                             line=dict(color=colour)), row=1, col=1)
    fig.add_trace(go.Scatter(x=df["t"], y=df["speed_true"], name="Observed speed",
                             line=dict(color=TRUTH_COLOUR, dash="dash")), row=2, col=1)
    fig.add_trace(go.Scatter(x=df["t"], y=df["speed_sim"], name=f"{_label(name)} speed",
                             line=dict(color=colour)), row=2, col=1)
    fig.add_hline(y=0, line_dash="dot", line_color="red", annotation_text="Collision", row=1, col=1)
    fig.update_layout(height=550, template="plotly_white", title_text=f"Closed-loop rollout: {_label(name)}")
    fig.update_xaxes(title_text="Time (s)", row=2, col=1)
    return fig


def plot_rdc_scatter(df: pd.DataFrame, name: str) -> go.Figure:
    """Per-sample RDC derivatives, green where the sign condition holds and red where it fails."""
    panels = [("dv", "viol_speed", "da/dv (must be <= 0)"),
              ("ds", "viol_spacing", "da/ds (must be >= 0)"),
              ("dr", "viol_rel", "da/dr (must be >= 0)")]
    fig = make_subplots(rows=1, cols=3, subplot_titles=[p[2] for p in panels], horizontal_spacing=0.07)
    for col, (grad, flag, _) in enumerate(panels, start=1):
        bad = df[flag].astype(bool)
        for mask, colour, label in ((~bad, COMPLIANT, "Compliant"), (bad, VIOLATING, "Violating")):
            fig.add_trace(go.Scattergl(
                x=df.loc[mask, "idx"], y=df.loc[mask, grad], mode="markers",
                marker=dict(color=colour, size=3), name=label, legendgroup=label, showlegend=col == 1,
            ), row=1, col=col)
        fig.add_hline(y=0, line_color="black", line_width=1, row=1, col=col)
    n = max(len(df), 1)
    rates = ", ".join(f"{p[0]} {100.0 * df[p[1]].astype(bool).sum() / n:.1f}%" for p in panels)
    fig.update_layout(height=420, template="plotly_white",
                      title_text=f"RDC audit: {_label(name)} (violations: {rates})")
    return fig


def plot_penalty_progression(df: pd.DataFrame, name: str) -> go.Figure:
    """Training/validation loss and the three RDC penalty components per epoch."""
    fig = make_subplots(rows=1, cols=2, subplot_titles=["Loss", "RDC penalties"])
    fig.add_trace(go.Scatter(x=df["epoch"], y=df["train_loss"], name="Train loss", line=dict(color="#1f77b4")), row=1, col=1)
    fig.add_trace(go.Scatter(x=df["epoch"], y=df["val_loss"], name="Validation loss", line=dict(color="#ff7f0e")), row=1, col=1)
    for col, colour in (("p_speed", "#d62728"), ("p_spacing", "#9467bd"), ("p_rel", "#8c564b")):
        # log axis: zero penalties drop out of the plot
        y = df[col].where(df[col] > 0, np.nan)
        fig.add_trace(go.Scatter(x=df["epoch"], y=y, name=col, line=dict(color=colour)), row=1, col=2)
    fig.update_yaxes(type="log", row=1, col=1)
    fig.update_yaxes(type="log", row=1, col=2)
    fig.update_xaxes(title_text="Epoch")
    fig.update_layout(height=420, template="plotly_white", title_text=f"Training progression: {_label(name)}")
    return fig


def plot_rmse_comparison(table: pd.DataFrame) -> go.Figure:
    """Grouped bars of the three rollout RMSEs per model; crashed models are annotated instead."""
    metrics = [("rmse_accel", "Acceleration (m/s²)"), ("rmse_speed", "Speed (m/s)"), ("rmse_spacing", "Spacing (m)")]
    fig = make_subplots(rows=1, cols=3, subplot_titles=[m[1] for m in metrics])
    for col, (key, _) in enumerate(metrics, start=1):
        if key not in table:
            continue
        crashed = table["crashed"].fillna(False).astype(bool) if "crashed" in table else pd.Series(False, index=table.index)
        fig.add_trace(go.Bar(
            x=[_label(m) for m in table["model"]],
            y=table[key].where(~crashed, 0.0),
            marker_color=[_colour(m) for m in table["model"]],
            text=["crash" if c else f"{v:.3f}" for v, c in zip(table[key].fillna(0.0), crashed)],
            textposition="auto",
            showlegend=False,
        ), row=1, col=col)
    fig.update_layout(height=400, template="plotly_white", title_text="Closed-loop RMSE by model")
    return fig


def plot_reference_comparison(table: pd.DataFrame, regime: str = "min_gap",
                              metric: str = "rmse_spacing") -> Optional[go.Figure]:
    """This run's RMSE next to the field-data anchor values for the same metric."""
    anchors = REFERENCE_RMSE.get(regime)
    if anchors is None or metric not in table:
        return None
    idx = {"rmse_accel": 0, "rmse_speed": 1, "rmse_spacing": 2}[metric]
    models = [m for m in table["model"] if m in anchors]
    ours = [table.loc[table["model"] == m, metric].iloc[0] for m in models]
    anchor = [anchors[m][idx] if anchors[m] is not None else None for m in models]
    fig = go.Figure()
    fig.add_trace(go.Bar(x=[_label(m) for m in models], y=ours, name="This run", marker_color="#1f77b4"))
    fig.add_trace(go.Bar(x=[_label(m) for m in models], y=anchor, name="Field-data anchor",
                         marker_color="#aec7e8"))
    fig.update_layout(barmode="group", height=400, template="plotly_white",
                      title_text=f"{metric} vs. field-data anchors ({regime})")
    return fig
