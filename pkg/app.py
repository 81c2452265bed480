"""Streamlit entry point for the car-following model dashboard."""

import json
from pathlib import Path

import pandas as pd
import streamlit as st

from config import REFERENCE_RMSE, GapSetting, ScenarioKind
from datagen import ScenarioSpec, generate
from domain import trajectory_frame
from report import collect, discover_models
from visualisation import (
    MODEL_LABELS,
    plot_penalty_progression,
    plot_rdc_scatter,
    plot_reference_comparison,
    plot_rmse_comparison,
    plot_rollout,
    plot_trajectory,
)

st.set_page_config(
    page_title="Car-Following Lens",
    page_icon="🚗",
    layout="wide",
    initial_sidebar_state="expanded",
)

st.title("Car-Following Lens")
st.caption("OVRV, NN, PINN and RACER controllers: closed-loop rollouts and RDC compliance")


# ── Sidebar ──
with st.sidebar:
    st.header("Run Directory")
    run_dir = Path(st.text_input("Output directory", value="runs",
                                 help="Directory written by the gen/calibrate/train/simulate/audit commands"))

    st.markdown("---")
    st.header("Scenario Preview")
    kind = st.selectbox("Lead profile", [k.value for k in ScenarioKind])
    setting = st.selectbox("Gap setting", [g.value for g in GapSetting])
    duration = st.slider("Duration (s)", 60, 900, 300, 30)
    noise_std = st.slider("Acceleration noise (m/s²)", 0.0, 0.5, 0.0, 0.01)
    seed = st.number_input("Random Seed", value=0, step=1)


@st.cache_data
def preview(kind: str, setting: str, duration: float, noise_std: float, seed: int):
    spec = ScenarioSpec(kind, duration=float(duration), noise_std=noise_std, seed=int(seed), setting=setting)
    traj, manifest = generate(spec)
    return trajectory_frame(traj), manifest


@st.cache_data
def load_run(path: str):
    models = discover_models(path) if Path(path).is_dir() else []
    table = collect(path, models) if models else pd.DataFrame()
    return models, table


def _read_csv(path: Path):
    return pd.read_csv(path) if path.exists() else None


models, table = load_run(str(run_dir))

with st.sidebar:
    st.markdown("---")
    st.header("Models")
    if models:
        for name in models:
            st.write(MODEL_LABELS.get(name, name))
    else:
        st.write("No rollouts found yet.")

# ── Summary metrics ──
col1, col2, col3, col4 = st.columns(4)
with col1:
    st.metric("Models", len(models))
with col2:
    crashes = int(table["crashed"].fillna(False).astype(bool).sum()) if "crashed" in table else 0
    st.metric("Crashed rollouts", crashes, delta_color="inverse")
with col3:
    if "rmse_spacing" in table and table["rmse_spacing"].notna().any():
        best = table.loc[table["rmse_spacing"].idxmin()]
        st.metric("Best spacing RMSE", f"{best['rmse_spacing']:.3f} m", help=MODEL_LABELS.get(best["model"], best["model"]))
    else:
        st.metric("Best spacing RMSE", "-")
with col4:
    if "viol_speed" in table:
        worst = table[["viol_speed", "viol_spacing", "viol_rel"]].max(axis=1).max()
        st.metric("Worst violation rate", f"{100.0 * worst:.1f}%")
    else:
        st.metric("Worst violation rate", "-")


# ── Tabs ──
tab1, tab2, tab3, tab4, tab5 = st.tabs([
    "Scenario",
    "Rollouts",
    "RDC Audit",
    "Training",
    "Comparison",
])

with tab1:
    st.header("Trajectory")
    traj_path = run_dir / "trajectory.csv"
    if traj_path.exists():
        st.plotly_chart(plot_trajectory(pd.read_csv(traj_path), title=str(traj_path)), use_container_width=True)
    st.subheader("Generated Preview")
    frame, manifest = preview(kind, setting, duration, noise_std, seed)
    st.plotly_chart(plot_trajectory(frame, title=f"{kind} ({setting})"), use_container_width=True)
    st.json(manifest)

with tab2:
    st.header("Closed-Loop Rollouts")
    for name in models:
        df = _read_csv(run_dir / f"rollout_{name}.csv")
        if df is not None:
            st.plotly_chart(plot_rollout(df, name), use_container_width=True)

with tab3:
    st.header("RDC Compliance")
    for name in models:
        df = _read_csv(run_dir / f"audit_{name}.csv")
        if df is None:
            st.write(f"{MODEL_LABELS.get(name, name)}: not audited")
            continue
        st.plotly_chart(plot_rdc_scatter(df, name), use_container_width=True)

with tab4:
    st.header("Training Progression")
    for name in models:
        df = _read_csv(run_dir / f"history_{name}.csv")
        if df is not None and not df.empty:
            st.plotly_chart(plot_penalty_progression(df, name), use_container_width=True)

with tab5:
    st.header("Model Comparison")
    if table.empty:
        st.write("Run `simulate` for at least one model to populate this view.")
    else:
        st.plotly_chart(plot_rmse_comparison(table), use_container_width=True)
        st.dataframe(table, use_container_width=True, hide_index=True)

        st.subheader("Field-Data Anchors")
        regime = st.selectbox("Regime", list(REFERENCE_RMSE))
        fig = plot_reference_comparison(table, regime=regime)
        if fig is not None:
            st.plotly_chart(fig, use_container_width=True)

    report_md = run_dir / "report.md"
    if report_md.exists():
        st.subheader("Report")
        st.markdown(report_md.read_text())
    manifest_path = run_dir / "gen_manifest.json"
    if manifest_path.exists():
        st.subheader("Generation Manifest")
        st.json(json.loads(manifest_path.read_text()))


# ── Footer ──
st.markdown("---")
st.caption("Car-Following Lens v1.0: run `python main.py --help` for the command-line pipeline")
