"""
Results browser for finished runs.
Reads the CSV, YAML and JSON files written by cli.py; nothing is trained here.
"""
import json
import logging
import os

import pandas as pd
import streamlit as st

from experiment_config import EnvironmentRegistry, output_root
from qrl_errors import ConfigurationError
from run_records import aggregate_frame, list_run_files, read_records

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

st.set_page_config(
    page_title="Quantum-policy RL runs",
    page_icon="📈",
    layout="wide"
)


def list_runs(root: str) -> list:
    """Run directories under root, newest first"""
    if not os.path.isdir(root):
        return []
    runs = [os.path.join(root, name) for name in os.listdir(root) if os.path.isdir(os.path.join(root, name))]
    return sorted(runs, key=os.path.getmtime, reverse=True)


def load_reports(run_dir: str) -> dict:
    reports = {}
    for name in sorted(os.listdir(run_dir)):
        if name.endswith(".json"):
            try:
                with open(os.path.join(run_dir, name), "r", encoding="utf-8") as handle:
                    reports[name] = json.load(handle)
            except json.JSONDecodeError as e:
                logger.warning(f"Skipping unreadable report {name}: {e}")
    return reports


def show_learning_curves(run_dir: str, window_note: bool = True):
    run_files = list_run_files(run_dir)
    if not run_files:
        st.info("No run CSVs in this directory")
        return
    frames = [read_records(path) for path in run_files]
    aggregate = aggregate_frame(frames)

    col1, col2, col3 = st.columns(3)
    with col1:
        st.metric("Seeds", len(frames))
    with col2:
        st.metric("Episodes per seed", int(aggregate["n_seeds"].size))
    with col3:
        st.metric("Final mean moving average", f"{aggregate['moving_average_mean'].iloc[-1]:.2f}")

    per_seed = pd.DataFrame({f"seed {int(f['seed'].iloc[0])}": f["moving_average"].to_numpy() for f in frames})
    per_seed["mean"] = aggregate["moving_average_mean"].to_numpy()
    st.line_chart(per_seed)
    if window_note:
        st.caption("Moving average over the last 10 episodes")

    with st.expander("Aggregate table"):
        st.dataframe(aggregate, use_container_width=True)
    aggregate_path = os.path.join(run_dir, "aggregate.csv")
    if os.path.exists(aggregate_path):
        with open(aggregate_path, "rb") as handle:
            st.download_button("💾 Download aggregate.csv", handle.read(), file_name="aggregate.csv", mime="text/csv")


def show_evaluations(run_dir: str):
    files = sorted(n for n in os.listdir(run_dir) if n.startswith("eval_seed") and n.endswith(".csv"))
    if not files:
        return
    st.markdown("### Evaluation")
    rows = []
    for name in files:
        frame = read_records(os.path.join(run_dir, name))
        rows.append({"file": name, "episodes": len(frame), "mean_return": frame["return"].mean(),
                     "mean_value": frame["value"].mean(), "mean_length": frame["length"].mean()})
    st.dataframe(pd.DataFrame(rows), use_container_width=True)


def show_reports(run_dir: str):
    reports = load_reports(run_dir)
    if not reports:
        return
    st.markdown("### Verification reports")
    for name, report in reports.items():
        if report.get("passed"):
            st.success(f"✅ {name}: {report.get('n_checks', 0)} checks passed")
        else:
            st.error(f"❌ {name}: {report.get('n_failed', 0)} of {report.get('n_checks', 0)} checks failed")
        with st.expander(f"Checks in {name}"):
            checks = pd.DataFrame(report.get("checks", []))
            if not checks.empty:
                st.dataframe(checks[["suite", "name", "passed", "value", "tolerance"]], use_container_width=True)
            for table, content in report.get("tables", {}).items():
                st.markdown(f"**{table}**")
                st.json(content)


def show_presets():
    rows = [{"id": p.id, "name": p.name, "family": p.family.value, "policy": p.policy_kind,
             "qubits": p.n_qubits, "d_enc": p.d_enc, "observables": p.observables, "gamma": p.gamma,
             "baseline": p.baseline, "description": p.description}
            for p in EnvironmentRegistry.get_all_presets().values()]
    st.dataframe(pd.DataFrame(rows), use_container_width=True)


def main():
    st.title("📈 Quantum-policy RL runs")
    st.markdown("**Browse learning curves, evaluations and verification reports of finished runs**")

    with st.sidebar:
        st.header("📁 Runs")
        root = st.text_input("Output root", value=output_root("runs"))
        runs = list_runs(root)
        if st.button("🔄 Refresh"):
            st.rerun()
        show_presets_table = st.checkbox("Show environment presets", value=False)

    if show_presets_table:
        st.markdown("### Environment presets")
        show_presets()

    if not runs:
        st.info(f"👈 No runs found under '{root}'. Start one with: python cli.py train --config configs/cartpole.yaml --seed 0")
        return

    selected = st.selectbox("Run", runs, format_func=os.path.basename)
    try:
        show_learning_curves(selected)
        show_evaluations(selected)
        show_reports(selected)
    except ConfigurationError as e:
        st.error(f"❌ Could not read run files: {e}")

    config_path = os.path.join(selected, "config.yaml")
    if os.path.exists(config_path):
        with st.expander("Configuration"):
            with open(config_path, "r", encoding="utf-8") as handle:
                st.code(handle.read(), language="yaml")

    st.markdown("---")
    st.caption("CSV files are canonical; this page only reads them")


if __name__ == "__main__":
    main()
