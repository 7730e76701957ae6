# app.py
# Streamlit dashboard for lattice rescoring runs and expansion benchmarks

import io
from datetime import datetime

import pandas as pd
import streamlit as st
import streamlit_authenticator as stauth
import yaml
from yaml.loader import SafeLoader

from config import (
    BENCH_EPSILONS, BENCH_NGRAM_ORDERS, BENCH_TABLE, DEFAULT_BEAM, DEFAULT_EPSILON,
    DEFAULT_ESTIMATION, DEFAULT_LAMBDA, DEFAULT_NBEST, DEFAULT_STRATEGY, RESCORE_TABLE,
)
from database import (
    init_database,
    save_bench_results,
    save_rescore_results,
    get_unique_run_timestamps,
    get_bench_by_timestamp,
    get_rescore_by_timestamp,
    delete_run,
)
from errors import RescoreError
from lattice import parse_archive, serialize_archive
from pipeline import (
    RescoreConfig,
    compute_metrics,
    generate_references,
    rescore,
    results_frame,
    run_bench,
)
from score import UniformScorer, HashScorer, BigramScorer

# Page configuration
st.set_page_config(
    page_title="Lattice Rescoring",
    page_icon="🕸️",
    layout="wide"
)

# ============================================
# AUTHENTICATION
# ============================================
with open('config.yaml') as file:
    config = yaml.load(file, Loader=SafeLoader)

authenticator = stauth.Authenticate(
    config['credentials'],
    config['cookie']['name'],
    config['cookie']['key'],
    config['cookie']['expiry_days']
)

authenticator.login(location="main")

auth_status = st.session_state.get("authentication_status")

if auth_status is False:
    st.error('❌ Username/Password is incorrect')
    st.stop()
elif auth_status is None:
    st.info('ℹ️ Please enter your username and password')
    st.stop()

# ============================================
# AUTHENTICATED AREA - Main App
# ============================================

init_database()

if 'results' not in st.session_state:
    st.session_state.results = None
if 'lattices' not in st.session_state:
    st.session_state.lattices = None
if 'bench' not in st.session_state:
    st.session_state.bench = None
if 'is_processing' not in st.session_state:
    st.session_state.is_processing = False

col1, col2 = st.columns([6, 1])
with col1:
    st.title("🕸️ Lattice Rescoring")
with col2:
    st.write("")
    if st.button("Logout", key="logout_btn"):
        for key in list(st.session_state.keys()):
            if key.startswith("authentication") or key in ["name", "username"]:
                del st.session_state[key]
        st.session_state["authentication_status"] = None
        st.stop()

st.markdown(f"**Welcome, {st.session_state.get('name', 'User')}!**")
st.markdown("---")


def excel_bytes(df, sheet_name):
    buffer = io.BytesIO()
    with pd.ExcelWriter(buffer, engine='openpyxl') as writer:
        df.to_excel(writer, index=False, sheet_name=sheet_name)
    buffer.seek(0)
    return buffer


# Sidebar - rescoring settings
with st.sidebar:
    st.header("⚙️ Rescoring Settings")
    strategies = ["non-iterative", "iterative", "double", "replace", "nbest"]
    strategy = st.selectbox("Strategy", strategies, index=strategies.index(DEFAULT_STRATEGY))
    epsilon = st.number_input("Expansion threshold ε", min_value=0.0001, max_value=0.9999,
                              value=DEFAULT_EPSILON, step=0.05, format="%.4f")
    beam = st.number_input("Pruning beam (nats)", min_value=0.0, value=DEFAULT_BEAM, step=1.0)
    lam = st.slider("Neural LM weight λ", 0.0, 1.0, DEFAULT_LAMBDA, 0.05)
    estimations = ["semi-viterbi", "average", "weighted"]
    estimation = st.selectbox("Arc score estimation", estimations,
                              index=estimations.index(DEFAULT_ESTIMATION))
    nbest = st.number_input("N (nbest strategy)", min_value=1, value=DEFAULT_NBEST)

    st.header("🧠 Scorer")
    scorer_kind = st.selectbox("Built-in scorer", ["hash", "uniform", "bigram"])
    bigram_file = None
    if scorer_kind == "bigram":
        bigram_file = st.file_uploader("Training text (one sentence per line)", type=['txt'])


def make_dashboard_scorer():
    if scorer_kind == "uniform":
        return UniformScorer()
    if scorer_kind == "bigram":
        if bigram_file is None:
            raise RescoreError("upload training text for the bigram scorer")
        return BigramScorer.from_text(bigram_file.getvalue().decode("utf-8"))
    return HashScorer()


tab1, tab2, tab3, tab4 = st.tabs([
    "🔍 Rescore", "📊 Results", "📈 Bench", "🗂️ History",
])

# Tab 1: Rescore an uploaded archive
with tab1:
    st.header("Upload a Lattice Archive")

    uploaded_file = st.file_uploader(
        "Choose a lattice archive",
        type=['txt', 'lat', 'fst'],
        help="Text archive: 'UTT <id>' headers, arc lines 'SRC DST WORD GRAPH,ACOUSTIC[,FRAMES]'"
    )

    if uploaded_file is not None:
        try:
            lattices = parse_archive(uploaded_file.getvalue().decode("utf-8"))
            st.session_state.lattices = lattices
            st.success(f"✅ Archive loaded: {len(lattices)} lattice(s)")

            with st.expander("📄 Archive Preview", expanded=False):
                preview = pd.DataFrame([{
                    "utt_id": lat.utt_id,
                    "states": lat.num_states,
                    "arcs": lat.num_arcs,
                    "finals": len(lat.final_costs),
                } for lat in lattices])
                st.dataframe(preview, use_container_width=True)

            col1, col2, col3 = st.columns([1, 2, 1])
            with col2:
                if st.button("🔍 Run Rescoring", type="primary", use_container_width=True,
                             disabled=st.session_state.is_processing):
                    st.session_state.is_processing = True
                    try:
                        cfg = RescoreConfig(strategy=strategy, epsilon=epsilon, beam=beam,
                                            estimation=estimation, lam=lam, nbest=int(nbest))
                        scorer = make_dashboard_scorer()
                        progress = st.progress(0, text="Rescoring...")
                        results = []
                        for k, lat in enumerate(lattices):
                            results.append(rescore(lat, scorer, cfg))
                            progress.progress((k + 1) / len(lattices),
                                              text=f"Rescored {k + 1}/{len(lattices)}")

                        df = results_frame(results, cfg)
                        metrics = compute_metrics(
                            generate_references(lattices), [r.lattice for r in results],
                            scorer_calls=int(df["scorer_calls"].sum()),
                            hypotheses_scored=int(df["hypotheses_scored"].sum()),
                        )
                        st.session_state.results = {
                            "frame": df,
                            "metrics": metrics,
                            "archive": serialize_archive([r.lattice for r in results]),
                        }

                        timestamp = datetime.now().strftime('%Y-%m-%d %H:%M:%S')
                        _, saved_count = save_rescore_results(
                            df, archive=uploaded_file.name, scorer=scorer_kind,
                            run_timestamp=timestamp)
                        st.success(f"✅ Rescoring complete! Saved {saved_count} records to database.")
                        st.session_state.is_processing = False

                    except Exception as e:
                        st.session_state.is_processing = False
                        st.error(f"❌ Rescoring error: {str(e)}")
                        import traceback
                        with st.expander("🔍 Error Details"):
                            st.code(traceback.format_exc())

        except Exception as e:
            st.error(f"❌ Error reading archive: {str(e)}")

# Tab 2: Current results
with tab2:
    if st.session_state.results:
        results = st.session_state.results
        metrics = results["metrics"]
        st.header("Rescoring Results")

        col1, col2, col3, col4, col5 = st.columns(5)
        with col1:
            st.metric("Utterances", metrics.num_utterances)
        with col2:
            st.metric("WER (generated refs)", f"{metrics.wer:.2f}%")
        with col3:
            st.metric("Lattice depth", f"{metrics.lattice_depth:.3f}")
        with col4:
            st.metric("Best-path log-lik", f"{metrics.best_path_loglik:.3f}")
        with col5:
            st.metric("Hypotheses scored", metrics.hypotheses_scored)

        st.dataframe(results["frame"], use_container_width=True)

        col1, col2 = st.columns(2)
        with col1:
            st.download_button(
                label="📥 Download rescored archive",
                data=results["archive"],
                file_name="rescored.txt",
                mime="text/plain",
                use_container_width=True
            )
        with col2:
            st.download_button(
                label="📥 Download as Excel",
                data=excel_bytes(results["frame"], "Rescore"),
                file_name="rescore_results.xlsx",
                mime="application/vnd.openxmlformats-officedocument.spreadsheetml.sheet",
                use_container_width=True
            )
    else:
        st.info("🔭 No results yet. Run rescoring in the 'Rescore' tab!")

# Tab 3: Benchmark sweep
with tab3:
    st.header("Expansion Benchmark")
    st.write("Sweeps posterior thresholds and n-gram orders over the uploaded archive. "
             "Log-likelihoods are exact scores of the chosen paths.")

    eps_choice = st.multiselect("ε values", list(BENCH_EPSILONS), default=list(BENCH_EPSILONS))
    order_choice = st.multiselect("n-gram orders", list(BENCH_NGRAM_ORDERS),
                                  default=list(BENCH_NGRAM_ORDERS))

    if st.session_state.lattices is None:
        st.info("Upload an archive in the 'Rescore' tab first.")
    elif st.button("📈 Run Bench", disabled=st.session_state.is_processing):
        try:
            with st.spinner("Running sweep..."):
                cfg = RescoreConfig(beam=beam, estimation=estimation, lam=lam, nbest=int(nbest))
                bench = run_bench(st.session_state.lattices, make_dashboard_scorer(), cfg,
                                  epsilons=tuple(sorted(eps_choice, reverse=True)),
                                  orders=tuple(sorted(order_choice)), timing=True)
            st.session_state.bench = bench
            _, saved_count = save_bench_results(bench, scorer=scorer_kind)
            st.success(f"✅ Bench complete. Saved {saved_count} rows.")
        except Exception as e:
            st.error(f"❌ Bench error: {str(e)}")
            import traceback
            with st.expander("🔍 Error Details"):
                st.code(traceback.format_exc())

    if st.session_state.bench is not None:
        bench = st.session_state.bench
        st.dataframe(bench, use_container_width=True)
        expansion_rows = bench[bench["method"].isin(["posterior", "ngram"])]
        if not expansion_rows.empty:
            st.subheader("Depth vs best-path log-likelihood")
            chart = expansion_rows.assign(
                series=expansion_rows["strategy"] + " / " + expansion_rows["method"])
            st.scatter_chart(chart, x="mean_depth", y="mean_loglik", color="series")
        st.download_button(
            label="📥 Download bench CSV",
            data=bench.to_csv(index=False),
            file_name="bench.csv",
            mime="text/csv",
        )

# Tab 4: History
with tab4:
    st.header("Run History")
    table = st.radio("Show", ["Rescoring runs", "Bench runs"], horizontal=True)
    is_bench = table == "Bench runs"
    timestamps = get_unique_run_timestamps(BENCH_TABLE if is_bench else RESCORE_TABLE)

    if timestamps:
        col1, col2 = st.columns([3, 1])

        with col1:
            selected_timestamp = st.selectbox(
                "Select a run to view:",
                timestamps,
                format_func=lambda x: f"Run from {x}"
            )

        with col2:
            st.write("")
            st.write("")
            if st.button("🗑️ Delete Selected", type="secondary"):
                deleted = delete_run(selected_timestamp)
                st.success(f"Deleted {deleted} records")
                st.rerun()

        if selected_timestamp:
            if is_bench:
                history_df = get_bench_by_timestamp(selected_timestamp)
            else:
                history_df = get_rescore_by_timestamp(selected_timestamp)

            st.subheader(f"Results from {selected_timestamp}")
            st.dataframe(history_df, use_container_width=True)

            col1, col2, col3 = st.columns([2, 1, 2])
            with col2:
                st.download_button(
                    label="📥 Download as Excel",
                    data=excel_bytes(history_df, "Bench" if is_bench else "Rescore"),
                    file_name=f"run_{selected_timestamp.replace(':', '-')}.xlsx",
                    mime="application/vnd.openxmlformats-officedocument.spreadsheetml.sheet",
                    use_container_width=True
                )
    else:
        st.info("🔭 No runs stored yet.")

# Footer
st.markdown("---")
st.markdown(
    "<div style='text-align: center; color: gray;'>"
    "Lattice Rescoring | Built with Streamlit"
    "</div>",
    unsafe_allow_html=True
)
