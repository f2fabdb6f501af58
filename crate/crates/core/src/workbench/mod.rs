//! File formats, synthetic tasks, run configuration, experiment harnesses
//! and reports.

pub mod config;
pub mod dataset;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use config::{apply_override, InferenceSection, RetrievalSection, RunConfig};
pub use dataset::{read_jsonl, write_jsonl, Dataset, DatasetManifest, MANIFEST_FILE};
pub use pipeline::{
    build_vocab, dev_metric, load_run, prepare, prepare_with, run_ablation, run_k_sweep,
    run_paradigm, run_paradigm_with, write_run_artifacts, write_run_header, AblationRow, AblationTable,
    MetricsRecord, Prepared, RetrievalArtifacts, RunOutcome, SweepResult, SweepRow,
};
pub use report::{loss_curve_csv, report};
pub use synth::{oracle_gold, synth, Profile, SynthSpec};
