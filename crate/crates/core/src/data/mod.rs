//! Flow-table ingestion, sanitization, feature engineering, the fitted
//! preprocessing pipeline, dataset splits and the synthetic generator.

mod csv_io;
mod preprocess;
mod split;
mod synth;
mod table;

pub use csv_io::{load_flow_csv, write_flow_csv, DEFAULT_LABEL_COLUMN};
pub use preprocess::{
    fit_preprocessor, sanitize_and_engineer, transform, EngineeredFeature, PreprocessorModel,
};
pub use split::{make_ood_split, make_stage1_split, plan_splits, SplitPlan, SplitSpec};
pub use synth::{gen_synthetic, SynthConfig, LABEL_KNOWN, LABEL_OOD};
pub use table::{normalize_label, FlowTable, BENIGN};
