//! Load a flow CSV (or a directory of them), plan the splits, fit the
//! preprocessor on the Stage-1 rows and show what it kept.
//!
//!     cargo run --example preprocess_csv -- flows.csv [Label]
//!
//! Without arguments a small synthetic table is used.

use sculpt::config::RunConfig;
use sculpt::data::{fit_preprocessor, gen_synthetic, load_flow_csv, plan_splits, transform};
use sculpt::pipeline::engineered_for;

fn main() -> sculpt::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = RunConfig::desk_scale();
    let raw = match args.next() {
        Some(path) => load_flow_csv(path, &args.next().unwrap_or_else(|| "Label".into()))?,
        None => gen_synthetic(&cfg.synth_config())?,
    };
    let spec = if raw.labels().iter().any(|l| l == "known") { cfg.split_spec() } else { RunConfig::default().split_spec() };
    let plan = plan_splits(raw.labels(), &spec)?;
    println!("{} rows, {} columns", raw.n_rows(), raw.columns().len());
    for (name, idx) in [
        ("stage1_train", &plan.stage1_train),
        ("internal_val", &plan.internal_val),
        ("ood_eval", &plan.ood_eval),
        ("benign_train", &plan.benign_train),
        ("benign_holdout", &plan.benign_holdout),
    ] {
        println!("{name:<15}{:>8}", idx.len());
    }

    let pp = fit_preprocessor(&raw.select(&plan.stage1_train), &engineered_for(&raw))?;
    println!("kept {} features, dropped {:?}", pp.output_dim(), pp.dropped_columns());
    let t = transform(&raw.select(&plan.stage1_train), &pp)?;
    let row = t.select(&[0]).to_tensor()?;
    println!("first processed row {:?}", &row.data()[..row.data().len().min(6)]);
    Ok(())
}
