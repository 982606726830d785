//! Desk-scale sculpting experiment: Stage-1 triage alone against the full
//! two-stage pipeline on synthetic OOD rows.
//!
//!     cargo run --example sculpting_experiment -- [overrides.cfg]

use sculpt::config::RunConfig;
use sculpt::synthexp::run_sculpting_experiment;

fn main() -> sculpt::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = RunConfig::desk_scale();
    if let Some(path) = std::env::args().nth(1) {
        cfg = cfg.apply_file(path)?;
    }
    let t = std::time::Instant::now();
    let report = run_sculpting_experiment(&cfg.synth_config(), &cfg)?;
    println!("{}", report.ood_eval.render_text());
    for (p, r) in &report.twostage_ood_recall {
        println!(
            "P{p}: stage-1 OOD recall {:.3}, two-stage {:.3}, benign specificity {:.3}",
            report.stage1_ood_recall, r, report.benign_specificity[p]
        );
    }
    println!("known-attack recall {:.3}  ({:.1}s)", report.known_recall, t.elapsed().as_secs_f64());
    Ok(())
}
