//! Confusion metrics, per-class recall and ranking scores for a toy run.
//!
//!     cargo run --example metrics_report

use sculpt::metrics::{auprc, auroc, confusion_metrics, is_anomaly_label};

fn main() -> sculpt::Result<()> {
    let labels: Vec<String> = ["benign", "benign", "benign", "benign", "ddos", "ddos", "bot", "bot", "bot", "benign"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let scores = [0.1, 0.4, 0.2, 0.9, 0.8, 0.95, 0.3, 0.7, 0.6, 0.05];
    let flags: Vec<bool> = scores.iter().map(|&s| s > 0.5).collect();
    let report = confusion_metrics(&flags, &labels)?.with_scores(&scores, &labels)?;
    print!("{}", report.render_text("s>0.5"));

    let truth: Vec<bool> = labels.iter().map(|l| is_anomaly_label(l)).collect();
    println!("\nAUROC {:.4}  AUPRC {:.4}", auroc(&scores, &truth)?, auprc(&scores, &truth)?);
    Ok(())
}
