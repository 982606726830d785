//! Subcommand surface over the library. `dispatch` returns the process exit
//! code: 0 on success, 1 on data or model errors, 2 on usage errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::config::RunConfig;
use crate::container::ModelContainer;
use crate::data::{fit_preprocessor, gen_synthetic, load_flow_csv, plan_splits, transform, write_flow_csv, FlowTable};
use crate::error::{Error, Result};
use crate::infer::{calibrate_thresholds, classify_latents, score, write_verdicts};
use crate::pipeline::{benign_rows, embed, engineered_for, evaluate, prepare};
use crate::synthexp::run_sculpting_experiment;
use crate::train::{train_stage1, train_stage2};

#[derive(Parser, Debug)]
#[command(name = "sculpt", version, about = "Two-stage latent-sculpting anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// key = value run configuration; omitted keys keep their defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    label_column: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic flow table
    Synth {
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Split a raw table, fit the preprocessor and write processed splits
    Preprocess {
        #[arg(long)]
        data: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the encoder with DCCL
    TrainStage1 {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Frozen-encoder latents for a table
    Embed {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the flow to the benign rows of a latent table
    TrainStage2 {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Percentile thresholds from the benign rows of a latent table
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Metric blocks per threshold and the per-class recall table
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Also write the metrics as key=value lines
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Per-row verdict CSV
    Score {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 95, value_parser = clap::builder::TypedValueParser::map(clap::builder::PossibleValuesParser::new(["99", "97", "95"]), |s: String| s.parse::<u32>().unwrap()))]
        percentile: u32,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Desk-scale synthetic experiment: Stage-1 triage against the full pipeline
    SculptExperiment {
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_config(base: RunConfig, c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => base.apply_file(p)?,
        None => base,
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(l) = &c.label_column {
        cfg.label_column = l.clone();
    }
    cfg.validate()?;
    info!("run configuration:\n{}", cfg.to_text());
    Ok(cfg)
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn latent_table(z: &crate::ndiff::Tensor, labels: &[String]) -> Result<FlowTable> {
    let cols = (0..z.shape()[1]).map(|j| format!("z{j:02}")).collect();
    FlowTable::new(cols, z.data().to_vec(), labels.to_vec())
}

fn benign_latents(path: &Path, cfg: &RunConfig) -> Result<crate::ndiff::Tensor> {
    let t = load_flow_csv(path, &cfg.label_column)?;
    let b = benign_rows(&t);
    if b.is_empty() {
        return Err(Error::Data(format!("{}: no benign rows", path.display())));
    }
    t.select(&b).to_tensor()
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { dim, out, common } => {
            let mut cfg = load_config(RunConfig::default(), &common)?;
            if let Some(d) = dim {
                cfg.synth.dim = d;
            }
            let t = gen_synthetic(&cfg.synth_config())?;
            write_flow_csv(&t, &out, &cfg.label_column)?;
            println!("wrote {} rows to {}", t.n_rows(), out.display());
        }
        Command::Preprocess { data, out, common } => {
            let cfg = load_config(RunConfig::default(), &common)?;
            let raw = load_flow_csv(&data, &cfg.label_column)?;
            let plan = plan_splits(raw.labels(), &cfg.split_spec())?;
            let pp = fit_preprocessor(&raw.select(&plan.stage1_train), &engineered_for(&raw))?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            for (name, idx) in [
                ("stage1_train", &plan.stage1_train),
                ("internal_val", &plan.internal_val),
                ("ood_eval", &plan.ood_eval),
                ("benign_train", &plan.benign_train),
                ("benign_holdout", &plan.benign_holdout),
            ] {
                if idx.is_empty() {
                    continue;
                }
                let t = transform(&raw.select(idx), &pp)?;
                let path = out.join(format!("{name}.csv"));
                write_flow_csv(&t, &path, &cfg.label_column)?;
                println!("{name}: {} rows -> {}", t.n_rows(), path.display());
            }
            let model = ModelContainer {
                seed: cfg.seed,
                config_text: cfg.to_text(),
                preprocessor: Some(pp),
                ..ModelContainer::default()
            };
            model.save(out.join("model.sclpt"))?;
            println!("model: {}", out.join("model.sclpt").display());
        }
        Command::TrainStage1 { data, val, model, out, common } => {
            let cfg = load_config(RunConfig::default(), &common)?;
            let (data, model_in, out) = (required(&data, "data")?, required(&model, "model")?, required(&out, "out")?);
            let mut m = ModelContainer::load(model_in)?;
            let pp = m.require_preprocessor()?.clone();
            let train = prepare(&load_flow_csv(data, &cfg.label_column)?, &pp)?;
            let val = match &val {
                Some(p) => Some(prepare(&load_flow_csv(p, &cfg.label_column)?, &pp)?),
                None => None,
            };
            let s1 = train_stage1(&train, val.as_ref(), cfg.encoder_config(pp.output_dim()), &cfg.stage1, cfg.seed)?;
            print!("{}", s1.history.log_text());
            m.encoder = Some(s1.encoder);
            m.dccl = Some(cfg.dccl());
            m.seed = cfg.seed;
            m.config_text = cfg.to_text();
            m.save(out)?;
        }
        Command::Embed { data, model, out, common } => {
            let cfg = load_config(RunConfig::default(), &common)?;
            let m = ModelContainer::load(&model)?;
            let t = load_flow_csv(&data, &cfg.label_column)?;
            let z = embed(&t, &m)?;
            write_flow_csv(&latent_table(&z, t.labels())?, &out, &cfg.label_column)?;
            println!("wrote {} latents to {}", z.rows(), out.display());
        }
        Command::TrainStage2 { data, model, out, common } => {
            let cfg = load_config(RunConfig::default(), &common)?;
            let mut m = ModelContainer::load(&model)?;
            let latent = m.require_encoder()?.config.latent_dim;
            let z = benign_latents(&data, &cfg)?;
            let maf_cfg = crate::maf::MafConfig { dim: latent, ..cfg.maf_config() };
            let (maf, h) = train_stage2(&z, None, maf_cfg, &cfg.stage2, cfg.seed)?;
            print!("{}", h.log_text());
            m.maf = Some(maf);
            m.save(&out)?;
        }
        Command::Calibrate { data, model, out, common } => {
            let cfg = load_config(RunConfig::default(), &common)?;
            let mut m = ModelContainer::load(&model)?;
            let z = benign_latents(&data, &cfg)?;
            let t = calibrate_thresholds(&score(&z, m.require_maf()?)?, &cfg.percentiles)?;
            for (p, tau) in &t.entries {
                println!("P{p} tau={tau:.6}");
            }
            m.thresholds = Some(t);
            m.save(&out)?;
        }
        Command::Evaluate { data, model, out, common } => {
            let cfg = load_config(RunConfig::default(), &common)?;
            let m = ModelContainer::load(&model)?;
            let ev = evaluate(&load_flow_csv(&data, &cfg.label_column)?, &m)?;
            print!("{}", ev.render_text());
            if let Some(p) = out {
                write_text(&p, &ev.to_key_values())?;
            }
        }
        Command::Score { data, model, percentile, out, common } => {
            let cfg = load_config(RunConfig::default(), &common)?;
            let m = ModelContainer::load(&model)?;
            let tau = m.require_thresholds()?.get(percentile)?;
            let z = embed(&load_flow_csv(&data, &cfg.label_column)?, &m)?;
            let v = classify_latents(&z, m.require_centroids()?, m.require_maf()?, tau)?;
            write_verdicts(&out, &v)?;
            let flagged = v.iter().filter(|v| v.is_anomaly()).count();
            println!("{flagged} of {} rows flagged at P{percentile}", v.len());
        }
        Command::SculptExperiment { out, common } => {
            let cfg = load_config(RunConfig::desk_scale(), &common)?;
            let r = run_sculpting_experiment(&cfg.synth_config(), &cfg)?;
            print!("{}", r.ood_eval.render_text());
            let kv = r.to_key_values();
            println!();
            for line in kv.lines().filter(|l| !l.starts_with("config.")) {
                println!("{line}");
            }
            if let Some(p) = out {
                write_text(&p, &kv)?;
            }
        }
    }
    Ok(())
}
