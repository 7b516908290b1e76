use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pvsnet::config::PipelineConfig;
use pvsnet::embedder::Embedding;
use pvsnet::eval::{match_score, EvalReport};
use pvsnet::gradsuite::{network_suite, NETWORK_TOLERANCE};
use pvsnet::pipeline::{checkpoint_path, load_end_to_end, read_enrollment, run_pipeline, write_enrollment, Enrolled, PipelineOutcome, RunOptions};
use pvsnet::synth::{Dataset, Role};
use pvsnet::tensorcore::suite::{primitive_suite, SuiteResult, PRIMITIVE_TOLERANCE};
use pvsnet::transforms::{irt, tcm, IrtParams};
use pvsnet::triplet::TripletModel;
use pvsnet::weights::load_weights;
use pvsnet::{Error, Image, Result};

#[derive(Parser, Debug)]
#[command(name = "pvsnet", version, about = "Palm-vein verification pipeline on synthetic data")]
struct Cli {
    /// key=value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overrides the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = "pvsnet-out")]
    out: PathBuf,
    /// Extra config override, repeatable: --set triplet.steps=50
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the dataset and ground-truth TCM/IRT targets (stages 1-2)
    GenData,
    /// Apply TCM or IRT to one PGM image
    Transform {
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_parser = ["tcm", "irt"])]
        kind: String,
        #[arg(long, default_value_t = 20_000)]
        rays: usize,
        #[arg(long, default_value_t = 2.0)]
        n_max: f64,
    },
    /// Train CED-1 and CED-2 (stages 3-4)
    TrainCed {
        #[arg(long)]
        depth: Option<usize>,
        /// Base channel count of the encoder
        #[arg(long)]
        channels: Option<usize>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Stack the CEDs and finetune original to IRT (stage 5)
    FinetuneStack {
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Assemble features and pretrain the FE trunk as an autoencoder (stages 6-7)
    PretrainAe {
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Triplet-train the feature extractor (stage 8)
    TrainTriplet {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Jointly finetune stacked CED and FE (stage 9)
    FinetuneE2e {
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate the final model and write the report (stage 10)
    Eval,
    /// Run a range of pipeline stages
    Run {
        #[arg(long, default_value_t = 1)]
        from: usize,
        #[arg(long, default_value_t = 10)]
        until: usize,
    },
    /// Embed the gallery of a dataset directory into an enrollment file
    Enroll {
        /// Directory holding manifest.tsv
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Checkpoint to use; defaults to the latest full-model checkpoint in --out
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Score one probe image against an enrollment file
    Verify {
        #[arg(long)]
        enrollment: PathBuf,
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        threshold: f64,
        /// Claimed identity; without it the nearest enrolled sample is used
        #[arg(long)]
        subject: Option<u32>,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Finite-difference check of every differentiable primitive
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Also check the composed desk CED and FE
        #[arg(long)]
        networks: bool,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_train(cfg: &mut PipelineConfig, prefixes: &[&str], flags: &TrainFlags) -> Result<()> {
    for p in prefixes {
        if let Some(e) = flags.epochs {
            cfg.set(&format!("{p}.epochs"), &e.to_string())?;
        }
        if let Some(lr) = flags.lr {
            cfg.set(&format!("{p}.lr"), &lr.to_string())?;
        }
    }
    Ok(())
}

fn print_report(label: &str, r: &EvalReport) {
    println!("{label}: eer={:.6} crr={:.6} di={:.6} genuine={} impostor={}", r.eer, r.crr, r.di, r.n_genuine, r.n_impostor);
}

fn summarize(o: &PipelineOutcome) {
    let c = o.ced;
    let show = |name: &str, v: Option<f64>| {
        if let Some(v) = v {
            println!("{name}={v:.6}");
        }
    };
    show("ced1_heldout_mse", c.ced1_heldout);
    show("ced1_identity_mse", c.ced1_identity);
    show("ced2_heldout_mse", c.ced2_heldout);
    show("stack_before_mse", c.stack_before);
    show("stack_after_mse", c.stack_after);
    if let Some(r) = &o.triplet_report {
        print_report("triplet", r);
    }
    if let Some(r) = &o.report {
        print_report("final", r);
    }
    if let Some(r) = &o.baseline {
        print_report("baseline", r);
    }
}

fn stages(cfg: &PipelineConfig, out: &Path, from: usize, until: usize) -> Result<()> {
    let o = run_pipeline(cfg, out, RunOptions { from_stage: from, until_stage: until })?;
    for n in &o.stages_run {
        println!("stage {n} {} done", pvsnet::pipeline::STAGE_NAMES[n - 1]);
    }
    summarize(&o);
    Ok(())
}

fn latest_model(out: &Path) -> Result<PathBuf> {
    (8..=10)
        .rev()
        .map(|n| checkpoint_path(out, n))
        .find(|p| p.exists())
        .ok_or_else(|| Error::io(out.join("checkpoints"), std::io::Error::new(std::io::ErrorKind::NotFound, "no stage 8-10 checkpoint")))
}

fn model(cfg: &PipelineConfig, out: &Path, weights: &Option<PathBuf>) -> Result<pvsnet::e2e::EndToEnd> {
    let path = match weights {
        Some(p) => p.clone(),
        None => latest_model(out)?,
    };
    load_end_to_end(cfg, &load_weights(&path)?)
}

fn print_suite(results: &[SuiteResult], tol: f64) -> bool {
    let mut ok = true;
    for r in results {
        let pass = r.passes(tol);
        ok &= pass;
        println!("{:<20} trials={:<3} max_rel_error={:.3e} {}", r.name, r.trials, r.max_rel_error, if pass { "ok" } else { "FAIL" });
    }
    ok
}

fn execute(cli: &Cli) -> Result<ExitCode> {
    let mut cfg = load_config(cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::GenData => stages(&cfg, out, 1, 2)?,
        Command::Transform { input, output, kind, rays, n_max } => {
            let img = Image::read_pgm(input)?;
            let res = match kind.as_str() {
                "tcm" => tcm(&img)?,
                _ => irt(&img, &IrtParams { ray_count: *rays, n_max: *n_max, max_steps: None, seed: cfg.seed })?,
            };
            res.write_pgm(output)?;
            println!("wrote {}", output.display());
        }
        Command::TrainCed { depth, channels, train } => {
            if let Some(d) = depth {
                cfg.ced_depth = *d;
            }
            if let Some(c) = channels {
                cfg.ced_base = *c;
            }
            apply_train(&mut cfg, &["ced1", "ced2"], train)?;
            stages(&cfg, out, 3, 4)?;
        }
        Command::FinetuneStack { train } => {
            apply_train(&mut cfg, &["stack"], train)?;
            stages(&cfg, out, 5, 5)?;
        }
        Command::PretrainAe { train } => {
            apply_train(&mut cfg, &["ae"], train)?;
            stages(&cfg, out, 6, 7)?;
        }
        Command::TrainTriplet { steps, lr } => {
            if let Some(s) = steps {
                cfg.triplet_steps = *s;
            }
            if let Some(lr) = lr {
                cfg.triplet_lr = *lr;
            }
            stages(&cfg, out, 8, 8)?;
        }
        Command::FinetuneE2e { steps } => {
            if let Some(s) = steps {
                cfg.e2e_steps = *s;
            }
            stages(&cfg, out, 9, 9)?;
        }
        Command::Eval => stages(&cfg, out, 10, 10)?,
        Command::Run { from, until } => stages(&cfg, out, *from, *until)?,
        Command::Enroll { dataset, output, weights } => {
            let m = model(&cfg, out, weights)?;
            let data = Dataset::load(dataset)?;
            let mut entries = Vec::new();
            for i in data.indices(Role::Gallery) {
                let r = &data.records[i];
                entries.push(Enrolled { subject: r.subject_id, label: r.relative_path.clone(), embedding: m.embed_input(&data.images[i])? });
            }
            write_enrollment(&entries, output)?;
            println!("enrolled {} samples into {}", entries.len(), output.display());
        }
        Command::Verify { enrollment, probe, threshold, subject, weights } => {
            let m = model(&cfg, out, weights)?;
            let entries = read_enrollment(enrollment)?;
            let e: Embedding = m.embed_input(&Image::read_pgm(probe)?)?;
            let mut best: Option<(f64, &Enrolled)> = None;
            for en in entries.iter().filter(|en| subject.is_none_or(|s| s == en.subject)) {
                let d = match_score(&e, &en.embedding)?;
                if best.is_none_or(|(b, _)| d < b) {
                    best = Some((d, en));
                }
            }
            let (d, en) = best.ok_or_else(|| Error::contract("no enrolled sample matches the claimed subject"))?;
            println!("distance {d}");
            println!("nearest subject {} ({})", en.subject, en.label);
            println!("{}", if d < *threshold { "accept" } else { "reject" });
        }
        Command::Gradcheck { trials, networks } => {
            let mut ok = print_suite(&primitive_suite(*trials, cfg.seed)?, PRIMITIVE_TOLERANCE);
            if *networks {
                ok &= print_suite(&network_suite(*trials, cfg.seed)?, NETWORK_TOLERANCE);
            }
            if !ok {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
