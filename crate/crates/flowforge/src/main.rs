use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use flowforge::{emit_report, run_experiment, ExperimentConfig, ExperimentId, FineTuneSettings};
use flowforge_core::augment::{average_augment_by_class, mtu_augment_dataset, AverageConfig, MtuConfig, SubsetCap};
use flowforge_core::classifier::{
    evaluate_loss, fine_tune, load_checkpoint, save_checkpoint, train, ModelState, NetworkSpec, TrainConfig,
};
use flowforge_core::eval::{evaluate, Averaging};
use flowforge_core::flow::{read_flows, render_flows, write_flows};
use flowforge_core::flowpic::{
    build_flowpic, build_input_pic, read_archive, write_archive, FlowPic, Normalize, PicSpec,
};
use flowforge_core::preprocess::{apply_filters, max_size_distribution, truncate_to_window, FilterPolicy};
use flowforge_core::synth::{generate, SynthConfig};
use serde::Deserialize;

#[derive(Parser)]
#[command(
    name = "flowforge",
    version,
    about = "FlowPic augmentation and classification toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic labeled flows as JSONL.
    Synth {
        /// TOML file with a [synth] section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        flows_per_class: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output JSONL; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply the duration, packet-count and class-size filters.
    Filter {
        #[arg(long)]
        input: PathBuf,
        /// Write the surviving flows here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 15.0)]
        min_duration: f64,
        #[arg(long, default_value_t = 100)]
        min_packets: usize,
        #[arg(long, default_value_t = 15.0)]
        window: f64,
        #[arg(long, default_value_t = 0)]
        min_class_size: usize,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Distribution of per-flow maximum packet sizes.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        json: bool,
    },
    /// Convert flow JSONL into a FlowPic archive.
    Flowpic {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 15.0)]
        window: f64,
        /// Keep raw packet counts instead of scaling each pic to max 1.
        #[arg(long)]
        raw_counts: bool,
    },
    /// Average augmentation (archive to archive) or MTU augmentation (JSONL to JSONL).
    Augment {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        m: usize,
        /// `all`, an absolute count such as `500`, or a per-class multiple such as `3x`.
        #[arg(long, default_value = "3x", value_parser = parse_cap)]
        cap: SubsetCap,
        #[arg(long, default_value_t = 750)]
        mtu_min: u32,
        #[arg(long, default_value_t = 1200)]
        mtu_max: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model from scratch, or pretrain then fine-tune.
    Train {
        /// Train from scratch on this archive (the pretraining step when a fine-tune archive is also given).
        #[arg(long)]
        pretrain_archive: Option<PathBuf>,
        /// Fine-tune toward this archive.
        #[arg(long)]
        finetune_archive: Option<PathBuf>,
        /// Validation archive for early stopping.
        #[arg(long)]
        val_archive: Option<PathBuf>,
        /// TOML file with [train] and [finetune] sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a saved model on a FlowPic archive.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        archive: PathBuf,
        #[arg(long, value_enum, default_value_t = AveragingArg::Weighted)]
        averaging: AveragingArg,
    },
    /// Run one of the experiment families and write its report.
    Experiment {
        #[arg(long, value_parser = |s: &str| s.parse::<ExperimentId>().map_err(|e| e.to_string()))]
        id: ExperimentId,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Flow JSONL to use instead of the synthetic generator.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Average,
    Mtu,
}

#[derive(Clone, Copy, ValueEnum)]
enum AveragingArg {
    Weighted,
    Macro,
}

fn parse_cap(s: &str) -> Result<SubsetCap, String> {
    if s == "all" {
        return Ok(SubsetCap::All);
    }
    let bad = |_| format!("expected `all`, N or Nx, got {s:?}");
    match s.strip_suffix('x') {
        Some(k) => k.parse().map(SubsetCap::PerClassMultiple).map_err(bad),
        None => s.parse().map(SubsetCap::Absolute).map_err(bad),
    }
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct SynthFile {
    synth: SynthConfig,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct TrainFile {
    train: TrainConfig,
    finetune: FineTuneSettings,
}

fn read_toml<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn class_order(sets: &[&[FlowPic]]) -> Vec<String> {
    let mut classes: Vec<String> = Vec::new();
    for p in sets.iter().flat_map(|s| s.iter()) {
        if !classes.iter().any(|c| c == p.label()) {
            classes.push(p.label().to_string());
        }
    }
    classes
}

fn run(cli: Cli) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Synth {
            config,
            flows_per_class,
            seed,
            out: path,
        } => {
            let mut cfg = read_toml::<SynthFile>(config.as_deref())?.synth;
            cfg.flows_per_class = flows_per_class.unwrap_or(cfg.flows_per_class);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let ds = generate(&cfg)?;
            match path {
                Some(p) => write_flows(&ds, &p)?,
                None => render_flows(&ds, &mut out)?,
            }
        }
        Command::Filter {
            input,
            out: path,
            min_duration,
            min_packets,
            window,
            min_class_size,
            json,
        } => {
            let policy = FilterPolicy {
                min_duration_s: min_duration,
                min_packets_in_window: min_packets,
                window_s: window,
                min_class_size,
            };
            policy.validate()?;
            let (kept, report) = apply_filters(&read_flows(&input)?, &policy);
            if let Some(p) = path {
                write_flows(&kept, &p)?;
            }
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            } else {
                writeln!(out, "{report}")?;
            }
        }
        Command::Stats { input, top_k, json } => {
            let dist = max_size_distribution(&read_flows(&input)?, top_k)?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&dist)?)?;
            } else {
                writeln!(out, "{dist}")?;
            }
        }
        Command::Flowpic {
            input,
            out: path,
            window,
            raw_counts,
        } => {
            let spec = PicSpec {
                time_span_s: window,
                normalize: if raw_counts { Normalize::None } else { Normalize::MaxOne },
                ..Default::default()
            };
            let pics = read_flows(&input)?
                .flows()
                .iter()
                .map(|f| {
                    let w = truncate_to_window(f, window)?;
                    if raw_counts {
                        build_flowpic(&w, &spec)
                    } else {
                        build_input_pic(&w, &spec)
                    }
                })
                .collect::<flowforge_core::Result<Vec<_>>>()?;
            write_archive(&pics, &path)?;
            writeln!(out, "wrote {} pics to {}", pics.len(), path.display())?;
        }
        Command::Augment {
            method,
            input,
            out: path,
            m,
            cap,
            mtu_min,
            mtu_max,
            seed,
        } => match method {
            Method::Average => {
                let pics = read_archive(&input)?;
                let aug = average_augment_by_class(&pics, &AverageConfig { m, cap, seed })?;
                write_archive(&aug, &path)?;
                writeln!(out, "wrote {} averaged pics to {}", aug.len(), path.display())?;
            }
            Method::Mtu => {
                let cfg = MtuConfig {
                    mtu_min,
                    mtu_max,
                    seed,
                    ..Default::default()
                };
                let aug = mtu_augment_dataset(&read_flows(&input)?, &cfg)?;
                write_flows(&aug, &path)?;
                writeln!(out, "wrote {} fragmented flows to {}", aug.len(), path.display())?;
            }
        },
        Command::Train {
            pretrain_archive,
            finetune_archive,
            val_archive,
            config,
            out_model,
            seed,
        } => {
            let file: TrainFile = read_toml(config.as_deref())?;
            let train_cfg = TrainConfig { seed, ..file.train };
            let pre = pretrain_archive.as_deref().map(read_archive).transpose()?;
            let ft = finetune_archive.as_deref().map(read_archive).transpose()?;
            let val = val_archive
                .as_deref()
                .map(read_archive)
                .transpose()?
                .unwrap_or_default();
            let (model, note) = match (pre, ft) {
                (None, None) => bail!("give --pretrain-archive, --finetune-archive or both"),
                (Some(set), None) | (None, Some(set)) => {
                    let classes = class_order(&[&set, &val]);
                    let base: ModelState = ModelState::new(NetworkSpec::lenet5(classes.len()), classes, seed)?;
                    let (m, h) = train(&base, &set, &val, &train_cfg)?;
                    (m, format!("trained {} epochs", h.epochs.len()))
                }
                (Some(pre), Some(ft)) => {
                    let classes = class_order(&[&pre, &ft, &val]);
                    let base: ModelState = ModelState::new(NetworkSpec::lenet5(classes.len()), classes, seed)?;
                    let (pretrained, h) = train(&base, &pre, &val, &train_cfg)?;
                    let fcfg = TrainConfig {
                        seed: seed.wrapping_add(1),
                        ..train_cfg
                    };
                    let o = fine_tune(&pretrained, &ft, &val, &fcfg, &file.finetune.head())?;
                    let n = o.frozen_phase.epochs.len() + o.unfrozen_phase.epochs.len();
                    (o.state, format!("pretrained {} epochs, fine-tuned {n}", h.epochs.len()))
                }
            };
            save_checkpoint(&model, &out_model)?;
            if !val.is_empty() {
                let (loss, acc) = evaluate_loss(&model, &val)?;
                writeln!(out, "{note}; val loss {loss:.4}, val accuracy {acc:.4}")?;
            } else {
                writeln!(out, "{note}")?;
            }
        }
        Command::Eval {
            model,
            archive,
            averaging,
        } => {
            let model: ModelState = load_checkpoint(&model)?;
            let pics = read_archive(&archive)?;
            ensure!(!pics.is_empty(), "archive {} is empty", archive.display());
            let predicted = model.predict(&pics)?;
            let truth: Vec<&str> = pics.iter().map(FlowPic::label).collect();
            let avg = match averaging {
                AveragingArg::Weighted => Averaging::Weighted,
                AveragingArg::Macro => Averaging::Macro,
            };
            let report = evaluate(model.classes(), &truth, &predicted, avg)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
        }
        Command::Experiment {
            id,
            config,
            out: dir,
            dataset,
        } => {
            let mut cfg = match &config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            cfg.id = id;
            cfg.out = Some(dir.clone());
            if dataset.is_some() {
                cfg.dataset = dataset;
            }
            let report = run_experiment(&cfg)?;
            let files = emit_report(&report, &dir)?;
            let mut w = BufWriter::new(&mut out);
            for a in &report.arms {
                writeln!(
                    w,
                    "{:<34} f1 {:.4} (macro {:.4})",
                    a.name, a.weighted.f1, a.macro_avg.f1
                )?;
            }
            for c in &report.comparisons {
                writeln!(w, "{:<34} delta f1 {:+.4}", c.name, c.f1_delta)?;
            }
            for f in files {
                writeln!(w, "wrote {}", f.display())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = serde_json::json!({ "error": { "kind": "usage", "message": e.to_string().trim() } });
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let causes: Vec<String> = e.chain().skip(1).map(|c| c.to_string()).collect();
            let msg = serde_json::json!({ "error": { "kind": "runtime", "message": e.to_string(), "causes": causes } });
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
