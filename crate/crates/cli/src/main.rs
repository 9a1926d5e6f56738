//! `kar`: command-line driver for the knowledge-augmented CTR pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kar_core::pipeline::{self, RunConfig, Stage};
use kar_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "kar", version, about = "Knowledge-augmented CTR pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// deepfm, dcnv2 or din.
    #[arg(long, global = true)]
    backbone: Option<String>,
    /// none, fact, reasoning or both.
    #[arg(long, global = true)]
    mode: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split ratings by user and write the train/test sample files.
    PrepareData,
    /// Ask the LLM for the scenario's factors and save them.
    ElicitFactors,
    /// Render preference and item prompts.
    GenPrompts,
    /// Generate knowledge text for every prompt, reusing stored answers.
    GenKnowledge,
    /// Encode knowledge text into the representation cache.
    Encode,
    /// Train the configured backbone and mode.
    Train,
    /// Train every knowledge mode on the same split and compare.
    Ablate,
    /// Time inference for the base, in-line adaptor and prestored variants.
    Bench,
    /// Prestore the trained adaptor's output for every representation.
    ExportAugmented,
    /// Run the stages listed under `stages` in the configuration.
    Run,
}

fn build_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut set = |k: &str, v: &str| cfg.set(k, v).map_err(|e| Error::Config(format!("--{k}: {e}")));
    if let Some(v) = &c.data_dir {
        set("data_dir", &v.to_string_lossy())?;
    }
    if let Some(v) = &c.work_dir {
        set("work_dir", &v.to_string_lossy())?;
    }
    if let Some(v) = c.seed {
        set("seed", &v.to_string())?;
    }
    if let Some(v) = &c.backbone {
        set("backbone", v)?;
    }
    if let Some(v) = &c.mode {
        set("mode", v)?;
    }
    for kv in &c.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = build_config(&cli.common)?;
    let stage = |s| pipeline::run_stage(&cfg, s).map(|line| println!("{line}"));
    match cli.command {
        Command::PrepareData => stage(Stage::PrepareData),
        Command::ElicitFactors => stage(Stage::ElicitFactors),
        Command::GenPrompts => stage(Stage::GenPrompts),
        Command::GenKnowledge => stage(Stage::GenKnowledge),
        Command::Encode => stage(Stage::Encode),
        Command::Train => stage(Stage::Train),
        Command::ExportAugmented => stage(Stage::ExportAugmented),
        Command::Ablate => {
            let (_, table) = pipeline::ablate(&cfg)?;
            print!("{table}");
            Ok(())
        }
        Command::Bench => {
            let (_, table) = pipeline::bench(&cfg)?;
            print!("{table}");
            Ok(())
        }
        Command::Run => {
            for line in pipeline::run_pipeline(&cfg)? {
                println!("{line}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
