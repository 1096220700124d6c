use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use depvec::gnn::{Arch, EmbedMode, ModelConfig, Scope};
use depvec::mir::{load_corpus, parse_program, Program};
use depvec::pretrain::{init_model, load_checkpoint, pretrain, save_checkpoint, LexicalConfig, PretrainConfig, Strategy};
use depvec::selfcheck;
use depvec::tasks::{
    clone_score, finetune, generate_desk_corpora, probe, Dataset, FinetuneConfig, ProbeConfig, Task,
};

/// Code embeddings from lexical and program-dependence features.
#[derive(Parser, Debug)]
#[command(name = "depvec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Copy)]
struct SeedArg {
    /// Seed for every random stream.
    #[arg(long, env = "DEPVEC_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the generated desk corpora as JSON-Lines files.
    GenCorpora {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Build a model on a corpus, pre-train it and save a checkpoint.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// node, context, vgae or none.
        #[arg(long, default_value = "context")]
        strategy: Strategy,
        /// gcn, gin, sage or gat.
        #[arg(long, default_value = "gat")]
        gnn: Arch,
        #[arg(long, default_value_t = 5)]
        layers: usize,
        #[arg(long, default_value_t = 0.2)]
        dropout: f64,
        #[arg(long, default_value_t = 1)]
        epochs: usize,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Print the embedding of a program file.
    Embed {
        program: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// both, lexical or dependence.
        #[arg(long, default_value = "both")]
        mode: EmbedMode,
        /// Embed one method instead of the whole program.
        #[arg(long)]
        method: Option<String>,
    },
    /// Fine-tune on a labelled corpus and report held-out metrics.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        /// solution_class, clone or name_pred.
        #[arg(long)]
        task: Task,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "both")]
        mode: EmbedMode,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Train a linear probe on frozen embeddings.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "both")]
        feature: EmbedMode,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Cosine similarity of two programs' embeddings.
    CloneSim {
        first: PathBuf,
        second: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the gradient, graph-oracle and invariant suites.
    Selfcheck {
        /// Number of seeds, starting at 0.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

fn read_program(path: &Path) -> Result<Program> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_program(&text).with_context(|| format!("{}", path.display()))
}

fn load_model(path: &Path) -> Result<depvec::gnn::Model> {
    let (model, _) = load_checkpoint(path).with_context(|| format!("cannot load checkpoint {}", path.display()))?;
    Ok(model)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenCorpora { out, seed } => {
            let corpora = generate_desk_corpora(seed.seed);
            corpora.check()?;
            for name in corpora.write(&out)? {
                println!("{}", out.join(name).display());
            }
        }
        Command::Pretrain {
            corpus,
            out,
            strategy,
            gnn,
            layers,
            dropout,
            epochs,
            seed,
        } => {
            let programs: Vec<Program> = load_corpus(&corpus)?.into_iter().map(|r| r.program).collect();
            let config = ModelConfig {
                arch: gnn,
                layers,
                dropout,
                ..ModelConfig::default()
            };
            config.validate()?;
            let mut model = init_model(&programs, config, &LexicalConfig::default(), seed.seed)?;
            let cfg = PretrainConfig {
                strategy,
                epochs,
                seed: seed.seed,
                ..PretrainConfig::default()
            };
            let report = pretrain(&programs, &mut model, &cfg)?;
            save_checkpoint(&model, strategy, &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Embed {
            program,
            checkpoint,
            mode,
            method,
        } => {
            let model = load_model(&checkpoint)?;
            let p = read_program(&program)?;
            let scope = match &method {
                Some(name) => match p.method_index(name) {
                    Some(i) => Scope::Method(&p, i),
                    None => bail!("no method `{name}` in {}", program.display()),
                },
                None => Scope::Program(&p),
            };
            let e = model.embed(scope, mode)?;
            let line: Vec<String> = e.data().iter().map(|x| x.to_string()).collect();
            println!("{}", line.join(" "));
        }
        Command::Finetune {
            checkpoint,
            task,
            data,
            mode,
            epochs,
            json,
            seed,
        } => {
            let mut model = load_model(&checkpoint)?;
            let records = load_corpus(&data)?;
            let dataset = Dataset::for_task(task, &records)?;
            let cfg = FinetuneConfig {
                mode,
                epochs,
                seed: seed.seed,
                ..FinetuneConfig::default()
            };
            let mut outcome = finetune(&dataset, &mut model, &cfg)?;
            outcome.report.checkpoint = Some(checkpoint.display().to_string());
            if json {
                println!("{}", outcome.report.to_json());
            } else {
                print!("{}", outcome.report);
            }
        }
        Command::Probe {
            checkpoint,
            data,
            feature,
            seed,
        } => {
            let model = load_model(&checkpoint)?;
            let dataset = Dataset::classification(&load_corpus(&data)?)?;
            let cfg = ProbeConfig {
                feature,
                seed: seed.seed,
                ..ProbeConfig::default()
            };
            let report = probe(&model, &dataset, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::CloneSim {
            first,
            second,
            checkpoint,
        } => {
            let model = load_model(&checkpoint)?;
            let (a, b) = (read_program(&first)?, read_program(&second)?);
            println!("{:.6}", clone_score(&a, &b, &model, None)?);
        }
        Command::Selfcheck { seeds } => {
            let checks = selfcheck::run_all(0..seeds.max(1))?;
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} checks, {failed} failed", checks.len());
            return Ok(failed == 0);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
