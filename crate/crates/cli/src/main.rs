//! Command-line front end for the joint language/speaker recognition
//! pipeline. Exit codes: 0 success, 1 validation error, 2 numeric
//! failure, 3 I/O or parse error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lsrec_core::config::ExperimentConfig;
use lsrec_core::embedding::Task;
use lsrec_core::error::{CoreError, Result};
use lsrec_core::experiment::{
    evaluate_lre, evaluate_sre, render_ablation_table, render_loss_trace, run_ablation,
    train_joint, train_single_task, CropRule, EvalModel, LreBackend,
};
use lsrec_core::features::{generate_corpus, load_archive, save_archive, Corpus, OffsetRule, Split};
use lsrec_core::multitask::{FeedbackRouting, MultiTaskDims};
use lsrec_core::serialize::{
    load_model, save_lre_scores, save_model, save_rvectors, save_sre_scores, ModelFile,
};
use lsrec_core::training::gradcheck;

#[derive(Parser)]
#[command(name = "lsrec", version, about = "joint language and speaker recognition pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainMode {
    Lre,
    Sre,
    Multitask,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Language,
    Speaker,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Language => Task::Language,
            TaskArg::Speaker => Task::Speaker,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Enroll,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Enroll => Split::Enroll,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus archive from a config file.
    Synth {
        /// Flat key=value config; omit to use defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for manifest.tsv and features.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a corpus archive's train split.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Corpus archive directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: TrainMode,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-epoch loss trace (TSV).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Check analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 4)]
        input: usize,
        #[arg(long, default_value_t = 6)]
        cell: usize,
        #[arg(long, default_value_t = 3)]
        rproj: usize,
        #[arg(long, default_value_t = 3)]
        pproj: usize,
        #[arg(long, default_value_t = 7)]
        t_len: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Feedback sinks: comma list of i,f,o,g or `none`.
        #[arg(long, default_value = "g")]
        sinks: String,
        /// Feedback sources: comma list of r,p.
        #[arg(long, default_value = "r,p")]
        sources: String,
    },
    /// Extract utterance embeddings with a trained model.
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long, value_enum)]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the test split and write per-trial scores or decisions.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        /// Language backend (ignored for speaker scoring, which is cosine).
        #[arg(long, default_value = "softmax")]
        backend: String,
        /// Crop test utterances to this many frames before scoring.
        #[arg(long)]
        short: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute metric reports (EER and/or identification rate).
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long, default_value = "softmax")]
        backend: String,
        #[arg(long)]
        short: Option<usize>,
        /// Optional TSV report destination; the table always prints.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep feedback routings under full/short conditions.
    Ablation {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Corpus archive; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CoreError::io(path, e))
}

fn crop_rule(short: Option<usize>, corpus_seed: u64) -> CropRule {
    short.map(|n| (n, OffsetRule::SeededRandom(corpus_seed)))
}

fn eval_model(file: &ModelFile) -> EvalModel<'_> {
    match file {
        ModelFile::Single(m) => EvalModel::Single(m),
        ModelFile::Multi(m) => EvalModel::Multi(m),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out } => {
            let cfg = load_config(&config)?;
            let corpus = generate_corpus(&cfg.synth)?;
            save_archive(&out, &corpus)?;
            let speakers: std::collections::HashSet<&str> = corpus
                .manifest
                .entries
                .iter()
                .map(|e| e.speaker.as_str())
                .collect();
            println!(
                "wrote {} utterances ({} speakers) to {}",
                corpus.sequences.len(),
                speakers.len(),
                out.display()
            );
        }
        Command::Train {
            config,
            data,
            mode,
            out,
            trace,
        } => {
            let cfg = load_config(&config)?;
            let corpus = load_archive(&data)?;
            let (model, loss_trace) = match mode {
                TrainMode::Lre => {
                    let (m, t) = train_single_task(&corpus, Task::Language, &cfg)?;
                    (ModelFile::Single(m), t)
                }
                TrainMode::Sre => {
                    let (m, t) = train_single_task(&corpus, Task::Speaker, &cfg)?;
                    (ModelFile::Single(m), t)
                }
                TrainMode::Multitask => {
                    let (m, t) = train_joint(&corpus, &cfg)?;
                    (ModelFile::Multi(m), t)
                }
            };
            save_model(&out, &model)?;
            if let Some(trace_path) = trace {
                write_text(&trace_path, &render_loss_trace(&loss_trace))?;
            }
            println!(
                "trained {} epochs, final mean frame loss {:.6}",
                loss_trace.len(),
                loss_trace.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Gradcheck {
            input,
            cell,
            rproj,
            pproj,
            t_len,
            seed,
            sinks,
            sources,
        } => {
            let routing = FeedbackRouting::parse(&sinks, &sources)?;
            let dims = MultiTaskDims {
                input,
                cell,
                rproj,
                pproj,
                n_languages: 2,
                n_speakers: 3,
            };
            let report = gradcheck(dims, routing, t_len, seed)?;
            for (name, err) in &report.blocks {
                println!("{name}\t{err:.3e}");
            }
            println!("max_rel_error\t{:.3e}", report.max_rel_error);
            if !(report.max_rel_error < 1e-4) {
                return Err(CoreError::numeric(format!(
                    "gradient check failed: max relative error {:.3e} >= 1e-4",
                    report.max_rel_error
                )));
            }
        }
        Command::Extract {
            model,
            data,
            task,
            split,
            out,
        } => {
            let file = load_model(&model)?;
            let corpus = load_archive(&data)?;
            let m = eval_model(&file);
            let task: Task = task.into();
            let mut rvectors = Vec::new();
            for seq in corpus.split_sequences(split.into()) {
                rvectors.push(m.embed(seq, task)?);
            }
            save_rvectors(&out, &rvectors)?;
            println!("wrote {} embeddings to {}", rvectors.len(), out.display());
        }
        Command::Score {
            model,
            data,
            task,
            backend,
            short,
            out,
        } => {
            let file = load_model(&model)?;
            let corpus = load_archive(&data)?;
            let m = eval_model(&file);
            let crop = crop_rule(short, 0);
            match Task::from(task) {
                Task::Speaker => {
                    let eval = evaluate_sre(m, &corpus, &crop)?;
                    save_sre_scores(&out, &eval.scores)?;
                    println!("wrote {} trial scores to {}", eval.scores.len(), out.display());
                }
                Task::Language => {
                    let backend = LreBackend::from_str(&backend)?;
                    let eval = evaluate_lre(m, &corpus, backend, &crop)?;
                    save_lre_scores(&out, &eval.decisions)?;
                    println!(
                        "wrote {} decisions ({}) to {}",
                        eval.decisions.len(),
                        backend.as_str(),
                        out.display()
                    );
                }
            }
        }
        Command::Eval {
            model,
            data,
            task,
            backend,
            short,
            out,
        } => {
            let file = load_model(&model)?;
            let corpus = load_archive(&data)?;
            let m = eval_model(&file);
            let crop = crop_rule(short, 0);
            let report = match Task::from(task) {
                Task::Speaker => evaluate_sre(m, &corpus, &crop)?.report,
                Task::Language => {
                    let backend = LreBackend::from_str(&backend)?;
                    evaluate_lre(m, &corpus, backend, &crop)?.report
                }
            };
            print!("{}", report.render_table());
            if let Some(out) = out {
                write_text(&out, &report.render_tsv())?;
            }
        }
        Command::Ablation { config, data, out } => {
            let cfg = load_config(&config)?;
            let corpus: Corpus = match data {
                Some(dir) => load_archive(&dir)?,
                None => generate_corpus(&cfg.synth)?,
            };
            let rows = run_ablation(&corpus, &cfg)?;
            let table = render_ablation_table(&rows);
            print!("{table}");
            write_text(&out, &table)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not errors
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
