use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use serde_json::json;
use tracelab_cli::adaptation::{cohort, select_epochs};
use tracelab_cli::{adaptation, behavioral, probing, recovery, ExperimentConfig, Lab, ResultRow, ResultTable, Variant};
use tracelab_core::corpus::{serialize, serialize_prefix, write_jsonl, write_split_manifest, SplitLabel, TraceRecord};
use tracelab_core::editsynth::SynthKind;
use tracelab_core::model::{finetune_students, parse_generation, sample, FinetuneConfig};
use tracelab_core::simulator::{build_corpus, write_population_manifest};

#[derive(Parser)]
#[command(name = "tracelab", version, about = "Simulate program-edit traces, train trace models and run experiments")]
struct Cli {
    /// TOML file overriding the default configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the effective configuration.
    Config,
    /// Simulate the population and its raw traces.
    Simulate,
    /// Scrub, deduplicate and write the corpus.
    BuildCorpus,
    /// Write synthetic counterparts of the training traces.
    Synth {
        #[arg(long, value_enum, default_value = "append")]
        kind: Kind,
    },
    /// Write the split manifest.
    Splits,
    /// Train one variant, or every variant without `--variant`.
    Train {
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Adapt the trace model to new students with k traces each.
    Finetune {
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        finetune_seed: u64,
    },
    /// Sample continuations of a corpus record's opening.
    Sample {
        #[arg(long, default_value = "trace")]
        variant: Variant,
        /// Corpus record index.
        #[arg(long, default_value_t = 0)]
        record: usize,
        /// States of the record kept in the prompt.
        #[arg(long, default_value_t = 0)]
        states: usize,
        #[arg(long, default_value_t = 1)]
        n: usize,
    },
    EvalBehavioral,
    Probe,
    Adapt,
    Repair,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Kind {
    Append,
    Complex,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_records(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let mut out = create(path)?;
    write_jsonl(&mut out, records)?;
    out.flush()?;
    info!("wrote {} records to {}", records.len(), path.display());
    Ok(())
}

/// Appends rows to the results table and refreshes the run manifest.
fn record_results(out_dir: &Path, experiment: &str, config: &ExperimentConfig, rows: Vec<ResultRow>) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let csv = out_dir.join("results.csv");
    ResultTable::append_csv(&rows, &csv)?;
    let manifest = json!({
        "experiment": experiment,
        "config_hash": config.hash(),
        "seed": config.seed,
        "rows": rows.len(),
        "results": csv,
    });
    let path = out_dir.join(format!("{experiment}.manifest.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    std::fs::write(out_dir.join("config.toml"), config.to_toml()?)?;
    println!("{}", serde_json::to_string(&manifest)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    let out = cli.out_dir.as_path();
    match cli.command {
        Command::Config => print!("{}", config.to_toml()?),
        Command::Simulate => {
            let lab = Lab::build(config.clone(), Some(out))?;
            let mut manifest = create(&out.join("population.csv"))?;
            write_population_manifest(&mut manifest, &lab.population)?;
            manifest.flush()?;
            let c = &config.corpus;
            let raw = build_corpus(
                &lab.population,
                &lab.templates,
                (c.min_traces, c.max_traces),
                config.derived_seed("corpus"),
            )?;
            write_records(&out.join("raw.jsonl"), &raw)?;
        }
        Command::BuildCorpus => {
            let lab = Lab::build(config, Some(out))?;
            write_records(&out.join("corpus.jsonl"), &lab.records)?;
        }
        Command::Synth { kind } => {
            let lab = Lab::build(config.clone(), Some(out))?;
            let (kind, name) = match kind {
                Kind::Append => (SynthKind::Append, "synthetic.jsonl"),
                Kind::Complex => (SynthKind::Complex, "synthetic-complex.jsonl"),
            };
            let records = lab.synthetic(kind);
            write_records(&out.join(name), &records)?;
        }
        Command::Splits => {
            let lab = Lab::build(config, Some(out))?;
            let mut w = create(&out.join("splits.csv"))?;
            write_split_manifest(&mut w, &lab.splits)?;
            w.flush()?;
            let counts: serde_json::Map<String, serde_json::Value> = SplitLabel::ALL
                .iter()
                .map(|l| (l.as_str().to_string(), json!(lab.splits.indices(*l).len())))
                .collect();
            println!("{}", serde_json::Value::Object(counts));
        }
        Command::Train { variant } => {
            let lab = Lab::build(config, Some(out))?;
            let variants = variant.map_or_else(|| Variant::ALL.to_vec(), |v| vec![v]);
            for v in variants {
                let ckpt = lab.ensure(v)?;
                println!(
                    "{}",
                    json!({
                        "variant": v,
                        "checkpoint": lab.checkpoint_path(v)?,
                        "steps": ckpt.metadata.steps,
                        "best_validation_loss": ckpt.metadata.best_validation_loss,
                    })
                );
            }
        }
        Command::Finetune { k, finetune_seed } => {
            let lab = Lab::build(config.clone(), Some(out))?;
            let base = lab.checkpoint(Variant::Trace)?;
            let students = cohort(&lab)?;
            let set = |group: &[(String, Vec<TraceRecord>)]| -> Vec<_> {
                group
                    .iter()
                    .flat_map(|(_, rs)| rs.iter().take(k + 1).map(|r| serialize(r, false, &lab.opts())))
                    .collect()
            };
            let ft = &config.adaptation.finetune;
            let epochs = if students.selection.is_empty() {
                ft.max_epochs
            } else {
                let probe = finetune_students(&base, &set(&students.selection), k, ft, config.derived_seed("finetune-select"))?;
                select_epochs(&probe.metadata.history, ft.max_epochs)
            };
            let fixed = FinetuneConfig { max_epochs: epochs, patience: epochs + 1, ..ft.clone() };
            let tuned = finetune_students(&base, &set(&students.evaluated), k, &fixed, finetune_seed)?;
            let path = out.join("models").join(format!("finetuned-k{k}-s{finetune_seed}.tlck"));
            std::fs::create_dir_all(path.parent().expect("models directory"))?;
            tuned.save(&path)?;
            println!("{}", json!({ "checkpoint": path, "epochs": epochs, "students": students.evaluated.len() }));
        }
        Command::Sample { variant, record, states, n } => {
            let lab = Lab::build(config.clone(), Some(out))?;
            let r = lab
                .records
                .get(record)
                .with_context(|| format!("record {record} is out of range ({} records)", lab.records.len()))?;
            let model = lab.checkpoint(variant)?;
            let prompt = serialize_prefix(r, states, false, &lab.opts());
            for j in 0..n {
                let g = sample(&model.model, &prompt, Some(&r.student_id), config.eval.top_p, config.derived_seed(&format!("sample:{j}")))?;
                let parsed = parse_generation(&g.full_text());
                println!("{}", json!({ "text": g.text, "reached_eos": g.reached_eos, "states": parsed.states }));
            }
        }
        Command::EvalBehavioral => {
            let lab = Lab::build(config.clone(), Some(out))?;
            record_results(out, "behavioral", &config, behavioral::run(&lab)?)?;
        }
        Command::Probe => {
            let lab = Lab::build(config.clone(), Some(out))?;
            record_results(out, "probe", &config, probing::run(&lab)?)?;
        }
        Command::Adapt => {
            let lab = Lab::build(config.clone(), Some(out))?;
            record_results(out, "adaptation", &config, adaptation::run(&lab)?)?;
        }
        Command::Repair => {
            let lab = Lab::build(config.clone(), Some(out))?;
            record_results(out, "recovery", &config, recovery::run(&lab)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(ToString::to_string).collect();
            eprintln!("{}", json!({ "error": chain.first(), "causes": &chain[1..] }));
            ExitCode::FAILURE
        }
    }
}
