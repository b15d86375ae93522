//! Command-line front end: dataset generation and ingestion, the three
//! evaluation scenarios, report inspection, and ledger verification.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use hbfl::config::ExperimentConfig;
use hbfl::contract::ProcessOptions;
use hbfl::data::{
    drop_flow_identifiers, generate_synthetic, load_netflow_csv, to_labeled, write_csv,
    LabeledData, NetflowSchema,
};
use hbfl::ledger::{ChainVerdict, Ledger};
use hbfl::report::{build_report, read_json, write_csv as write_report_csv, write_json};
use hbfl::scenario::{prepare, run_scenario};
use hbfl::{Error, Result};

#[derive(Parser)]
#[command(
    name = "hbfl",
    about = "Hierarchical blockchain-based federated learning simulator for IoT intrusion detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic five-class dataset as a CSV.
    Synth {
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check that a NetFlow CSV ingests cleanly and summarise it.
    Ingest {
        /// Input CSV path.
        #[arg(long)]
        data: PathBuf,
        /// Optional TOML schema override.
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Run an evaluation scenario and export the metric report.
    Run {
        /// 1 = train on org k1, test on k2; 2 = the reverse;
        /// 3 = full hierarchical run over the contract workflow.
        #[arg(long)]
        scenario: u8,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Input CSV; omit (or pass --synthetic) to use generated data.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Force the synthetic dataset even if the config names a CSV.
        #[arg(long)]
        synthetic: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Global round count override.
        #[arg(long)]
        rounds: Option<u32>,
        /// Seeded repetition count override.
        #[arg(long)]
        repeats: Option<usize>,
        /// Per-class row cap override for attack classes.
        #[arg(long)]
        attack_cap: Option<usize>,
        /// Output directory for report CSV/JSON and (scenario 3) the chain.
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Print the final-round summary of an exported JSON report.
    Report {
        #[arg(long)]
        json: PathBuf,
    },
    /// Re-verify an exported chain file against its metadata.
    VerifyLedger {
        /// Chain bytes as written by `run --scenario 3`.
        #[arg(long)]
        chain: PathBuf,
        /// Metadata JSON holding the admin id and public key.
        #[arg(long)]
        meta: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn load_data(config: &ExperimentConfig, data: &Option<PathBuf>, synthetic: bool) -> Result<LabeledData> {
    let csv_path = if synthetic {
        None
    } else {
        data.clone().or_else(|| config.dataset.csv_path.clone())
    };
    match csv_path {
        Some(path) => {
            let schema = match &config.dataset.schema_path {
                Some(p) => NetflowSchema::load(p)?,
                None => NetflowSchema::default(),
            };
            let raw = load_netflow_csv(&path, &schema)?;
            log::info!(
                "loaded {} rows from {} ({} malformed rows skipped)",
                raw.rows(),
                path.display(),
                raw.skipped_rows
            );
            let raw = drop_flow_identifiers(&raw, &schema.identifier_columns)?;
            to_labeled(&raw)
        }
        None => generate_synthetic(&config.synthetic.to_spec(), config.seed),
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, config, seed } => {
            let mut config = load_config(&config)?;
            if let Some(s) = seed {
                config.seed = s;
            }
            let data = generate_synthetic(&config.synthetic.to_spec(), config.seed)?;
            write_csv(&data, &out)?;
            println!(
                "wrote {} rows x {} features to {}",
                data.rows(),
                data.feature_names.len(),
                out.display()
            );
            Ok(())
        }
        Command::Ingest { data, schema } => {
            let schema = match schema {
                Some(p) => NetflowSchema::load(&p)?,
                None => NetflowSchema::default(),
            };
            let raw = load_netflow_csv(&data, &schema)?;
            let kept = drop_flow_identifiers(&raw, &schema.identifier_columns)?;
            let labeled = to_labeled(&kept)?;
            let mut counts = std::collections::BTreeMap::new();
            for c in &labeled.attack_classes {
                *counts.entry(c.as_str()).or_insert(0usize) += 1;
            }
            println!(
                "{} rows, {} features, {} malformed rows skipped",
                labeled.rows(),
                labeled.feature_names.len(),
                raw.skipped_rows
            );
            for (class, n) in counts {
                println!("  {class}: {n}");
            }
            Ok(())
        }
        Command::Run {
            scenario,
            config,
            data,
            synthetic,
            seed,
            rounds,
            repeats,
            attack_cap,
            out_dir,
        } => {
            let mut config = load_config(&config)?;
            if let Some(s) = seed {
                config.seed = s;
            }
            if let Some(t) = rounds {
                config.rounds.global_rounds = t;
            }
            if let Some(r) = repeats {
                config.repeats = r;
            }
            if let Some(cap) = attack_cap {
                config.partition.attack_cap = Some(cap);
            }
            config.validate()?;

            let labeled = load_data(&config, &data, synthetic)?;
            let prepared = prepare(&labeled, &config.partition, config.split_ratio, config.seed)?;
            let options = ProcessOptions {
                policy: config.validation.clone(),
                violation_mode: config.violation_mode,
                ledger: config.ledger.clone(),
                ..Default::default()
            };

            std::fs::create_dir_all(&out_dir)?;
            let mut runs = Vec::with_capacity(config.repeats);
            let mut process = None;
            for r in 0..config.repeats {
                let result = run_scenario(
                    scenario,
                    &prepared,
                    &config.hyperparameters,
                    &config.rounds,
                    config.seed.wrapping_add(r as u64),
                    config.threshold,
                    &options,
                )?;
                if r == 0 {
                    process = result.process;
                }
                runs.push(result.per_round);
            }
            let report = build_report(scenario, &runs)?;

            let csv_path = out_dir.join(format!("scenario{scenario}.csv"));
            let json_path = out_dir.join(format!("scenario{scenario}.json"));
            write_report_csv(&report, &csv_path)?;
            write_json(&report, &json_path)?;
            println!("report: {} and {}", csv_path.display(), json_path.display());

            if let Some(outcome) = process {
                let chain_path = out_dir.join("chain.bin");
                let meta_path = out_dir.join("chain.meta.json");
                std::fs::write(&chain_path, &outcome.chain_bytes)?;
                let meta = json!({
                    "admin_id": outcome.admin_id,
                    "admin_public_key": hex::encode(outcome.admin_public_key),
                });
                std::fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?)?;
                println!(
                    "ledger: {} ({} audit records), metadata {}",
                    chain_path.display(),
                    outcome.audit.len(),
                    meta_path.display()
                );
            }

            println!("final round (mean of {} repetition(s)):", report.repeats);
            println!("  class            accuracy       dr      far       f1");
            for e in report.final_round() {
                println!(
                    "  {:<16} {:>8} {:>8} {:>8} {:>8}",
                    e.class,
                    fmt(e.accuracy.mean),
                    fmt(e.dr.mean),
                    fmt(e.far.mean),
                    fmt(e.f1.mean)
                );
            }
            Ok(())
        }
        Command::Report { json } => {
            let report = read_json(&json)?;
            println!(
                "scenario {} over {} repetition(s), {} rows",
                report.scenario,
                report.repeats,
                report.entries.len()
            );
            println!("  round class            accuracy       dr      far       f1");
            for e in &report.entries {
                println!(
                    "  {:>5} {:<16} {:>8} {:>8} {:>8} {:>8}",
                    e.round,
                    e.class,
                    fmt(e.accuracy.mean),
                    fmt(e.dr.mean),
                    fmt(e.far.mean),
                    fmt(e.f1.mean)
                );
            }
            Ok(())
        }
        Command::VerifyLedger { chain, meta } => {
            let bytes = std::fs::read(&chain)?;
            let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(&meta)?)?;
            let admin_id = meta["admin_id"]
                .as_str()
                .ok_or_else(|| Error::Data("metadata missing admin_id".into()))?;
            let key_hex = meta["admin_public_key"]
                .as_str()
                .ok_or_else(|| Error::Data("metadata missing admin_public_key".into()))?;
            let key_bytes =
                hex::decode(key_hex).map_err(|e| Error::Data(format!("bad key hex: {e}")))?;
            let admin_key: [u8; 32] = key_bytes
                .try_into()
                .map_err(|_| Error::Data("admin public key must be 32 bytes".into()))?;
            match Ledger::verify_chain_bytes(&bytes, &admin_key, admin_id) {
                ChainVerdict::Ok => {
                    let blocks = Ledger::decode_chain(&bytes)?;
                    let txs: usize = blocks.iter().map(|b| b.txs.len()).sum();
                    println!("chain OK: {} blocks, {} transactions", blocks.len(), txs);
                    Ok(())
                }
                ChainVerdict::Corrupt { height, reason } => {
                    Err(Error::Data(format!("chain corrupt at block {height}: {reason}")))
                }
            }
        }
    }
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
