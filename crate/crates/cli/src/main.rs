use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparse_attack::harness::{
    emit_report, parse_config, parse_pairs, run_experiment_cached, BaseCache, ExperimentConfig, Method, ReportFormat, RunRecord,
};
use sparse_attack::Error;

#[derive(Parser)]
#[command(name = "sparse-attack", version, about = "Train, attack and evaluate cooperative multi-agent policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train base team policies and evaluate them unattacked (`attack.method = none`).
    TrainBase(RunArgs),
    /// Train learned attackers (`opt` or `rl-f`) and evaluate them.
    TrainAttack(RunArgs),
    /// Evaluate heuristic attacks (`ra-r`, `ra-l`, `ru-b`, `ru-d`).
    AttackBaseline(RunArgs),
    /// Solve tree games exactly (`oracle-budget`, `oracle-reg`).
    Oracle(RunArgs),
    /// Run any configuration.
    Evaluate(RunArgs),
    /// Print stored run records.
    Report {
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        #[arg(required = true)]
        records: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `run.master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Delimited,
}

enum Family {
    Base,
    Learned,
    Heuristic,
    Oracle,
    Any,
}

impl Family {
    fn admits(&self, m: &Method) -> bool {
        match self {
            Family::Base => matches!(m, Method::None),
            Family::Learned => m.learns(),
            Family::Heuristic => matches!(m, Method::Random { .. } | Method::RuleBased { .. } | Method::Dense),
            Family::Oracle => m.is_oracle(),
            Family::Any => true,
        }
    }
}

fn load_configs(path: &Path, seed: Option<u64>) -> Result<Vec<ExperimentConfig>, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let Some(seed) = seed else {
        return parse_config(&text);
    };
    let mut pairs = parse_pairs(&text)?;
    pairs.insert("run.master_seed".into(), seed.to_string());
    let text: String = pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    parse_config(&text)
}

fn run(args: &RunArgs, family: Family) -> Result<bool, Error> {
    let configs = load_configs(&args.config, args.seed)?;
    if let Some(c) = configs.iter().find(|c| !family.admits(&c.method)) {
        return Err(Error::Config(format!("attack method {} does not belong to this subcommand", c.method.label())));
    }
    let mut records = Vec::with_capacity(configs.len());
    let mut cache = BaseCache::new();
    for config in &configs {
        let record = run_experiment_cached(config, Some(&args.out), &mut cache)?;
        eprintln!(
            "{} {} -> {}/{}.json ({:.1}s{})",
            record.method,
            record.parameter,
            args.out.display(),
            &record.config_hash[..12],
            record.wall_clock_secs,
            if record.degraded { ", degraded" } else { "" }
        );
        for s in record.seeds.iter().filter(|s| s.error.is_some()) {
            eprintln!("  seed {} failed: {}", s.seed_index, s.error.as_deref().unwrap_or_default());
        }
        records.push(record);
    }
    print!("{}", emit_report(&records, ReportFormat::Table));
    Ok(records.iter().any(|r| r.degraded))
}

fn report(format: Format, paths: &[PathBuf]) -> Result<bool, Error> {
    let records = paths.iter().map(|p| RunRecord::load(p)).collect::<Result<Vec<_>, _>>()?;
    let format = match format {
        Format::Table => ReportFormat::Table,
        Format::Delimited => ReportFormat::Delimited,
    };
    print!("{}", emit_report(&records, format));
    Ok(records.iter().any(|r| r.degraded))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::TrainBase(a) => run(a, Family::Base),
        Command::TrainAttack(a) => run(a, Family::Learned),
        Command::AttackBaseline(a) => run(a, Family::Heuristic),
        Command::Oracle(a) => run(a, Family::Oracle),
        Command::Evaluate(a) => run(a, Family::Any),
        Command::Report { format, records } => report(*format, records),
    };
    match outcome {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(3),
        Err(e @ Error::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
