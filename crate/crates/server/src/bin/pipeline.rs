use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use mmtl_server::{api, evaluate, store};
use mmtl_sim::builtin::{self, BENCHMARK_SIZE};
use mmtl_sim::ScenarioSpec;

const DEFAULT_ROOT: &str = "sessions";

#[derive(Parser)]
#[command(name = "pipeline", about = "Multimodal classroom timeline pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process a session manifest into the store.
    Process {
        manifest: PathBuf,
        #[arg(long, env = "PIPELINE_ROOT", default_value = DEFAULT_ROOT)]
        root: PathBuf,
    },
    /// Serve processed sessions over HTTP.
    Serve {
        #[arg(long, env = "PIPELINE_ROOT", default_value = DEFAULT_ROOT)]
        root: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
    /// Generate a synthetic session. SCENARIO is a bundled name
    /// (golden, narrative, stationary, perf, benchmark-NN, benchmark) or a
    /// path to a scenario JSON file.
    Simulate {
        scenario: String,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score re-identification on a fixture directory or a directory of
    /// fixtures.
    EvaluateReid { dir: PathBuf },
}

fn load_scenario(name: &str) -> anyhow::Result<ScenarioSpec> {
    if let Some(spec) = builtin::builtin(name) {
        return Ok(spec);
    }
    let path = PathBuf::from(name);
    if !path.is_file() {
        bail!("unknown scenario `{name}`; bundled: {}", builtin::NAMES.join(", "));
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ScenarioSpec::from_json(&text)?)
}

fn simulate(scenario: &str, seed: Option<u64>, out: &std::path::Path) -> anyhow::Result<()> {
    let specs = if scenario == "benchmark" {
        (0..BENCHMARK_SIZE).map(|i| (Some(format!("{:02}", i)), builtin::benchmark(i))).collect()
    } else {
        vec![(None, load_scenario(scenario)?)]
    };
    for (sub, mut spec) in specs {
        if let Some(s) = seed {
            spec.seed = s;
        }
        let dir = sub.map_or_else(|| out.to_path_buf(), |s| out.join(s));
        mmtl_sim::generate(&spec)?.write_to(&dir)?;
        println!("{}", dir.join("manifest.json").display());
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Process { manifest, root } => {
            let dir = store::process_session(&manifest, &root)?;
            println!("{}", dir.display());
        }
        Command::Serve { root, bind } => {
            if !root.is_dir() {
                bail!("store root {} does not exist", root.display());
            }
            let runtime = tokio::runtime::Runtime::new()?;
            eprintln!("serving {} on http://{bind}", root.display());
            runtime.block_on(api::serve(store::SessionStore::new(root), &bind))?;
        }
        Command::Simulate { scenario, seed, out } => simulate(&scenario, seed, &out)?,
        Command::EvaluateReid { dir } => {
            let score = evaluate::evaluate_suite(&dir)?;
            for s in &score.scenarios {
                println!("{}\t{}/{}\t{:.4}", s.scenario, s.score.correct, s.score.total, s.score.rate);
            }
            println!("pooled\t{}/{}\t{:.4}", score.correct, score.total, score.pooled_rate);
        }
    }
    Ok(())
}
