use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use moiforge::experiments::{
    catalog, pt_run, run_experiment, write_roundtrips_csv, write_swap_stats_csv, Check, ExperimentConfig,
    ExperimentKind, ExperimentOutcome, PtRunConfig,
};
use moiforge::mcmc::write_trace_csv;
use moiforge::RngStream;

#[derive(Parser)]
#[command(name = "moiforge", version, about = "Adaptive MCMC and stochastic approximation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from flags or a config file.
    Run(RunArgs),
    /// List the available experiments.
    List {
        #[arg(long)]
        json: bool,
    },
    /// Counterexample figures, noise ball and convergence bounds.
    Theorylab(Common),
    /// Parallel tempering.
    Pt {
        #[command(subcommand)]
        command: PtCommand,
    },
    /// Transport-map MCMC.
    Transport {
        #[command(subcommand)]
        command: TransportCommand,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    experiment: Option<ExperimentKind>,
    /// TOML or JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum PtCommand {
    /// One NRPT run from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// IMH and NRPT acceptance against dimension.
    Scaling {
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum TransportCommand {
    /// Adaptive transport MCMC; the config holds the experiment settings.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

/// Parses a config as JSON when the extension says so, TOML otherwise.
fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn config_overrides(path: &Path) -> Result<Map<String, Value>> {
    match read_config::<Value>(path)? {
        Value::Object(m) => Ok(m),
        _ => bail!("{} must hold a table of settings", path.display()),
    }
}

/// SHA-256 of `blob <len>\0<content>`, the git object layout.
fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Serialize)]
struct FileHash {
    file: String,
    sha256: String,
}

/// Per-file hashes and one hash over the sorted `name hash` lines.
fn hash_outputs(dir: &Path, files: &[PathBuf]) -> Result<(Vec<FileHash>, String)> {
    let mut hashes = files
        .iter()
        .map(|p| {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            let name = p.strip_prefix(dir).unwrap_or(p).to_string_lossy().into_owned();
            Ok(FileHash { file: name, sha256: blob_hash(&bytes) })
        })
        .collect::<Result<Vec<_>>>()?;
    hashes.sort_by(|a, b| a.file.cmp(&b.file));
    let mut tree = Sha256::new();
    for h in &hashes {
        tree.update(format!("{} {}\n", h.sha256, h.file).as_bytes());
    }
    Ok((hashes, hex::encode(tree.finalize())))
}

struct Finished {
    config: Value,
    dir: PathBuf,
    outcome: ExperimentOutcome,
    wall_time: f64,
}

/// Writes `manifest.json` and returns the exit code: 0 iff every check passed.
fn finish(f: Finished) -> Result<ExitCode> {
    let (outputs, content_hash) = hash_outputs(&f.dir, &f.outcome.files)?;
    let manifest = json!({
        "config": f.config,
        "outputs": outputs,
        "content_hash": content_hash,
        "checks": f.outcome.checks,
        "passed": f.outcome.passed(),
        "wall_time_seconds": f.wall_time,
        "timing": f.outcome.timing,
    });
    let path = f.dir.join("manifest.json");
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    if f.outcome.passed() {
        eprintln!("wrote {} files to {} ({content_hash})", outputs.len() + 1, f.dir.display());
        Ok(ExitCode::SUCCESS)
    } else {
        let failed: Vec<&Check> = f.outcome.failures();
        let report = json!({ "status": "failed", "failed_checks": failed, "manifest": path });
        println!("{}", serde_json::to_string_pretty(&report)?);
        Ok(ExitCode::from(1))
    }
}

fn run_config(config: ExperimentConfig) -> Result<ExitCode> {
    config.validate()?;
    let start = Instant::now();
    let outcome = run_experiment(&config).with_context(|| format!("running {}", config.experiment))?;
    finish(Finished {
        config: serde_json::to_value(&config)?,
        dir: config.output_dir.clone(),
        outcome,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn default_out(kind: &str) -> PathBuf {
    PathBuf::from("out").join(kind)
}

fn build_config(kind: ExperimentKind, common: Common, overrides: Map<String, Value>) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(kind, common.seed.unwrap_or(0), common.out.unwrap_or_else(|| default_out(kind.name())));
    c.overrides = overrides;
    c
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let mut config = match (&args.config, args.experiment) {
        (Some(path), _) => {
            let mut c: ExperimentConfig = read_config(path)?;
            if let Some(k) = args.experiment {
                c.experiment = k;
            }
            c
        }
        (None, Some(k)) => ExperimentConfig::new(k, 0, default_out(k.name())),
        (None, None) => bail!("give --experiment or --config"),
    };
    if let Some(s) = args.common.seed {
        config.seed = s;
    }
    if let Some(o) = args.common.out {
        config.output_dir = o;
    }
    run_config(config)
}

fn cmd_list(as_json: bool) -> Result<ExitCode> {
    let entries = catalog();
    let mut out = std::io::stdout().lock();
    if as_json {
        writeln!(out, "{}", serde_json::to_string_pretty(&entries)?)?;
    } else {
        for e in entries {
            writeln!(out, "{:<16} {:<8} {}", e.name, e.expected_runtime, e.description)?;
            writeln!(out, "{:<16} outputs: {}", "", e.outputs.join(", "))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_pt_run(path: &Path, common: Common) -> Result<ExitCode> {
    let config: PtRunConfig = read_config(path)?;
    let seed = common.seed.unwrap_or(0);
    let dir = common.out.unwrap_or_else(|| default_out("pt-run"));
    fs::create_dir_all(&dir)?;
    let start = Instant::now();
    let out = pt_run(&config, &RngStream::new(seed, 0))?;
    let mut files = Vec::new();
    let mut write = |name: &str, f: &dyn Fn(&mut BufWriter<File>) -> moiforge::Result<()>| -> Result<()> {
        let p = dir.join(name);
        let mut w = BufWriter::new(File::create(&p)?);
        f(&mut w)?;
        w.flush()?;
        files.push(p);
        Ok(())
    };
    write("swap_stats.csv", &|w| write_swap_stats_csv(out.swap_stats(), w))?;
    write("roundtrips.csv", &|w| write_roundtrips_csv(out.round_trips(), w))?;
    write("trace.csv", &|w| write_trace_csv(&out.target_trace, w))?;
    let outcome = ExperimentOutcome { files, ..Default::default() };
    finish(Finished {
        config: json!({ "command": "pt run", "seed": seed, "target_chain": out.target_index, "run": config }),
        dir,
        outcome,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("MOIFORGE_THREADS") {
        let n: usize = n.parse().with_context(|| format!("MOIFORGE_THREADS must be a positive integer, got {n:?}"))?;
        if n == 0 {
            bail!("MOIFORGE_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::List { json } => cmd_list(json),
        Command::Theorylab(common) => run_config(build_config(ExperimentKind::Theorylab, common, Map::new())),
        Command::Pt { command: PtCommand::Run { config, common } } => cmd_pt_run(&config, common),
        Command::Pt { command: PtCommand::Scaling { dims, common } } => {
            let mut overrides = Map::new();
            if let Some(d) = dims {
                overrides.insert("dims".into(), json!(d));
            }
            run_config(build_config(ExperimentKind::PtScaling, common, overrides))
        }
        Command::Transport { command: TransportCommand::Run { config, common } } => {
            let overrides = match config {
                Some(p) => config_overrides(&p)?,
                None => Map::new(),
            };
            run_config(build_config(ExperimentKind::Transport, common, overrides))
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            println!("{}", json!({ "status": "error", "error": chain.join(": ") }));
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git_sha256_objects() {
        assert_eq!(blob_hash(b""), "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813");
        assert_eq!(blob_hash(b"hello\n"), "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4");
    }

    #[test]
    fn content_hash_ignores_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        fs::write(&a, "x\n").unwrap();
        fs::write(&b, "y\n").unwrap();
        let (h1, t1) = hash_outputs(dir.path(), &[a.clone(), b.clone()]).unwrap();
        let (_, t2) = hash_outputs(dir.path(), &[b.clone(), a]).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(h1[0].file, "a.csv");
        fs::write(&b, "z\n").unwrap();
        let (_, t3) = hash_outputs(dir.path(), &[b]).unwrap();
        assert_ne!(t1, t3);
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let c = Cli::try_parse_from(["moiforge", "pt", "scaling", "--dims", "1,2,4", "--seed", "3"]).unwrap();
        assert!(matches!(c.command, Command::Pt { command: PtCommand::Scaling { dims: Some(ref d), .. } } if d == &[1, 2, 4]));
        assert!(Cli::try_parse_from(["moiforge", "run", "--experiment", "pt-variational"]).is_ok());
        assert!(Cli::try_parse_from(["moiforge", "run", "--experiment", "pt_variational"]).is_err());
    }
}
