use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use mas_board::dataset::Split;
use mas_board::pipeline::{
    self, PipelineError, RunConfig, RunOptions, EXIT_GATE_DENIED, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, REPORT_FILE,
    TEMPLATE_FILE,
};
use mas_board::prosocial::{gate, IssueFlag, DEFAULT_THRESHOLD};
use mas_board::report::ReportConfig;

/// Structure-following multiagent diagnosis boards.
#[derive(Debug, Parser)]
#[command(name = "mas-board", version)]
struct Cli {
    /// Worker threads for agent fan-out (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate the prosocial gate only.
    Gate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// NAME=true|false[:WEIGHT]; weights default to equal shares.
        #[arg(long = "flag")]
        flags: Vec<String>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Fit the reference model and write the structure template.
    Learn {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set")]
        overrides: Vec<String>,
        /// Output file; defaults to <output_dir>/template.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print notes for a split as JSON lines.
    Serialize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set")]
        overrides: Vec<String>,
        #[arg(long, value_parser = parse_split)]
        split: Option<Split>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Full pipeline: gate, structure, rounds, record log and report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set")]
        overrides: Vec<String>,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace an existing record log.
        #[arg(long)]
        force: bool,
    },
    /// Rebuild report.json from an existing run directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
        /// Config supplying report and vocabulary settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split `{s}` (train, valid, test)")),
    }
}

fn parse_flags(raw: &[String]) -> Result<Vec<IssueFlag>, PipelineError> {
    let bad = |f: &str| PipelineError::Config(format!("flag `{f}` is not NAME=true|false[:WEIGHT]"));
    let mut out = Vec::new();
    for f in raw {
        let (name, rest) = f.split_once('=').ok_or_else(|| bad(f))?;
        let (value, weight) = match rest.split_once(':') {
            Some((v, w)) => (v, Some(w.parse::<f64>().map_err(|_| bad(f))?)),
            None => (rest, None),
        };
        let asserted = match value {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" => false,
            _ => return Err(bad(f)),
        };
        out.push((name.to_string(), asserted, weight));
    }
    let n = out.len() as f64;
    Ok(out
        .into_iter()
        .map(|(name, asserted, w)| IssueFlag::new(name, asserted, w.unwrap_or(1.0 / n)))
        .collect())
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| PipelineError::Runtime(format!("{}: {e}", path.display())))
}

fn execute(cmd: Command) -> Result<i32, PipelineError> {
    match cmd {
        Command::Gate {
            config,
            flags,
            threshold,
        } => {
            let (flags, cfg_threshold) = match (&config, flags.is_empty()) {
                (Some(path), true) => {
                    let cfg = RunConfig::load(path, &[])?;
                    (cfg.prosocial.flags, cfg.prosocial.threshold)
                }
                (None, false) => (parse_flags(&flags)?, DEFAULT_THRESHOLD),
                _ => return Err(PipelineError::Config("pass either --config or --flag".into())),
            };
            let t = threshold.unwrap_or(cfg_threshold);
            let d = gate(&flags, t).map_err(|e| PipelineError::Config(e.to_string()))?;
            println!(
                "pscore {} threshold {} {}",
                d.display_score(),
                t,
                if d.permitted { "permitted" } else { "denied" }
            );
            Ok(if d.permitted { EXIT_OK } else { EXIT_GATE_DENIED })
        }
        Command::Learn {
            config,
            overrides,
            out,
        } => {
            let cfg = RunConfig::load(&config, &overrides)?;
            let ds = pipeline::load_dataset(&cfg)?;
            let doc = pipeline::learn(&cfg, &ds)?;
            let path = out.unwrap_or_else(|| cfg.output_dir.join(TEMPLATE_FILE));
            write_file(&path, &doc.to_json())?;
            let _ = writeln!(std::io::stdout().lock(), "{}", doc.template.rendered_text);
            Ok(EXIT_OK)
        }
        Command::Serialize {
            config,
            overrides,
            split,
            limit,
        } => {
            let cfg = RunConfig::load(&config, &overrides)?;
            let notes = pipeline::notes_preview(&cfg, split, limit)?;
            let mut stdout = std::io::stdout().lock();
            for n in notes {
                let line = serde_json::to_string(&n).expect("note serializes");
                if writeln!(stdout, "{line}").is_err() {
                    break;
                }
            }
            Ok(EXIT_OK)
        }
        Command::Run {
            config,
            mut overrides,
            out,
            force,
        } => {
            if let Some(out) = out {
                let abs = std::path::absolute(&out).unwrap_or(out);
                overrides.push(format!("output_dir={}", serde_json::to_string(&abs).expect("path serializes")));
            }
            let cfg = RunConfig::load(&config, &overrides)?;
            let s = pipeline::run(&cfg, RunOptions { force })?;
            println!(
                "pscore {} permitted; {} round(s){}; outputs in {}",
                s.decision.display_score(),
                s.rounds,
                if s.stopped_early { ", stopped early" } else { "" },
                s.output_dir.display()
            );
            Ok(EXIT_OK)
        }
        Command::Report { dir, config, out } => {
            let (report_cfg, codes) = match config {
                Some(p) => {
                    let cfg = RunConfig::load(&p, &[])?;
                    (cfg.report.clone(), cfg.code_map()?)
                }
                None => (ReportConfig::default(), Default::default()),
            };
            let report = pipeline::report_from_dir(&dir, &report_cfg, &codes)?;
            write_file(&out.unwrap_or_else(|| dir.join(REPORT_FILE)), &report.to_json())?;
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };

    let default_level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        pool = pool.num_threads(n.max(1));
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME as u8);
        }
    };
    let code = pool.install(|| match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    });
    ExitCode::from(code as u8)
}
