//! Argument parsing and exit codes: 0 on success, 1 on a run fault or a
//! verification breach, 2 on usage or config errors.

use clap::{Parser, Subcommand};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use safe_ctrl_core::envs::EnvId;
use safe_ctrl_core::ExperimentConfig;

use crate::config::{load_config, set_key, split_override, ConfigError};
use crate::run::{parse_methods, run_methods};
use crate::verify::{append_results, run_suite};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "SAFE_CTRL_OUT";
pub const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "safe-ctrl", version, about = "Safe episodic learning with barrier-filtered MPPI")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and test one method (or all of them) and write the results.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Method name, or `all` for Algorithm 1 and the five baselines.
        #[arg(long, default_value = "algorithm1")]
        method: String,
        #[arg(long)]
        episodes: Option<usize>,
        /// Output root; one subdirectory per method is created inside.
        #[arg(long)]
        out: Option<PathBuf>,
        /// `key=value`, applied after the config file.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Aggregate runs into per-method mean/std curves (CSV on stdout or `--out`).
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a verification suite: prop1, thm1, envelope or all.
    Verify {
        suite: String,
        /// Optional config; the synthetic preset is used otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory receiving `verify.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn out_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn collect_overrides(
    raw: &[String],
    seed: Option<u64>,
    episodes: Option<usize>,
) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = raw.iter().map(|s| split_override(s)).collect::<Result<Vec<_>, _>>()?;
    if let Some(s) = seed {
        out.push(("seed".into(), s.to_string()));
    }
    if let Some(e) = episodes {
        out.push(("episodes".into(), e.to_string()));
    }
    Ok(out)
}

fn verify_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig, ConfigError> {
    match path {
        Some(p) => load_config(p, overrides),
        None => {
            let mut cfg = ExperimentConfig::preset(EnvId::SyntheticLinear);
            for (k, v) in overrides {
                set_key(&mut cfg, k, v)?;
            }
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn usage_error(err: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(2)
}

fn failure(err: anyhow::Error) -> ExitCode {
    eprintln!("error: {err:#}");
    ExitCode::from(1)
}

pub fn main_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match cli.command {
        Command::Run {
            config,
            seed,
            method,
            episodes,
            out,
            overrides,
        } => {
            let Some(methods) = parse_methods(&method) else {
                return usage_error(format!("unknown method `{method}`"));
            };
            let cfg = match collect_overrides(&overrides, seed, episodes).and_then(|o| load_config(&config, &o)) {
                Ok(c) => c,
                Err(e) => return usage_error(e),
            };
            let root = out_root(out);
            match run_methods(&cfg, &methods, &root) {
                Ok(result) => {
                    for m in &result.methods {
                        let last = m.record.episodes.last();
                        println!(
                            "{}: {} episodes, final mean test reward {}, regret {} -> {}",
                            m.record.method.as_str(),
                            m.record.episodes.len(),
                            last.map_or(f64::NAN, |e| e.mean_test_reward()),
                            m.regret.last().copied().unwrap_or(f64::NAN),
                            m.dir.display()
                        );
                        if let Some(f) = &m.record.fault {
                            eprintln!("fault in {}: {f}", m.record.method.as_str());
                        }
                    }
                    if result.faulted() {
                        ExitCode::from(1)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => failure(e),
            }
        }
        Command::Compare { dirs, out } => match crate::compare::compare(&dirs) {
            Ok(table) => match out {
                Some(path) => match std::fs::write(&path, table) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => failure(e.into()),
                },
                None => {
                    print!("{table}");
                    ExitCode::SUCCESS
                }
            },
            Err(e) => failure(e),
        },
        Command::Verify {
            suite,
            config,
            seed,
            out,
            overrides,
        } => {
            let cfg = match collect_overrides(&overrides, seed, None).and_then(|o| verify_config(config.as_deref(), &o)) {
                Ok(c) => c,
                Err(e) => return usage_error(e),
            };
            let results = match run_suite(&suite, &cfg) {
                Ok(r) => r,
                Err(e) => return usage_error(format!("{e:#}")),
            };
            let path = out_root(out).join("verify.jsonl");
            if let Err(e) = append_results(&path, &results) {
                return failure(e);
            }
            let mut breach = false;
            for r in &results {
                let status = if r.ok() { "ok" } else { "BREACH" };
                println!("{status:6} {}/{}: {}", r.suite, r.check, r.details);
                if !r.ok() {
                    breach = true;
                    let what = if r.expect_pass { "contract violated" } else { "negative control unexpectedly passed" };
                    eprintln!("{}/{}: {what}", r.suite, r.check);
                }
            }
            if breach {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
