use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cotprobe::backend::{HttpChatConfig, ProviderConfig};
use cotprobe::config::Config;
use cotprobe::pipeline;

/// Shift-cipher chain-of-thought probe.
#[derive(Parser, Debug)]
#[command(name = "cotprobe", version)]
struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Enumerate, score, bin and split words; write the example sets.
    BuildDataset,
    /// Render prompts, query the provider and store transcripts.
    Probe(ProbeArgs),
    /// Parse transcripts and write accuracy, confusion and histogram tables.
    Analyze(StyleArgs),
    /// Fit the logistic attribution model and score the heldout split.
    Fit(StyleArgs),
    /// Write the hypothetical accuracy curves for each reasoning archetype.
    Curves,
}

#[derive(Args, Debug, Default)]
struct StyleArgs {
    /// Prompt style; repeatable (overrides `probe.styles`).
    #[arg(long = "style", value_name = "NAME")]
    styles: Vec<String>,
    /// Demonstration shift for mismatched prompts.
    #[arg(long, value_name = "K")]
    demo_shift: Option<u8>,
    /// Sampling temperature (overrides `params.temperature` and `probe.temperatures`).
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProviderKind {
    Simulator,
    Replay,
    HttpChat,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[command(flatten)]
    style: StyleArgs,
    /// Shifts to probe, e.g. `1,4,13` or `1-25`.
    #[arg(long, value_name = "LIST", value_parser = parse_list)]
    shifts: Option<List>,
    /// Frequency bins to probe, e.g. `1,5`.
    #[arg(long, value_name = "LIST", value_parser = parse_list)]
    bins: Option<List>,
    #[arg(long, value_enum)]
    provider: Option<ProviderKind>,
    /// Transcript file served by `--provider replay`.
    #[arg(long, value_name = "PATH")]
    cache: Option<PathBuf>,
    /// Reuse stored transcripts and request only missing ones.
    #[arg(long, overrides_with = "no_resume")]
    resume: bool,
    #[arg(long, overrides_with = "resume")]
    no_resume: bool,
}

#[derive(Clone, Debug)]
struct List(Vec<u8>);

fn parse_list(s: &str) -> Result<List, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |t: &str| t.trim().parse::<u8>().map_err(|_| format!("invalid number {t:?} in {s:?}"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty range {part:?}"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(List(out))
}

fn apply_style_args(cfg: &mut Config, a: &StyleArgs) {
    if !a.styles.is_empty() {
        cfg.probe.styles = a.styles.clone();
    }
    if let Some(k) = a.demo_shift {
        cfg.probe.demo_shift = k;
    }
    if let Some(t) = a.temperature {
        cfg.params.temperature = t;
        cfg.probe.temperatures.clear();
    }
}

fn apply_probe_args(cfg: &mut Config, a: &ProbeArgs) -> Result<()> {
    apply_style_args(cfg, &a.style);
    if let Some(s) = &a.shifts {
        cfg.probe.shifts = s.0.clone();
    }
    if let Some(b) = &a.bins {
        cfg.probe.bins = b.0.clone();
    }
    if a.resume {
        cfg.probe.resume = true;
    }
    if a.no_resume {
        cfg.probe.resume = false;
    }
    match a.provider {
        Some(ProviderKind::Simulator) => cfg.provider = ProviderConfig::Simulator,
        Some(ProviderKind::Replay) => {
            let cache_path = match (&a.cache, &cfg.provider) {
                (Some(p), _) => p.clone(),
                (None, ProviderConfig::Replay { cache_path }) => cache_path.clone(),
                (None, _) => bail!("--provider replay needs --cache PATH or `provider.cache_path` in the config"),
            };
            cfg.provider = ProviderConfig::Replay { cache_path };
        }
        Some(ProviderKind::HttpChat) => {
            if !matches!(cfg.provider, ProviderConfig::HttpChat(_)) {
                cfg.provider = ProviderConfig::HttpChat(HttpChatConfig::default());
            }
        }
        None if a.cache.is_some() => bail!("--cache only applies to --provider replay"),
        None => {}
    }
    Ok(())
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    match &cli.command {
        Command::Probe(a) => apply_probe_args(&mut cfg, a)?,
        Command::Analyze(a) | Command::Fit(a) => apply_style_args(&mut cfg, a),
        Command::BuildDataset | Command::Curves => {}
    }
    cfg.validate().context("invalid configuration after applying flags")?;
    Ok(cfg)
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::BuildDataset => {
            let s = pipeline::cmd_build_dataset(&cfg)?;
            println!(
                "{} candidates scored with {}; {} words kept; {} eval and {} heldout examples in {}",
                s.candidates,
                s.scorer,
                s.words,
                s.eval_examples,
                s.heldout_examples,
                cfg.out_dir.join("dataset").display()
            );
        }
        Command::Probe(_) => {
            let runs = pipeline::cmd_probe(&cfg)?;
            for r in runs {
                println!(
                    "{} t={}: {} transcripts ({} requested, {} reused) -> {}",
                    r.style,
                    r.temperature,
                    r.transcripts,
                    r.requested,
                    r.reused,
                    r.store.display()
                );
            }
        }
        Command::Analyze(_) => {
            for s in pipeline::cmd_analyze(&cfg)? {
                let bins: Vec<String> = s.bin_mean_accuracy.iter().map(|(b, a)| format!("bin{b}={}", pct(*a))).collect();
                println!(
                    "{} t={}: n={} accuracy={} faithful={} {}",
                    s.style,
                    s.temperature,
                    s.n,
                    pct(s.mean_accuracy),
                    pct(s.mean_faithful_accuracy),
                    bins.join(" ")
                );
                if s.parse_warnings > 0 {
                    log::warn!("{}: {} parse warnings", s.style, s.parse_warnings);
                }
            }
        }
        Command::Fit(_) => {
            for s in pipeline::cmd_fit(&cfg)? {
                println!("{} t={}: n={} loglik={:.3} converged={}", s.style, s.temperature, s.fit.n, s.fit.loglik, s.fit.converged);
                for c in &s.fit.coefficients {
                    println!("  {:<15} {:>10.4} (se {:.4}, p {:.3e})", c.name, c.coef, c.se, c.p);
                }
                if let Some(h) = s.heldout {
                    println!("  heldout n={} log_loss={:.4} accuracy={}", h.n, h.log_loss, pct(h.accuracy));
                }
            }
        }
        Command::Curves => {
            for p in pipeline::cmd_curves(&cfg)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
