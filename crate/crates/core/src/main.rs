use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use stress_core::funding::{self, Horizon, OutflowTail, ReservePortfolio};
use stress_core::ingest::{self, DuplicatePolicy, GapPolicy, IngestPolicy, SyntheticScenarioSpec};
use stress_core::peg::{self, HybridRailParams};
use stress_core::queue::{self, QueueParams};
use stress_core::rail;
use stress_core::rundyn::{self, RunModel};
use stress_core::scenario::{self, ReportFormat, ScenarioConfig, SourceKind};
use stress_core::timeseries;
use stress_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "pegstress",
    version,
    about = "Stablecoin liquidity stress tests: baseline vs hybrid rail"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full baseline vs hybrid run; writes the report and per-minute traces.
    Run(RunArgs),
    /// Parse price and redemption CSVs and report what ingestion did.
    IngestCheck(IngestArgs),
    /// ILCR / IMR / MMG for a reserve portfolio and outflow tail.
    Funding(FundingArgs),
    /// Peg-deviation persistence with and without the hybrid rail.
    Peg(PegArgs),
    /// Erlang-C wait for the redemption desk.
    Queue(QueueArgs),
    /// Run / no-run equilibria of the stylized bank-run model.
    Rundyn(RundynArgs),
    /// Minute-stepped settlement simulation for both rails.
    Rail(RailArgs),
    /// Write the synthetic price and redemption series as CSV.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
            Format::Text => ReportFormat::Text,
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// Preset name (`paper_defaults`) or path to a TOML scenario file.
    #[arg(long, default_value = ScenarioConfig::PAPER_DEFAULTS)]
    config: String,
    /// Use the synthetic SVB-shaped series regardless of the config source.
    #[arg(long)]
    synthetic: bool,
    /// Override the synthetic generator seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = ScenarioConfig::load(&self.config)?;
        if self.synthetic {
            cfg.data.source = SourceKind::Synthetic;
        }
        if let Some(seed) = self.seed {
            cfg.data.synthetic.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Format printed to stdout.
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum GapArg {
    Error,
    DropWindow,
}

#[derive(Clone, Copy, ValueEnum)]
enum DupArg {
    Error,
    KeepFirst,
}

#[derive(Args)]
struct PolicyArgs {
    #[arg(long, default_value_t = 5)]
    max_gap_fill: u32,
    #[arg(long, value_enum, default_value = "error")]
    on_gap: GapArg,
    #[arg(long, value_enum, default_value = "error")]
    duplicates: DupArg,
}

impl PolicyArgs {
    fn policy(&self) -> IngestPolicy {
        IngestPolicy {
            max_gap_fill_minutes: self.max_gap_fill,
            on_longer_gap: match self.on_gap {
                GapArg::Error => GapPolicy::Error,
                GapArg::DropWindow => GapPolicy::DropWindow,
            },
            duplicate_policy: match self.duplicates {
                DupArg::Error => DuplicatePolicy::Error,
                DupArg::KeepFirst => DuplicatePolicy::KeepFirst,
            },
        }
    }
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    prices: Option<PathBuf>,
    #[arg(long)]
    redemptions: Option<PathBuf>,
    #[command(flatten)]
    policy: PolicyArgs,
}

#[derive(Args)]
struct FundingArgs {
    /// Circulating float F in USD.
    #[arg(long = "float")]
    float_usd: f64,
    /// Cash share C.
    #[arg(long)]
    cash: f64,
    /// T-bill share B.
    #[arg(long)]
    tbill: f64,
    #[arg(long, default_value_t = 0.0)]
    repo: f64,
    /// Same-hour cash access factor alpha_c.
    #[arg(long, default_value_t = 0.5)]
    cash_access: f64,
    #[arg(long, default_value_t = 0.02)]
    haircut: f64,
    #[arg(long, default_value_t = 0.0)]
    line_cap: f64,
    #[arg(long)]
    repo_convertible: bool,
    /// 24-hour outflow quantile in USD.
    #[arg(long, conflicts_with = "redemptions")]
    q24: Option<f64>,
    /// Daily redemption CSV to take the quantile from.
    #[arg(long)]
    redemptions: Option<PathBuf>,
    #[arg(long, default_value_t = 0.99)]
    p: f64,
    #[arg(long, default_value_t = 0.75)]
    worst_hour_share: f64,
}

#[derive(Args)]
struct PegArgs {
    /// Minute price CSV; the synthetic series is used when omitted.
    #[arg(long)]
    prices: Option<PathBuf>,
    #[arg(long, default_value_t = 100e6)]
    rail_capacity: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 5e6)]
    vol_floor: f64,
    #[arg(long, default_value_t = 0.25)]
    min_scale: f64,
    #[arg(long, default_value_t = 5.0)]
    eps: f64,
    #[arg(long, default_value_t = 10.0)]
    gamma: f64,
    /// Write the per-minute deviation columns here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    policy: PolicyArgs,
}

#[derive(Args)]
struct QueueArgs {
    /// Arrivals per minute.
    #[arg(long)]
    lambda: f64,
    /// Services per minute per server.
    #[arg(long)]
    mu: f64,
    #[arg(long)]
    servers: u32,
    #[arg(long, default_value_t = 60.0)]
    sla: f64,
    /// Cross-check with a discrete-event simulation of this many arrivals.
    #[arg(long)]
    simulate: Option<u64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct RundynArgs {
    #[arg(long, default_value_t = 0.7)]
    theta: f64,
    #[arg(long, default_value_t = 0.0)]
    insured: f64,
    #[arg(long, default_value_t = 1.0)]
    hold: f64,
    #[arg(long, default_value_t = 0.0)]
    impatient: f64,
}

#[derive(Args)]
struct RailArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Write rail_baseline.csv and rail_hybrid.csv here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn create_file(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let run = scenario::run_scenario(&cfg)?;
    if let Some(dir) = &args.out_dir {
        let written = scenario::write_outputs(&run, dir)?;
        for p in written {
            eprintln!("wrote {}", p.display());
        }
    }
    let out = scenario::render(&run.report, args.format.into());
    print!("{}", String::from_utf8_lossy(&out));
    Ok(())
}

fn cmd_ingest(args: &IngestArgs) -> Result<()> {
    if args.prices.is_none() && args.redemptions.is_none() {
        return Err(Error::validation("give --prices and/or --redemptions"));
    }
    let policy = args.policy.policy();
    #[derive(Serialize)]
    struct Check {
        #[serde(skip_serializing_if = "Option::is_none")]
        prices: Option<serde_json::Value>,
        #[serde(skip_serializing_if = "Option::is_none")]
        redemptions: Option<serde_json::Value>,
    }
    let prices = match &args.prices {
        Some(p) => {
            let d = ingest::parse_price_csv(p, &policy)?;
            let w = d.prices.window();
            Some(serde_json::json!({
                "start": w.start.to_string(),
                "end": w.end.to_string(),
                "minutes": d.prices.len(),
                "report": d.report,
            }))
        }
        None => None,
    };
    let redemptions = match &args.redemptions {
        Some(p) => {
            let r = ingest::parse_redemption_csv(p, &policy)?;
            Some(serde_json::json!({
                "days": r.len(),
                "total_usd": r.redemptions().iter().sum::<f64>(),
            }))
        }
        None => None,
    };
    print_json(&Check {
        prices,
        redemptions,
    })
}

fn cmd_funding(args: &FundingArgs) -> Result<()> {
    let portfolio = ReservePortfolio {
        float_usd: args.float_usd,
        cash_share: args.cash,
        tbill_share: args.tbill,
        repo_share: args.repo,
        cash_access_factor: args.cash_access,
        tbill_haircut_1h: args.haircut,
        tbill_line_cap_usd: args.line_cap,
        repo_convertible_24h: args.repo_convertible,
    };
    portfolio.validate()?;
    let tail = match (args.q24, &args.redemptions) {
        (Some(q), _) => OutflowTail::from_daily_quantile(args.p, q, args.worst_hour_share)?,
        (None, Some(path)) => {
            let days = ingest::parse_redemption_csv(path, &IngestPolicy::default())?;
            funding::outflow_tail(&days, args.p, args.worst_hour_share)?
        }
        (None, None) => return Err(Error::validation("give --q24 or --redemptions")),
    };
    let rows: Vec<_> = [Horizon::OneHour, Horizon::OneDay]
        .iter()
        .map(|h| funding::coverage(&portfolio, &tail, *h))
        .collect();
    print_json(&serde_json::json!({ "tail": tail, "coverage": rows }))
}

fn cmd_peg(args: &PegArgs) -> Result<()> {
    let params = HybridRailParams {
        rail_capacity_usd_per_min: args.rail_capacity,
        pass_through: args.alpha,
        vol_floor_usd_per_min: args.vol_floor,
        min_scale: args.min_scale,
    };
    params.validate()?;
    let (prices, volumes) = match &args.prices {
        Some(p) => {
            let d = ingest::parse_price_csv(p, &args.policy.policy())?;
            (d.prices, d.volumes)
        }
        None => {
            let s = ingest::generate_synthetic_scenario(&SyntheticScenarioSpec::default())?;
            (s.prices, s.volumes)
        }
    };
    let (prices, volumes) = timeseries::align(&prices, &volumes)?;
    let base = timeseries::compute_deviation(&prices);
    let hyb = peg::hybrid_transform(&base, &volumes, &params)?;
    if let Some(out) = &args.out {
        let scales = peg::scale_factors(&base, &volumes, &params)?;
        peg::write_deviation_csv(create_file(out)?, &base, &hyb, &scales)?;
    }
    print_json(&serde_json::json!({
        "params": params,
        "baseline": peg::summarize(&base, args.eps, args.gamma),
        "hybrid": peg::summarize(&hyb, args.eps, args.gamma),
    }))
}

fn cmd_queue(args: &QueueArgs) -> Result<()> {
    let params = QueueParams {
        sla_seconds: args.sla,
        ..QueueParams::new(args.lambda, args.mu, args.servers)
    };
    let analytic = queue::erlang_c(&params)?;
    let min_servers = queue::min_servers(args.lambda, args.mu, args.sla)?;
    let simulated = match args.simulate {
        Some(n) if analytic.stable => Some(queue::simulate_mmc(&params, n, args.seed)?),
        Some(_) => {
            return Err(Error::Unstable {
                utilization: analytic.utilization,
            });
        }
        None => None,
    };
    print_json(&serde_json::json!({
        "params": params,
        "analytic": analytic,
        "min_servers_for_sla": min_servers,
        "simulated": simulated,
    }))
}

fn cmd_rundyn(args: &RundynArgs) -> Result<()> {
    let model = RunModel {
        hold_to_maturity_value: args.hold,
        fire_sale_value: args.theta,
        insured_fraction: args.insured,
        impatient_fraction: args.impatient,
    };
    let eq = rundyn::classify_equilibria(&model)?;
    let curve: Vec<_> = (0..10)
        .map(|i| {
            let f = f64::from(i) / 10.0;
            rundyn::wait_payoff(&model, f)
                .map(|w| serde_json::json!({ "withdrawing": f, "wait_payoff": w }))
        })
        .collect::<Result<_>>()?;
    print_json(&serde_json::json!({
        "model": model,
        "run_payoff": rundyn::run_payoff(&model)?,
        "insured_payoff": rundyn::insured_payoff(),
        "equilibria": eq,
        "wait_payoff_curve": curve,
    }))
}

fn cmd_rail(args: &RailArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let run = scenario::run_scenario(&cfg)?;
    if let Some(dir) = &args.out_dir {
        ensure_dir(dir)?;
        rail::write_trace_csv(
            create_file(&dir.join("rail_baseline.csv"))?,
            &run.baseline_rail,
        )?;
        rail::write_trace_csv(create_file(&dir.join("rail_hybrid.csv"))?, &run.hybrid_rail)?;
    }
    print_json(&run.report.rail)
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let spec = SyntheticScenarioSpec {
        seed: args.seed,
        ..Default::default()
    };
    let s = ingest::generate_synthetic_scenario(&spec)?;
    ensure_dir(&args.out_dir)?;
    let prices = args.out_dir.join("prices.csv");
    let redemptions = args.out_dir.join("redemptions.csv");
    ingest::write_price_csv(create_file(&prices)?, &s.prices, &s.volumes)?;
    ingest::write_redemption_csv(create_file(&redemptions)?, &s.redemptions)?;
    eprintln!("wrote {}", prices.display());
    eprintln!("wrote {}", redemptions.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::IngestCheck(a) => cmd_ingest(a),
        Command::Funding(a) => cmd_funding(a),
        Command::Peg(a) => cmd_peg(a),
        Command::Queue(a) => cmd_queue(a),
        Command::Rundyn(a) => cmd_rundyn(a),
        Command::Rail(a) => cmd_rail(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
