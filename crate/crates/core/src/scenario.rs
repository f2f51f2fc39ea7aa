//! End-to-end baseline vs hybrid stress run and report rendering.
//!
//! A run ingests (or synthesizes) the price and redemption data, computes
//! funding coverage, peg persistence with and without the rail, the
//! worst-hour desk queue, and the minute-stepped rail simulation, then
//! assembles a [`StressReport`] laid out like the outflow and metric
//! comparison tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funding::{self, Horizon, OutflowTail, ReservePortfolio};
use crate::ingest::{self, IngestPolicy, SyntheticScenarioSpec};
use crate::peg::{self, AlphaRow, HybridRailParams, PegSummary};
use crate::queue::{self, QueueParams, QueueResult};
use crate::rail::{self, FullReserveCheck, RailConfig, RailSummary, RailTrace, RtgsSchedule};
use crate::timeseries::{
    self, DailyRedemptionSeries, DeviationSeries, MinutePriceSeries, MinuteVolumeSeries,
};

pub const SCHEMA_VERSION: &str = "stress-report/1";

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: SourceKind,
    pub synthetic: SyntheticScenarioSpec,
    pub price_csv: Option<PathBuf>,
    pub redemption_csv: Option<PathBuf>,
    /// Optional longer redemption history for the full-sample outflow row.
    pub full_sample_redemption_csv: Option<PathBuf>,
    pub ingest: IngestPolicy,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: SourceKind::Synthetic,
            synthetic: SyntheticScenarioSpec::default(),
            price_csv: None,
            redemption_csv: None,
            full_sample_redemption_csv: None,
            ingest: IngestPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailConfig {
    pub p: f64,
    /// Secondary quantile shown in the outflow table.
    pub p_secondary: f64,
    pub worst_hour_share: f64,
}

impl Default for TailConfig {
    fn default() -> Self {
        Self {
            p: 0.99,
            p_secondary: 0.95,
            worst_hour_share: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PegConfig {
    pub rail: HybridRailParams,
    pub alpha_grid: Vec<f64>,
    pub eps_bps: f64,
    pub gamma_bps: f64,
}

impl Default for PegConfig {
    fn default() -> Self {
        Self {
            rail: HybridRailParams::default(),
            alpha_grid: vec![0.25, 0.5, 0.75, 1.0],
            eps_bps: 5.0,
            gamma_bps: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueueConfig {
    /// Requests per minute per server.
    pub service_rate: f64,
    pub baseline_servers: u32,
    pub hybrid_servers: u32,
    pub ticket_size_usd: f64,
    pub sla_seconds: f64,
}

impl Default for QueueConfig {
    fn default() -> Self {
        Self {
            service_rate: 2.0,
            baseline_servers: 5,
            hybrid_servers: 12,
            ticket_size_usd: 1e6,
            sla_seconds: 60.0,
        }
    }
}

/// Rail mechanics for one side of the comparison; the reserve portfolio is
/// shared and supplied separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RailSettings {
    /// `None` lets the line reach the whole T-bill book.
    pub standing_line_cap_usd: Option<f64>,
    pub tbill_settlement_lag_minutes: u32,
    pub rtgs_schedule: RtgsSchedule,
    pub prefund_topup_usd: f64,
    pub topup_minute_of_day: u32,
}

impl RailSettings {
    pub fn baseline() -> Self {
        Self::from_config(
            &RailConfig::baseline(ReservePortfolio::svb_calibration()),
            Some(0.0),
        )
    }

    pub fn hybrid() -> Self {
        Self::from_config(
            &RailConfig::hybrid(ReservePortfolio::svb_calibration()),
            None,
        )
    }

    fn from_config(c: &RailConfig, cap: Option<f64>) -> Self {
        Self {
            standing_line_cap_usd: cap,
            tbill_settlement_lag_minutes: c.tbill_settlement_lag_minutes,
            rtgs_schedule: c.rtgs_schedule.clone(),
            prefund_topup_usd: c.prefund_topup_usd,
            topup_minute_of_day: c.topup_minute_of_day,
        }
    }

    pub fn build(&self, portfolio: ReservePortfolio) -> RailConfig {
        RailConfig {
            portfolio,
            standing_line_cap_usd: self.standing_line_cap_usd.unwrap_or(portfolio.tbills_usd()),
            tbill_settlement_lag_minutes: self.tbill_settlement_lag_minutes,
            rtgs_schedule: self.rtgs_schedule.clone(),
            prefund_topup_usd: self.prefund_topup_usd,
            topup_minute_of_day: self.topup_minute_of_day,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RailPair {
    pub baseline: RailSettings,
    pub hybrid: RailSettings,
}

impl Default for RailPair {
    fn default() -> Self {
        Self {
            baseline: RailSettings::baseline(),
            hybrid: RailSettings::hybrid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub data: DataConfig,
    pub portfolio: ReservePortfolio,
    pub tail: TailConfig,
    pub peg: PegConfig,
    pub queue: QueueConfig,
    pub rail: RailPair,
    /// Where `run` writes its files. Not part of the report.
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::paper_defaults()
    }
}

impl ScenarioConfig {
    pub const PAPER_DEFAULTS: &'static str = "paper_defaults";

    /// SVB-week calibration: F = $43bn, C = 0.12, B = 0.45, alpha_c = 0.5,
    /// h_B = 0.02, p = 0.99, phi = 0.75, Vol_Floor = $5m/min, S = 0.25,
    /// alpha = 0.5, mu = 2 req/min/server with 5 vs 12 servers and a $1m
    /// ticket, synthetic SVB-shaped data.
    pub fn paper_defaults() -> Self {
        Self {
            data: DataConfig::default(),
            portfolio: ReservePortfolio::svb_calibration(),
            tail: TailConfig::default(),
            peg: PegConfig::default(),
            queue: QueueConfig::default(),
            rail: RailPair::default(),
            output_dir: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a preset by name or a TOML file; relative CSV paths are
    /// resolved against the file's directory.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if name_or_path == Self::PAPER_DEFAULTS {
            return Ok(Self::paper_defaults());
        }
        let path = Path::new(name_or_path);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(dir) = path.parent() {
            let d = &mut cfg.data;
            for p in [
                &mut d.price_csv,
                &mut d.redemption_csv,
                &mut d.full_sample_redemption_csv,
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = |m: &'static str| move |e: Error| e.in_module(m);
        self.portfolio.validate().map_err(ctx("portfolio"))?;
        OutflowTail::from_daily_quantile(self.tail.p, 0.0, self.tail.worst_hour_share)
            .map_err(ctx("tail"))?;
        OutflowTail::from_daily_quantile(self.tail.p_secondary, 0.0, self.tail.worst_hour_share)
            .map_err(ctx("tail"))?;
        self.peg.rail.validate().map_err(ctx("peg"))?;
        if !(self.peg.eps_bps > 0.0 && self.peg.gamma_bps > 0.0) {
            return Err(Error::validation("thresholds must be positive").in_module("peg"));
        }
        if let Some(a) = self
            .peg
            .alpha_grid
            .iter()
            .find(|a| !(**a > 0.0 && **a <= 1.0))
        {
            return Err(Error::validation(format!("alpha {a} outside (0, 1]")).in_module("peg"));
        }
        let q = &self.queue;
        for servers in [q.baseline_servers, q.hybrid_servers] {
            QueueParams {
                arrival_rate: 1.0,
                service_rate: q.service_rate,
                servers,
                ticket_size_usd: q.ticket_size_usd,
                sla_seconds: q.sla_seconds,
            }
            .validate()
            .map_err(ctx("queue"))?;
        }
        self.rail
            .baseline
            .build(self.portfolio)
            .validate()
            .map_err(ctx("rail.baseline"))?;
        self.rail
            .hybrid
            .build(self.portfolio)
            .validate()
            .map_err(ctx("rail.hybrid"))?;
        if self.data.source == SourceKind::Synthetic {
            self.data
                .synthetic
                .validate()
                .map_err(ctx("data.synthetic"))?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Report types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutflowRow {
    pub window: OutflowWindow,
    pub days: usize,
    pub p_secondary_24h_usd: f64,
    pub p_24h_usd: f64,
    pub proxy_1h_usd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutflowWindow {
    FullSample,
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ilcr1h,
    Ilcr24h,
    Mmg1h,
    MaxPegDeviation,
    PeakWait,
    MinutesGeEps,
    LongestRunGeGamma,
}

impl Metric {
    pub fn label(&self, eps: f64, gamma: f64) -> String {
        match self {
            Metric::Ilcr1h => "ILCR_1h".into(),
            Metric::Ilcr24h => "ILCR_24h".into(),
            Metric::Mmg1h => "MMG_1h (USD)".into(),
            Metric::MaxPegDeviation => "Max peg deviation (bps)".into(),
            Metric::PeakWait => "Peak wait time (s)".into(),
            Metric::MinutesGeEps => format!("Minutes >= {} bps (min)", fmt_trim(eps, 1)),
            Metric::LongestRunGeGamma => format!("Longest run >= {} bps (min)", fmt_trim(gamma, 1)),
        }
    }

    fn decimals(&self) -> usize {
        match self {
            Metric::Ilcr1h | Metric::Ilcr24h => 3,
            Metric::MaxPegDeviation | Metric::PeakWait => 1,
            Metric::Mmg1h | Metric::MinutesGeEps | Metric::LongestRunGeGamma => 0,
        }
    }
}

/// Change from baseline to hybrid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Delta {
    Value(f64),
    /// Unbounded baseline, finite hybrid.
    Stabilized,
    /// Finite baseline, unbounded hybrid.
    Destabilized,
    Undefined,
}

impl Delta {
    pub fn between(baseline: f64, hybrid: f64) -> (Delta, Option<f64>) {
        match (baseline.is_finite(), hybrid.is_finite()) {
            (true, true) => {
                let d = hybrid - baseline;
                let pct = (baseline != 0.0).then(|| 100.0 * d / baseline);
                (Delta::Value(d), pct)
            }
            (false, true) => (Delta::Stabilized, None),
            (true, false) => (Delta::Destabilized, None),
            (false, false) => (Delta::Undefined, None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: Metric,
    #[serde(with = "crate::util::extended_f64")]
    pub baseline: f64,
    #[serde(with = "crate::util::extended_f64")]
    pub hybrid: f64,
    pub delta: Delta,
    pub delta_pct: Option<f64>,
}

impl MetricRow {
    pub fn new(metric: Metric, baseline: f64, hybrid: f64) -> Self {
        let (delta, delta_pct) = Delta::between(baseline, hybrid);
        Self {
            metric,
            baseline,
            hybrid,
            delta,
            delta_pct,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueSide {
    pub servers: u32,
    pub result: QueueResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSection {
    pub arrival_rate_per_min: f64,
    pub service_rate_per_min: f64,
    pub baseline: QueueSide,
    pub hybrid: QueueSide,
    pub sla_seconds: f64,
    pub min_servers_for_sla: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PegSection {
    pub minutes: usize,
    pub rail: HybridRailParams,
    pub baseline: PegSummary,
    pub hybrid: PegSummary,
    pub floor_binding_minutes: usize,
    pub alpha_sensitivity: Vec<AlphaRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RailSection {
    pub full_reserve: FullReserveCheck,
    pub baseline: RailSummary,
    pub hybrid: RailSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedValue {
    pub name: String,
    #[serde(with = "crate::util::extended_f64")]
    pub value: f64,
    pub computation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: ScenarioConfig,
    pub derived: Vec<DerivedValue>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressReport {
    pub schema: String,
    pub outflows: Vec<OutflowRow>,
    pub metrics: Vec<MetricRow>,
    pub queue: QueueSection,
    pub peg: PegSection,
    pub rail: RailSection,
    pub provenance: Provenance,
}

impl StressReport {
    pub fn metric(&self, m: Metric) -> Option<&MetricRow> {
        self.metrics.iter().find(|r| r.metric == m)
    }
}

/// Everything a run produces, including the per-minute artifacts that are
/// written next to the report.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: StressReport,
    pub baseline_deviation: DeviationSeries,
    pub hybrid_deviation: DeviationSeries,
    pub scales: Vec<f64>,
    pub baseline_rail: RailTrace,
    pub hybrid_rail: RailTrace,
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct LoadedData {
    prices: MinutePriceSeries,
    volumes: MinuteVolumeSeries,
    redemptions: DailyRedemptionSeries,
    full_sample: Option<DailyRedemptionSeries>,
}

fn require<'a>(p: &'a Option<PathBuf>, field: &str) -> Result<&'a PathBuf> {
    p.as_ref()
        .ok_or_else(|| Error::Config(format!("data.{field} is required for csv sources")))
}

fn load_data(cfg: &DataConfig) -> Result<LoadedData> {
    let full_sample = cfg
        .full_sample_redemption_csv
        .as_ref()
        .map(|p| ingest::parse_redemption_csv(p, &cfg.ingest))
        .transpose()?;
    match cfg.source {
        SourceKind::Synthetic => {
            let s = ingest::generate_synthetic_scenario(&cfg.synthetic)?;
            Ok(LoadedData {
                prices: s.prices,
                volumes: s.volumes,
                redemptions: s.redemptions,
                full_sample,
            })
        }
        SourceKind::Csv => {
            let px = ingest::parse_price_csv(require(&cfg.price_csv, "price_csv")?, &cfg.ingest)?;
            let red = ingest::parse_redemption_csv(
                require(&cfg.redemption_csv, "redemption_csv")?,
                &cfg.ingest,
            )?;
            Ok(LoadedData {
                prices: px.prices,
                volumes: px.volumes,
                redemptions: red,
                full_sample,
            })
        }
    }
}

fn outflow_row(
    window: OutflowWindow,
    days: &DailyRedemptionSeries,
    tail: &TailConfig,
) -> Result<OutflowRow> {
    let primary = funding::outflow_tail(days, tail.p, tail.worst_hour_share)?;
    let secondary = funding::empirical_quantile(days.redemptions(), tail.p_secondary)?;
    Ok(OutflowRow {
        window,
        days: days.len(),
        p_secondary_24h_usd: secondary,
        p_24h_usd: primary.q_24h_usd,
        proxy_1h_usd: primary.q_1h_usd,
    })
}

fn derived(name: &str, value: f64, computation: &str) -> DerivedValue {
    DerivedValue {
        name: name.into(),
        value,
        computation: computation.into(),
    }
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioRun> {
    config.validate()?;
    let data = load_data(&config.data).map_err(|e| e.in_module("ingest"))?;

    // funding
    let tail = funding::outflow_tail(
        &data.redemptions,
        config.tail.p,
        config.tail.worst_hour_share,
    )
    .map_err(|e| e.in_module("funding"))?;
    let cov_1h = funding::coverage(&config.portfolio, &tail, Horizon::OneHour);
    let cov_24h = funding::coverage(&config.portfolio, &tail, Horizon::OneDay);
    let mut outflows = Vec::new();
    if let Some(full) = &data.full_sample {
        outflows.push(
            outflow_row(OutflowWindow::FullSample, full, &config.tail)
                .map_err(|e| e.in_module("funding"))?,
        );
    }
    outflows.push(
        outflow_row(OutflowWindow::Calibrated, &data.redemptions, &config.tail)
            .map_err(|e| e.in_module("funding"))?,
    );

    // peg
    let (prices, volumes) =
        timeseries::align(&data.prices, &data.volumes).map_err(|e| e.in_module("peg"))?;
    let base_dev = timeseries::compute_deviation(&prices);
    let pc = &config.peg;
    let scales =
        peg::scale_factors(&base_dev, &volumes, &pc.rail).map_err(|e| e.in_module("peg"))?;
    let hyp_dev =
        peg::hybrid_transform(&base_dev, &volumes, &pc.rail).map_err(|e| e.in_module("peg"))?;
    let base_peg = peg::summarize(&base_dev, pc.eps_bps, pc.gamma_bps);
    let hyp_peg = peg::summarize(&hyp_dev, pc.eps_bps, pc.gamma_bps);
    let alpha_rows = peg::alpha_sensitivity(
        &base_dev,
        &volumes,
        &pc.rail,
        &pc.alpha_grid,
        pc.eps_bps,
        pc.gamma_bps,
    )
    .map_err(|e| e.in_module("peg"))?;
    let floor_binding = scales.iter().filter(|&&s| s == pc.rail.min_scale).count();

    // queue
    let qc = &config.queue;
    let lambda = queue::arrival_rate_from_tail(tail.q_1h_usd, qc.ticket_size_usd)
        .map_err(|e| e.in_module("queue"))?;
    let side = |servers: u32| -> Result<QueueSide> {
        let params = QueueParams {
            arrival_rate: lambda,
            service_rate: qc.service_rate,
            servers,
            ticket_size_usd: qc.ticket_size_usd,
            sla_seconds: qc.sla_seconds,
        };
        Ok(QueueSide {
            servers,
            result: queue::erlang_c(&params)?,
        })
    };
    let q_base = side(qc.baseline_servers).map_err(|e| e.in_module("queue"))?;
    let q_hyb = side(qc.hybrid_servers).map_err(|e| e.in_module("queue"))?;
    let c_star = queue::min_servers(lambda, qc.service_rate, qc.sla_seconds)
        .map_err(|e| e.in_module("queue"))?;

    // rail: both branches run independently
    let worst_hours = ingest::worst_hours_from_deviation(&base_dev, &data.redemptions);
    let demand = ingest::minute_demand_trace(
        &data.redemptions,
        config.tail.worst_hour_share,
        &worst_hours,
    )
    .map_err(|e| e.in_module("rail"))?;
    let base_cfg = config.rail.baseline.build(config.portfolio);
    let hyb_cfg = config.rail.hybrid.build(config.portfolio);
    let (base_rail, hyb_rail) = std::thread::scope(|s| {
        let b = s.spawn(|| rail::run_rail(&base_cfg, &demand));
        let h = rail::run_rail(&hyb_cfg, &demand);
        (b.join().expect("baseline rail thread panicked"), h)
    });
    let base_rail = base_rail.map_err(|e| e.in_module("rail"))?;
    let hyb_rail = hyb_rail.map_err(|e| e.in_module("rail"))?;

    let wait = |q: &QueueSide| q.result.wq_seconds.unwrap_or(f64::INFINITY);
    let metrics = vec![
        MetricRow::new(Metric::Ilcr1h, cov_1h.ilcr, cov_1h.ilcr),
        MetricRow::new(Metric::Ilcr24h, cov_24h.ilcr, cov_24h.ilcr),
        MetricRow::new(Metric::Mmg1h, cov_1h.mmg_usd, cov_1h.mmg_usd),
        MetricRow::new(
            Metric::MaxPegDeviation,
            base_peg.d_max_bps,
            hyp_peg.d_max_bps,
        ),
        MetricRow::new(Metric::PeakWait, wait(&q_base), wait(&q_hyb)),
        MetricRow::new(
            Metric::MinutesGeEps,
            base_peg.minutes_ge_eps as f64,
            hyp_peg.minutes_ge_eps as f64,
        ),
        MetricRow::new(
            Metric::LongestRunGeGamma,
            base_peg.longest_run_ge_gamma as f64,
            hyp_peg.longest_run_ge_gamma as f64,
        ),
    ];

    let mut derived_values = vec![
        derived(
            "q_24h_usd",
            tail.q_24h_usd,
            "type-7 empirical quantile of daily redemptions at p",
        ),
        derived("q_1h_usd", tail.q_1h_usd, "worst_hour_share * q_24h_usd"),
        derived(
            "imr_1h_usd",
            cov_1h.imr_usd,
            "alpha_c*C*F + (1-h_B)*min(B*F, line cap)",
        ),
        derived(
            "imr_24h_usd",
            cov_24h.imr_usd,
            "C*F + B*F (+ repos if convertible)",
        ),
        derived("ilcr_1h", cov_1h.ilcr, "imr_1h_usd / q_1h_usd"),
        derived("ilcr_24h", cov_24h.ilcr, "imr_24h_usd / q_24h_usd"),
        derived(
            "mmg_1h_usd",
            cov_1h.mmg_usd,
            "max(0, q_1h_usd - imr_1h_usd)",
        ),
        derived(
            "mmg_24h_usd",
            cov_24h.mmg_usd,
            "max(0, q_24h_usd - imr_24h_usd)",
        ),
        derived(
            "arrival_rate_per_min",
            lambda,
            "(q_1h_usd / ticket_size_usd) / 60",
        ),
        derived(
            "baseline_utilization",
            q_base.result.utilization,
            "lambda / (baseline_servers * mu)",
        ),
        derived(
            "hybrid_utilization",
            q_hyb.result.utilization,
            "lambda / (hybrid_servers * mu)",
        ),
        derived(
            "min_servers_for_sla",
            f64::from(c_star),
            "smallest c with Erlang-C wait <= sla",
        ),
        derived(
            "rail_capacity_usd_per_min",
            pc.rail.rail_capacity_usd_per_min,
            "peg.rail.rail_capacity_usd_per_min",
        ),
        derived(
            "floor_binding_minutes",
            floor_binding as f64,
            "minutes with scale == min_scale",
        ),
        derived(
            "baseline_line_cap_usd",
            base_cfg.standing_line_cap_usd,
            "rail.baseline",
        ),
        derived(
            "hybrid_line_cap_usd",
            hyb_cfg.standing_line_cap_usd,
            "rail.hybrid (None = B*F)",
        ),
        derived(
            "demand_trace_total_usd",
            demand.total(),
            "sum of minute demand from daily redemptions",
        ),
    ];
    for (i, h) in worst_hours.iter().enumerate() {
        derived_values.push(derived(
            &format!("worst_hour_utc[{}]", data.redemptions.dates()[i]),
            f64::from(*h),
            "hour of day with the highest mean baseline deviation",
        ));
    }

    let notes = vec![
        format!(
            "ILCR and MMG use the same reserve portfolio for both columns with a one-hour \
             T-bill line cap of {} USD in the metric; the hybrid's intraday T-bill access is \
             modelled in the rail simulation instead.",
            config.portfolio.tbill_line_cap_usd
        ),
        format!(
            "Hybrid deviation uses rail capacity R = {} USD/min, pass-through {}, volume floor {} \
             USD/min and minimum scale {}.",
            pc.rail.rail_capacity_usd_per_min,
            pc.rail.pass_through,
            pc.rail.vol_floor_usd_per_min,
            pc.rail.min_scale
        ),
        "Repos are excluded from IMR unless repo_convertible_24h is set.".into(),
        "Outflow quantiles use linear interpolation between order statistics (type 7); with few \
         days the upper quantiles sit between the two largest days."
            .into(),
    ];

    let report = StressReport {
        schema: SCHEMA_VERSION.into(),
        outflows,
        metrics,
        queue: QueueSection {
            arrival_rate_per_min: lambda,
            service_rate_per_min: qc.service_rate,
            baseline: q_base,
            hybrid: q_hyb,
            sla_seconds: qc.sla_seconds,
            min_servers_for_sla: c_star,
        },
        peg: PegSection {
            minutes: base_dev.len(),
            rail: pc.rail,
            baseline: base_peg,
            hybrid: hyp_peg,
            floor_binding_minutes: floor_binding,
            alpha_sensitivity: alpha_rows,
        },
        rail: RailSection {
            full_reserve: rail::full_reserve_check(&base_cfg),
            baseline: base_rail.summary,
            hybrid: hyb_rail.summary,
        },
        provenance: Provenance {
            config: config.clone(),
            derived: derived_values,
            notes,
        },
    };
    audit(&report)?;
    Ok(ScenarioRun {
        report,
        baseline_deviation: base_dev,
        hybrid_deviation: hyp_dev,
        scales,
        baseline_rail: base_rail,
        hybrid_rail: hyb_rail,
    })
}

/// Recomputes every delta from its baseline/hybrid pair.
pub fn audit(report: &StressReport) -> Result<()> {
    for row in &report.metrics {
        let (delta, pct) = Delta::between(row.baseline, row.hybrid);
        let same = match (delta, row.delta) {
            (Delta::Value(a), Delta::Value(b)) => a == b,
            (a, b) => a == b,
        };
        if !same || pct != row.delta_pct {
            return Err(Error::validation(format!(
                "report row {:?} has inconsistent deltas",
                row.metric
            ))
            .in_module("report"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Text,
}

pub fn render(report: &StressReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report).expect("report serializes");
            out.push(b'\n');
            out
        }
        ReportFormat::Csv => render_metrics_csv(report).into_bytes(),
        ReportFormat::Text => render_text(report).into_bytes(),
    }
}

/// Fixed decimals with any trailing fractional zeros removed.
fn fmt_trim(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" { "0".into() } else { s }
}

fn fmt_usd(v: f64) -> String {
    let rounded = v.round();
    let digits = format!("{:.0}", rounded.abs());
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    if rounded < 0.0 {
        format!("-{out}")
    } else {
        out
    }
}

fn fmt_value(metric: Metric, v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "∞".into() } else { "-∞".into() };
    }
    match metric {
        Metric::Mmg1h => fmt_usd(v),
        _ => fmt_trim(v, metric.decimals()),
    }
}

fn fmt_delta(metric: Metric, d: Delta) -> String {
    match d {
        Delta::Value(v) => fmt_value(metric, v),
        Delta::Stabilized => "Stabilized".into(),
        Delta::Destabilized => "Destabilized".into(),
        Delta::Undefined => "-".into(),
    }
}

/// Percent with one decimal, dropping a trailing `.0`.
pub fn fmt_pct(p: Option<f64>) -> String {
    match p {
        Some(v) => format!("{}%", fmt_trim(v, 1)),
        None => "-".into(),
    }
}

fn render_metrics_csv(report: &StressReport) -> String {
    let eps = report.peg.baseline.eps_bps;
    let gamma = report.peg.baseline.gamma_bps;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "metric",
        "label",
        "baseline",
        "hybrid",
        "delta",
        "delta_pct",
    ])
    .expect("in-memory write");
    for r in &report.metrics {
        let key = serde_json::to_value(r.metric).expect("metric key");
        w.write_record([
            key.as_str().unwrap_or_default().to_string(),
            r.metric.label(eps, gamma),
            fmt_value(r.metric, r.baseline),
            fmt_value(r.metric, r.hybrid),
            fmt_delta(r.metric, r.delta),
            fmt_pct(r.delta_pct),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

pub fn render_outflows_csv(report: &StressReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "window",
        "days",
        "p_secondary_24h_usd",
        "p_24h_usd",
        "proxy_1h_usd",
    ])
    .expect("in-memory write");
    for r in &report.outflows {
        let key = serde_json::to_value(r.window).expect("window key");
        w.write_record([
            key.as_str().unwrap_or_default().to_string(),
            r.days.to_string(),
            format!("{:.0}", r.p_secondary_24h_usd.round()),
            format!("{:.0}", r.p_24h_usd.round()),
            format!("{:.0}", r.proxy_1h_usd.round()),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

fn render_text(report: &StressReport) -> String {
    let cfg = &report.provenance.config;
    let mut s = String::new();
    let pct = |p: f64| fmt_trim(100.0 * p, 2);

    let _ = writeln!(s, "Outflows");
    let _ = writeln!(
        s,
        "{:<16}{:>20}{:>20}{:>26}",
        "Window",
        format!("P{} 24h (USD)", pct(cfg.tail.p_secondary)),
        format!("P{} 24h (USD)", pct(cfg.tail.p)),
        format!("1h proxy at {}% (USD)", pct(cfg.tail.worst_hour_share)),
    );
    for r in &report.outflows {
        let label = match r.window {
            OutflowWindow::FullSample => "Full sample",
            OutflowWindow::Calibrated => "Calibrated",
        };
        let _ = writeln!(
            s,
            "{:<16}{:>20}{:>20}{:>26}",
            label,
            fmt_usd(r.p_secondary_24h_usd),
            fmt_usd(r.p_24h_usd),
            fmt_usd(r.proxy_1h_usd)
        );
    }

    let eps = report.peg.baseline.eps_bps;
    let gamma = report.peg.baseline.gamma_bps;
    let _ = writeln!(s);
    let _ = writeln!(s, "Baseline vs hybrid");
    let _ = writeln!(
        s,
        "{:<30}{:>16}{:>16}{:>14}{:>9}",
        "Metric", "Baseline", "Hybrid", "Δ Hybrid", "Δ%"
    );
    for r in &report.metrics {
        let _ = writeln!(
            s,
            "{:<30}{:>16}{:>16}{:>14}{:>9}",
            r.metric.label(eps, gamma),
            fmt_value(r.metric, r.baseline),
            fmt_value(r.metric, r.hybrid),
            fmt_delta(r.metric, r.delta),
            fmt_pct(r.delta_pct)
        );
    }

    let q = &report.queue;
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "Queue: lambda {} req/min, mu {} req/min/server, servers {} vs {}, min servers for {} s SLA: {}",
        fmt_trim(q.arrival_rate_per_min, 3),
        fmt_trim(q.service_rate_per_min, 3),
        q.baseline.servers,
        q.hybrid.servers,
        fmt_trim(q.sla_seconds, 1),
        q.min_servers_for_sla
    );
    let p = &report.peg;
    let _ = writeln!(
        s,
        "Peg: {} minutes, R {} USD/min, alpha {}, floor binding in {} minutes",
        p.minutes,
        fmt_usd(p.rail.rail_capacity_usd_per_min),
        fmt_trim(p.rail.pass_through, 3),
        p.floor_binding_minutes
    );
    for a in &p.alpha_sensitivity {
        let _ = writeln!(
            s,
            "  alpha {:<6} max {:>8} bps  minutes>=eps {:>6}  longest run {:>6}",
            fmt_trim(a.pass_through, 3),
            fmt_trim(a.summary.d_max_bps, 1),
            a.summary.minutes_ge_eps,
            a.summary.longest_run_ge_gamma
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<34}{:>20}{:>20}",
        "Rail simulation", "Baseline", "Hybrid"
    );
    let rb = &report.rail.baseline;
    let rh = &report.rail.hybrid;
    let rows: [(&str, String, String); 6] = [
        (
            "Max queue (USD)",
            fmt_usd(rb.max_queue_usd),
            fmt_usd(rh.max_queue_usd),
        ),
        (
            "Shortfall events",
            rb.shortfall_event_count.to_string(),
            rh.shortfall_event_count.to_string(),
        ),
        (
            "Queued minutes",
            rb.total_queued_minutes.to_string(),
            rh.total_queued_minutes.to_string(),
        ),
        (
            "Max customer wait (min)",
            rb.max_customer_wait_minutes.to_string(),
            rh.max_customer_wait_minutes.to_string(),
        ),
        (
            "Peak line drawn (USD)",
            fmt_usd(rb.peak_line_drawn_usd),
            fmt_usd(rh.peak_line_drawn_usd),
        ),
        (
            "Unsettled at end (USD)",
            fmt_usd(rb.unsettled_at_end_usd),
            fmt_usd(rh.unsettled_at_end_usd),
        ),
    ];
    for (label, b, h) in rows {
        let _ = writeln!(s, "{label:<34}{b:>20}{h:>20}");
    }
    let fr = &report.rail.full_reserve;
    let _ = writeln!(
        s,
        "Full reserve backing: {} (shares sum to {})",
        if fr.fully_backed { "yes" } else { "NO" },
        fmt_trim(fr.share_total, 4)
    );
    let _ = writeln!(s);
    for n in &report.provenance.notes {
        let _ = writeln!(s, "* {n}");
    }
    s
}

/// Files written by [`write_outputs`], relative to the output directory.
pub const OUTPUT_FILES: [&str; 8] = [
    "report.json",
    "report.txt",
    "metrics.csv",
    "outflows.csv",
    "deviation.csv",
    "rail_baseline.csv",
    "rail_hybrid.csv",
    "scenario.toml",
];

/// Writes the report in every format plus the per-minute artifacts.
pub fn write_outputs(run: &ScenarioRun, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, bytes: &[u8]| -> Result<PathBuf> {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    };
    let report = &run.report;
    let mut dev = Vec::new();
    peg::write_deviation_csv(
        &mut dev,
        &run.baseline_deviation,
        &run.hybrid_deviation,
        &run.scales,
    )?;
    let mut base = Vec::new();
    rail::write_trace_csv(&mut base, &run.baseline_rail)?;
    let mut hyb = Vec::new();
    rail::write_trace_csv(&mut hyb, &run.hybrid_rail)?;
    let toml = report.provenance.config.to_toml_string()?;
    let contents: [&[u8]; 8] = [
        &render(report, ReportFormat::Json),
        &render(report, ReportFormat::Text),
        &render(report, ReportFormat::Csv),
        &render_outflows_csv(report).into_bytes(),
        &dev,
        &base,
        &hyb,
        toml.as_bytes(),
    ];
    OUTPUT_FILES
        .iter()
        .zip(contents)
        .map(|(name, bytes)| write(name, bytes))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_rules() {
        assert_eq!(
            Delta::between(1219.0, 304.75),
            (Delta::Value(-914.25), Some(-75.0))
        );
        assert_eq!(
            Delta::between(f64::INFINITY, 57.7),
            (Delta::Stabilized, None)
        );
        assert_eq!(Delta::between(0.0, 0.0), (Delta::Value(0.0), None));
        assert_eq!(
            Delta::between(1.0, f64::INFINITY),
            (Delta::Destabilized, None)
        );
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(fmt_pct(Some(-75.0)), "-75%");
        assert_eq!(fmt_pct(Some(-100.0 * 868.0 / 3799.0)), "-22.8%");
        assert_eq!(fmt_pct(Some(-22.9)), "-22.9%");
        assert_eq!(fmt_pct(Some(0.0)), "0%");
        assert_eq!(fmt_pct(None), "-");
    }

    #[test]
    fn usd_formatting() {
        assert_eq!(fmt_usd(1_386_618_607.5), "1,386,618,608");
        assert_eq!(fmt_usd(0.0), "0");
        assert_eq!(fmt_usd(999.0), "999");
        assert_eq!(fmt_usd(-1234.0), "-1,234");
    }

    #[test]
    fn preset_round_trips_through_toml() {
        let cfg = ScenarioConfig::paper_defaults();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ScenarioConfig::from_toml_str("[portfolio]\nfloat = 1\n").is_err());
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg = ScenarioConfig::from_toml_str("[queue]\nhybrid_servers = 14\n").unwrap();
        assert_eq!(cfg.queue.hybrid_servers, 14);
        assert_eq!(cfg.queue.baseline_servers, 5);
        assert_eq!(cfg.portfolio, ReservePortfolio::svb_calibration());
    }

    #[test]
    fn csv_source_requires_paths() {
        let mut cfg = ScenarioConfig::paper_defaults();
        cfg.data.source = SourceKind::Csv;
        let err = run_scenario(&cfg).unwrap_err();
        assert!(err.to_string().contains("price_csv"), "{err}");
    }

    #[test]
    fn invalid_config_names_module() {
        let mut cfg = ScenarioConfig::paper_defaults();
        cfg.peg.rail.min_scale = 0.0;
        let err = run_scenario(&cfg).unwrap_err();
        assert!(err.to_string().starts_with("peg:"), "{err}");
    }
}
