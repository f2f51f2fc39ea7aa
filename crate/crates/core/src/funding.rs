//! Funding-liquidity coverage: outflow tails, instantly monetizable reserves
//! (IMR), the intraday liquidity coverage ratio (ILCR) and the monetizable
//! money gap (MMG).
//!
//! The outflow quantile uses linear interpolation between order statistics
//! (the "type 7" convention). With only a handful of stress days the p99
//! effectively equals the sample maximum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::DailyRedemptionSeries;

const SHARE_TOLERANCE: f64 = 1e-9;

/// Stablecoin float and the composition and access terms of its reserves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservePortfolio {
    /// Tokens outstanding, USD.
    pub float_usd: f64,
    pub cash_share: f64,
    pub tbill_share: f64,
    pub repo_share: f64,
    /// Fraction of reserve cash reachable within one hour.
    pub cash_access_factor: f64,
    /// Haircut on T-bills pledged for one-hour liquidity.
    pub tbill_haircut_1h: f64,
    /// Standing-line cap on T-bills monetizable within one hour.
    pub tbill_line_cap_usd: f64,
    /// Whether repos count toward the 24h bucket.
    #[serde(default)]
    pub repo_convertible_24h: bool,
}

impl ReservePortfolio {
    /// Reserve mix and access terms of the SVB-week calibration: F = $43bn,
    /// 12% cash, 45% T-bills, 43% repos, alpha_c = 0.5, h_B = 2%, line cap 0.
    pub fn svb_calibration() -> Self {
        Self {
            float_usd: 43e9,
            cash_share: 0.12,
            tbill_share: 0.45,
            repo_share: 0.43,
            cash_access_factor: 0.50,
            tbill_haircut_1h: 0.02,
            tbill_line_cap_usd: 0.0,
            repo_convertible_24h: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.float_usd.is_finite() && self.float_usd > 0.0) {
            return Err(Error::validation(format!(
                "float must be positive, got {}",
                self.float_usd
            )));
        }
        let unit = [
            ("cash_share", self.cash_share),
            ("tbill_share", self.tbill_share),
            ("repo_share", self.repo_share),
            ("cash_access_factor", self.cash_access_factor),
            ("tbill_haircut_1h", self.tbill_haircut_1h),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        let total = self.cash_share + self.tbill_share + self.repo_share;
        if total > 1.0 + SHARE_TOLERANCE {
            return Err(Error::validation(format!(
                "reserve shares sum to {total}, above 1"
            )));
        }
        if !(self.tbill_line_cap_usd.is_finite() && self.tbill_line_cap_usd >= 0.0) {
            return Err(Error::validation(format!(
                "tbill_line_cap_usd must be nonnegative, got {}",
                self.tbill_line_cap_usd
            )));
        }
        Ok(())
    }

    pub fn cash_usd(&self) -> f64 {
        self.cash_share * self.float_usd
    }

    pub fn tbills_usd(&self) -> f64 {
        self.tbill_share * self.float_usd
    }

    pub fn repos_usd(&self) -> f64 {
        self.repo_share * self.float_usd
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Horizon {
    #[serde(rename = "1h")]
    OneHour,
    #[serde(rename = "24h")]
    OneDay,
}

impl std::fmt::Display for Horizon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Horizon::OneHour => "1h",
            Horizon::OneDay => "24h",
        })
    }
}

/// Stressed outflow quantile at the day horizon and its worst-hour proxy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutflowTail {
    pub p: f64,
    pub q_24h_usd: f64,
    pub worst_hour_share: f64,
    pub q_1h_usd: f64,
}

impl OutflowTail {
    pub fn from_daily_quantile(p: f64, q_24h_usd: f64, worst_hour_share: f64) -> Result<Self> {
        check_level(p)?;
        if !(worst_hour_share > 0.0 && worst_hour_share <= 1.0) {
            return Err(Error::validation(format!(
                "worst-hour share must lie in (0, 1], got {worst_hour_share}"
            )));
        }
        if !(q_24h_usd.is_finite() && q_24h_usd >= 0.0) {
            return Err(Error::validation(format!(
                "24h outflow quantile must be nonnegative, got {q_24h_usd}"
            )));
        }
        Ok(Self {
            p,
            q_24h_usd,
            worst_hour_share,
            q_1h_usd: worst_hour_share * q_24h_usd,
        })
    }

    pub fn quantile(&self, horizon: Horizon) -> f64 {
        match horizon {
            Horizon::OneHour => self.q_1h_usd,
            Horizon::OneDay => self.q_24h_usd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub horizon: Horizon,
    pub imr_usd: f64,
    /// `+inf` when the outflow quantile is zero.
    #[serde(with = "crate::util::extended_f64")]
    pub ilcr: f64,
    pub mmg_usd: f64,
    /// No shortfall at this horizon.
    pub design_goal_met: bool,
}

fn check_level(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "quantile level must lie in (0, 1), got {p}"
        )))
    }
}

/// Linear-interpolation quantile on the sorted sample: with `h = (n-1)p`,
/// returns `x[floor h] + frac(h) * (x[floor h + 1] - x[floor h])`.
pub fn empirical_quantile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::validation(
            "cannot take the quantile of an empty sample",
        ));
    }
    check_level(p)?;
    if let Some(bad) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::validation(format!("non-finite sample {bad}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo >= n - 1 {
        return Ok(sorted[n - 1]);
    }
    let frac = h - lo as f64;
    Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
}

pub fn outflow_tail(
    redemptions: &DailyRedemptionSeries,
    p: f64,
    worst_hour_share: f64,
) -> Result<OutflowTail> {
    let q24 = empirical_quantile(redemptions.redemptions(), p)?;
    OutflowTail::from_daily_quantile(p, q24, worst_hour_share)
}

/// Instantly monetizable reserves.
///
/// One hour: `alpha_c * C * F + (1 - h_B) * min(B * F, line cap)`.
/// Twenty-four hours: `C * F + B * F`, plus repos only when flagged
/// convertible.
pub fn imr(portfolio: &ReservePortfolio, horizon: Horizon) -> f64 {
    match horizon {
        Horizon::OneHour => {
            portfolio.cash_access_factor * portfolio.cash_usd()
                + (1.0 - portfolio.tbill_haircut_1h)
                    * portfolio.tbills_usd().min(portfolio.tbill_line_cap_usd)
        }
        Horizon::OneDay => {
            let repos = if portfolio.repo_convertible_24h {
                portfolio.repos_usd()
            } else {
                0.0
            };
            portfolio.cash_usd() + portfolio.tbills_usd() + repos
        }
    }
}

pub fn coverage(
    portfolio: &ReservePortfolio,
    tail: &OutflowTail,
    horizon: Horizon,
) -> CoverageResult {
    let imr_usd = imr(portfolio, horizon);
    let q = tail.quantile(horizon);
    let (ilcr, mmg_usd) = if q > 0.0 {
        (imr_usd / q, (q - imr_usd).max(0.0))
    } else {
        (f64::INFINITY, 0.0)
    };
    CoverageResult {
        horizon,
        imr_usd,
        ilcr,
        mmg_usd,
        design_goal_met: mmg_usd == 0.0,
    }
}
