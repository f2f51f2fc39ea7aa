//! Minute-grid series types shared by every analysis stage.
//!
//! All series sit on a uniform one-minute UTC grid addressed by [`UtcMinute`]
//! (whole minutes since the Unix epoch). Constructors validate the type
//! invariants, so a value of any of these types can be consumed without
//! re-checking.

use std::fmt;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whole minutes since 1970-01-01T00:00Z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UtcMinute(pub i64);

impl UtcMinute {
    pub fn from_datetime(dt: DateTime<Utc>) -> Result<Self> {
        let secs = dt.timestamp();
        if secs.rem_euclid(60) != 0 || dt.timestamp_subsec_nanos() != 0 {
            return Err(Error::validation(format!(
                "timestamp {dt} is not on a whole minute"
            )));
        }
        Ok(UtcMinute(secs.div_euclid(60)))
    }

    pub fn from_date(date: NaiveDate) -> Self {
        let secs = date.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp();
        UtcMinute(secs / 60)
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        DateTime::from_timestamp(self.0 * 60, 0).expect("minute within chrono range")
    }

    pub fn offset(self, minutes: i64) -> Self {
        UtcMinute(self.0 + minutes)
    }

    /// Minutes elapsed since midnight UTC, in `0..1440`.
    pub fn minute_of_day(self) -> u32 {
        self.0.rem_euclid(1440) as u32
    }

    /// Day of week with Monday = 0.
    pub fn weekday_index(self) -> u32 {
        // 1970-01-01 was a Thursday.
        (self.0.div_euclid(1440) + 3).rem_euclid(7) as u32
    }

    pub fn date(self) -> NaiveDate {
        self.to_datetime().date_naive()
    }
}

impl fmt::Display for UtcMinute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_datetime().format("%Y-%m-%dT%H:%MZ"))
    }
}

/// Half-open minute window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinuteWindow {
    pub start: UtcMinute,
    pub end: UtcMinute,
}

impl MinuteWindow {
    pub fn len(&self) -> usize {
        (self.end.0 - self.start.0).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn intersect(&self, other: &MinuteWindow) -> Option<MinuteWindow> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start < end).then_some(MinuteWindow { start, end })
    }
}

fn check_finite(values: &[f64], what: &str, ok: impl Fn(f64) -> bool) -> Result<()> {
    match values.iter().position(|&v| !v.is_finite() || !ok(v)) {
        Some(i) => Err(Error::validation(format!(
            "{what} at index {i} is invalid: {}",
            values[i]
        ))),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// Price / volume / deviation series
// ---------------------------------------------------------------------------

/// Mid-price in USD per token, one observation per minute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinutePriceSeries {
    start: UtcMinute,
    prices: Vec<f64>,
}

impl MinutePriceSeries {
    pub fn new(start: UtcMinute, prices: Vec<f64>) -> Result<Self> {
        if prices.len() < 2 {
            return Err(Error::validation(format!(
                "price series needs at least 2 minutes, got {}",
                prices.len()
            )));
        }
        check_finite(&prices, "price", |p| p > 0.0)?;
        Ok(Self { start, prices })
    }

    pub fn start(&self) -> UtcMinute {
        self.start
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn window(&self) -> MinuteWindow {
        MinuteWindow {
            start: self.start,
            end: self.start.offset(self.prices.len() as i64),
        }
    }

    fn slice(&self, w: MinuteWindow) -> Result<Self> {
        let from = (w.start.0 - self.start.0) as usize;
        Self::new(w.start, self.prices[from..from + w.len()].to_vec())
    }
}

/// USD traded per minute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinuteVolumeSeries {
    start: UtcMinute,
    volumes: Vec<f64>,
}

impl MinuteVolumeSeries {
    pub fn new(start: UtcMinute, volumes: Vec<f64>) -> Result<Self> {
        if volumes.is_empty() {
            return Err(Error::validation("volume series is empty"));
        }
        check_finite(&volumes, "volume", |v| v >= 0.0)?;
        Ok(Self { start, volumes })
    }

    pub fn start(&self) -> UtcMinute {
        self.start
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    pub fn window(&self) -> MinuteWindow {
        MinuteWindow {
            start: self.start,
            end: self.start.offset(self.volumes.len() as i64),
        }
    }

    fn slice(&self, w: MinuteWindow) -> Result<Self> {
        let from = (w.start.0 - self.start.0) as usize;
        Self::new(w.start, self.volumes[from..from + w.len()].to_vec())
    }
}

/// Absolute distance from the $1 peg in basis points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationSeries {
    start: UtcMinute,
    bps: Vec<f64>,
}

impl DeviationSeries {
    pub fn new(start: UtcMinute, bps: Vec<f64>) -> Result<Self> {
        if bps.is_empty() {
            return Err(Error::validation("deviation series is empty"));
        }
        check_finite(&bps, "deviation", |d| d >= 0.0)?;
        Ok(Self { start, bps })
    }

    pub fn start(&self) -> UtcMinute {
        self.start
    }

    pub fn bps(&self) -> &[f64] {
        &self.bps
    }

    pub fn len(&self) -> usize {
        self.bps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bps.is_empty()
    }

    pub fn window(&self) -> MinuteWindow {
        MinuteWindow {
            start: self.start,
            end: self.start.offset(self.bps.len() as i64),
        }
    }
}

/// `10_000 * |p - 1|` for every minute of the grid.
pub fn compute_deviation(prices: &MinutePriceSeries) -> DeviationSeries {
    let bps = prices
        .prices
        .iter()
        .map(|p| 10_000.0 * (p - 1.0).abs())
        .collect();
    DeviationSeries {
        start: prices.start,
        bps,
    }
}

/// Truncates both series to their common minute window.
pub fn align(
    prices: &MinutePriceSeries,
    volumes: &MinuteVolumeSeries,
) -> Result<(MinutePriceSeries, MinuteVolumeSeries)> {
    let common = prices
        .window()
        .intersect(&volumes.window())
        .ok_or_else(|| {
            Error::Alignment(format!(
                "price window {}..{} and volume window {}..{} do not overlap",
                prices.window().start,
                prices.window().end,
                volumes.window().start,
                volumes.window().end
            ))
        })?;
    let p = prices
        .slice(common)
        .map_err(|e| Error::Alignment(format!("common window too short: {e}")))?;
    let v = volumes.slice(common)?;
    Ok((p, v))
}

// ---------------------------------------------------------------------------
// Daily redemptions and minute demand
// ---------------------------------------------------------------------------

/// Gross redemption outflow per UTC calendar day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRedemptionSeries {
    dates: Vec<NaiveDate>,
    redemptions: Vec<f64>,
}

impl DailyRedemptionSeries {
    pub fn new(dates: Vec<NaiveDate>, redemptions: Vec<f64>) -> Result<Self> {
        if dates.len() != redemptions.len() {
            return Err(Error::validation(format!(
                "{} dates but {} redemption values",
                dates.len(),
                redemptions.len()
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::validation(format!(
                "redemption dates not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        check_finite(&redemptions, "redemption", |r| r >= 0.0)?;
        Ok(Self { dates, redemptions })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn redemptions(&self) -> &[f64] {
        &self.redemptions
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, f64)> + '_ {
        self.dates
            .iter()
            .copied()
            .zip(self.redemptions.iter().copied())
    }
}

/// Redemption demand in USD arriving in each minute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandTrace {
    start: UtcMinute,
    usd: Vec<f64>,
}

impl DemandTrace {
    pub fn new(start: UtcMinute, usd: Vec<f64>) -> Result<Self> {
        if usd.is_empty() {
            return Err(Error::validation("demand trace is empty"));
        }
        check_finite(&usd, "demand", |d| d >= 0.0)?;
        Ok(Self { start, usd })
    }

    pub fn start(&self) -> UtcMinute {
        self.start
    }

    pub fn usd(&self) -> &[f64] {
        &self.usd
    }

    pub fn len(&self) -> usize {
        self.usd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.usd.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.usd.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(start: i64, prices: Vec<f64>) -> MinutePriceSeries {
        MinutePriceSeries::new(UtcMinute(start), prices).unwrap()
    }

    #[test]
    fn exact_peg_has_zero_deviation() {
        let d = compute_deviation(&series(0, vec![1.0; 10]));
        assert_eq!(d.bps(), &[0.0; 10]);
    }

    #[test]
    fn deviation_in_bps() {
        let d = compute_deviation(&series(0, vec![0.87, 0.8781]));
        assert!((d.bps()[0] - 1300.0).abs() < 1e-9);
        assert!((d.bps()[1] - 1219.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_prices() {
        assert!(MinutePriceSeries::new(UtcMinute(0), vec![1.0]).is_err());
        assert!(MinutePriceSeries::new(UtcMinute(0), vec![1.0, -0.5]).is_err());
        assert!(MinutePriceSeries::new(UtcMinute(0), vec![1.0, f64::NAN]).is_err());
        assert!(MinuteVolumeSeries::new(UtcMinute(0), vec![-1.0]).is_err());
    }

    #[test]
    fn align_identical_grids_is_identity() {
        let p = series(100, vec![1.0, 0.99, 0.98]);
        let v = MinuteVolumeSeries::new(UtcMinute(100), vec![1.0, 2.0, 3.0]).unwrap();
        let (pa, va) = align(&p, &v).unwrap();
        assert_eq!(pa, p);
        assert_eq!(va, v);
    }

    #[test]
    fn align_truncates_to_overlap() {
        // prices 00:00-00:09, volumes 00:05-00:14
        let p = series(0, (0..10).map(|i| 1.0 - i as f64 * 1e-3).collect());
        let v = MinuteVolumeSeries::new(UtcMinute(5), (0..10).map(f64::from).collect()).unwrap();
        let (pa, va) = align(&p, &v).unwrap();
        assert_eq!(pa.start(), UtcMinute(5));
        assert_eq!(va.start(), UtcMinute(5));
        assert_eq!(pa.len(), 5);
        assert_eq!(va.len(), 5);
        assert_eq!(pa.prices()[0], p.prices()[5]);
        assert_eq!(va.volumes(), &[0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn align_disjoint_fails() {
        let p = series(0, vec![1.0; 5]);
        let v = MinuteVolumeSeries::new(UtcMinute(10), vec![1.0; 5]).unwrap();
        assert!(matches!(align(&p, &v), Err(Error::Alignment(_))));
    }

    #[test]
    fn redemption_dates_must_increase() {
        let d = |s: &str| s.parse::<NaiveDate>().unwrap();
        assert!(
            DailyRedemptionSeries::new(vec![d("2023-03-11"), d("2023-03-10")], vec![1.0, 2.0])
                .is_err()
        );
        assert!(
            DailyRedemptionSeries::new(vec![d("2023-03-10"), d("2023-03-10")], vec![1.0, 2.0])
                .is_err()
        );
        assert!(DailyRedemptionSeries::new(vec![d("2023-03-10")], vec![-1.0]).is_err());
    }

    #[test]
    fn calendar_helpers() {
        let m = UtcMinute::from_date("2023-03-11".parse().unwrap()).offset(13 * 60 + 5);
        assert_eq!(m.minute_of_day(), 785);
        assert_eq!(m.weekday_index(), 5); // Saturday
        assert_eq!(m.to_string(), "2023-03-11T13:05Z");
    }

    proptest! {
        #[test]
        fn deviation_preserves_grid(start in -1_000_000i64..1_000_000, prices in prop::collection::vec(0.01f64..3.0, 2..200)) {
            let s = series(start, prices);
            let d = compute_deviation(&s);
            prop_assert_eq!(d.window(), s.window());
        }

        #[test]
        fn deviation_symmetric_about_peg(prices in prop::collection::vec(0.001f64..1.999, 2..200)) {
            let a = compute_deviation(&series(0, prices.clone()));
            let b = compute_deviation(&series(0, prices.iter().map(|p| 2.0 - p).collect()));
            for (x, y) in a.bps().iter().zip(b.bps()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn align_window_commutes(ps in -50i64..50, pl in 2usize..60, vs in -50i64..50, vl in 2usize..60) {
            let p = series(ps, vec![1.0; pl]);
            let v = MinuteVolumeSeries::new(UtcMinute(vs), vec![0.0; vl]).unwrap();
            let pv = p.window().intersect(&v.window());
            let vp = v.window().intersect(&p.window());
            prop_assert_eq!(pv, vp);
            if let Ok((pa, va)) = align(&p, &v) {
                prop_assert_eq!(Some(pa.window()), pv);
                prop_assert_eq!(pa.window(), va.window());
            }
        }
    }
}
