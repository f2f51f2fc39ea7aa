//! CSV ingestion, gap repair and minute-level redemption demand.
//!
//! Price files carry `timestamp,price,volume_usd` with timestamps either as
//! epoch seconds or ISO-8601 UTC; every timestamp must fall on a whole
//! minute. Short gaps are repaired by carrying the last price forward and
//! booking zero volume. Redemption files carry `date,redemption_usd`.

pub mod synthetic;

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{
    DailyRedemptionSeries, DemandTrace, DeviationSeries, MinutePriceSeries, MinuteVolumeSeries,
    UtcMinute,
};

pub use synthetic::{SyntheticScenario, SyntheticScenarioSpec, generate_synthetic_scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapPolicy {
    #[default]
    Error,
    /// Keep the longest contiguous stretch and discard the rest.
    DropWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DuplicatePolicy {
    #[default]
    Error,
    KeepFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestPolicy {
    pub max_gap_fill_minutes: u32,
    pub on_longer_gap: GapPolicy,
    pub duplicate_policy: DuplicatePolicy,
}

impl Default for IngestPolicy {
    fn default() -> Self {
        Self {
            max_gap_fill_minutes: 5,
            on_longer_gap: GapPolicy::Error,
            duplicate_policy: DuplicatePolicy::Error,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub rows_read: usize,
    pub filled_minutes: usize,
    pub duplicates_dropped: usize,
    /// Rows discarded by [`GapPolicy::DropWindow`].
    pub dropped_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceData {
    pub prices: MinutePriceSeries,
    pub volumes: MinuteVolumeSeries,
    pub report: ParseReport,
}

#[derive(Debug, Deserialize)]
struct PriceRow {
    timestamp: String,
    price: String,
    volume_usd: String,
}

#[derive(Debug, Deserialize)]
struct RedemptionRow {
    date: String,
    redemption_usd: String,
}

struct Observation {
    minute: UtcMinute,
    price: f64,
    volume: f64,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn parse_error(source: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: source.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn csv_error(source: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(source, io),
            _ => unreachable!(),
        },
        _ => parse_error(source, line, e.to_string()),
    }
}

/// Accepts epoch seconds, RFC 3339, or a zone-less ISO timestamp read as UTC.
pub fn parse_timestamp(raw: &str) -> std::result::Result<DateTime<Utc>, String> {
    let raw = raw.trim();
    if let Ok(secs) = raw.parse::<i64>() {
        return DateTime::from_timestamp(secs, 0)
            .ok_or_else(|| format!("epoch {secs} out of range"));
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Ok(dt.with_timezone(&Utc));
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(naive.and_utc());
        }
    }
    Err(format!("unrecognised timestamp {raw:?}"))
}

fn parse_number(source: &Path, line: u64, column: &str, raw: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .map_err(|_| parse_error(source, line, format!("{column}: not a number: {raw:?}")))
}

pub fn parse_price_csv(path: impl AsRef<Path>, policy: &IngestPolicy) -> Result<PriceData> {
    let path = path.as_ref();
    read_price_csv(open(path)?, path, policy)
}

/// Reads a price file from any reader; `source` is only used in messages.
pub fn read_price_csv<R: Read>(
    reader: R,
    source: &Path,
    policy: &IngestPolicy,
) -> Result<PriceData> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(source, e))?.clone();
    for col in ["timestamp", "price", "volume_usd"] {
        if !headers.iter().any(|h| h == col) {
            return Err(parse_error(source, 1, format!("missing column {col:?}")));
        }
    }

    let mut obs = Vec::new();
    for row in rdr.deserialize::<PriceRow>() {
        let row = row.map_err(|e| csv_error(source, e))?;
        let line = obs.len() as u64 + 2;
        let dt = parse_timestamp(&row.timestamp).map_err(|m| parse_error(source, line, m))?;
        let minute =
            UtcMinute::from_datetime(dt).map_err(|e| parse_error(source, line, e.to_string()))?;
        let price = parse_number(source, line, "price", &row.price)?;
        let volume = parse_number(source, line, "volume_usd", &row.volume_usd)?;
        if !(price.is_finite() && price > 0.0) {
            return Err(Error::validation(format!(
                "{}:{line}: price must be positive, got {price}",
                source.display()
            )));
        }
        if !(volume.is_finite() && volume >= 0.0) {
            return Err(Error::validation(format!(
                "{}:{line}: volume must be nonnegative, got {volume}",
                source.display()
            )));
        }
        obs.push((
            line,
            Observation {
                minute,
                price,
                volume,
            },
        ));
    }
    if obs.is_empty() {
        return Err(parse_error(source, 1, "no data rows"));
    }

    let mut report = ParseReport {
        rows_read: obs.len(),
        ..Default::default()
    };

    obs.sort_by_key(|(_, o)| o.minute);
    let mut unique: Vec<(u64, Observation)> = Vec::with_capacity(obs.len());
    for (line, o) in obs {
        if unique
            .last()
            .is_some_and(|(_, prev)| prev.minute == o.minute)
        {
            match policy.duplicate_policy {
                DuplicatePolicy::Error => {
                    return Err(parse_error(
                        source,
                        line,
                        format!("duplicate timestamp {}", o.minute),
                    ));
                }
                DuplicatePolicy::KeepFirst => {
                    report.duplicates_dropped += 1;
                    continue;
                }
            }
        }
        unique.push((line, o));
    }

    // Split into contiguous segments at gaps too long to fill.
    let mut segments: Vec<Vec<Observation>> = vec![Vec::new()];
    let limit = i64::from(policy.max_gap_fill_minutes);
    for (_, o) in unique {
        let seg = segments.last_mut().expect("nonempty");
        if let Some(prev) = seg.last() {
            let missing = o.minute.0 - prev.minute.0 - 1;
            if missing > limit {
                match policy.on_longer_gap {
                    GapPolicy::Error => {
                        return Err(Error::Gap {
                            path: source.to_path_buf(),
                            after: prev.minute.0,
                            missing,
                            limit: policy.max_gap_fill_minutes,
                        });
                    }
                    GapPolicy::DropWindow => {
                        segments.push(vec![o]);
                        continue;
                    }
                }
            }
        }
        seg.push(o);
    }
    let total_rows: usize = segments.iter().map(Vec::len).sum();
    let keep = segments
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            let span = |s: &Vec<Observation>| s.last().unwrap().minute.0 - s[0].minute.0;
            span(a).cmp(&span(b)).then(ib.cmp(ia))
        })
        .map(|(i, _)| i)
        .expect("at least one segment");
    let segment = segments.swap_remove(keep);
    report.dropped_rows = total_rows - segment.len();

    let start = segment[0].minute;
    let mut prices = Vec::with_capacity(segment.len());
    let mut volumes = Vec::with_capacity(segment.len());
    for o in &segment {
        if let Some(&last) = prices.last() {
            let missing = (o.minute.0 - start.0) as usize - prices.len();
            for _ in 0..missing {
                prices.push(last);
                volumes.push(0.0);
            }
            report.filled_minutes += missing;
        }
        prices.push(o.price);
        volumes.push(o.volume);
    }

    Ok(PriceData {
        prices: MinutePriceSeries::new(start, prices)?,
        volumes: MinuteVolumeSeries::new(start, volumes)?,
        report,
    })
}

/// Writes prices and volumes in the format [`read_price_csv`] accepts.
pub fn write_price_csv<W: Write>(
    out: W,
    prices: &MinutePriceSeries,
    volumes: &MinuteVolumeSeries,
) -> Result<()> {
    if prices.window() != volumes.window() {
        return Err(Error::Alignment("price and volume grids differ".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::validation(format!("csv write failed: {e}"));
    w.write_record(["timestamp", "price", "volume_usd"])
        .map_err(err)?;
    for (i, (p, v)) in prices.prices().iter().zip(volumes.volumes()).enumerate() {
        let ts = prices.start().offset(i as i64).to_datetime();
        w.write_record([
            ts.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            p.to_string(),
            v.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::validation(format!("csv flush failed: {e}")))
}

pub fn parse_redemption_csv(
    path: impl AsRef<Path>,
    policy: &IngestPolicy,
) -> Result<DailyRedemptionSeries> {
    let path = path.as_ref();
    read_redemption_csv(open(path)?, path, policy)
}

pub fn read_redemption_csv<R: Read>(
    reader: R,
    source: &Path,
    policy: &IngestPolicy,
) -> Result<DailyRedemptionSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(source, e))?.clone();
    for col in ["date", "redemption_usd"] {
        if !headers.iter().any(|h| h == col) {
            return Err(parse_error(source, 1, format!("missing column {col:?}")));
        }
    }
    let mut rows: Vec<(u64, NaiveDate, f64)> = Vec::new();
    for row in rdr.deserialize::<RedemptionRow>() {
        let row = row.map_err(|e| csv_error(source, e))?;
        let line = rows.len() as u64 + 2;
        let date = row
            .date
            .trim()
            .parse::<NaiveDate>()
            .map_err(|_| parse_error(source, line, format!("bad date {:?}", row.date)))?;
        let usd = parse_number(source, line, "redemption_usd", &row.redemption_usd)?;
        if !(usd.is_finite() && usd >= 0.0) {
            return Err(Error::validation(format!(
                "{}:{line}: redemption must be nonnegative, got {usd}",
                source.display()
            )));
        }
        rows.push((line, date, usd));
    }
    if rows.is_empty() {
        return Err(parse_error(source, 1, "no data rows"));
    }
    rows.sort_by_key(|&(_, d, _)| d);
    let mut dates: Vec<NaiveDate> = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    for (line, d, v) in rows {
        if dates.last() == Some(&d) {
            match policy.duplicate_policy {
                DuplicatePolicy::Error => {
                    return Err(parse_error(source, line, format!("duplicate date {d}")));
                }
                DuplicatePolicy::KeepFirst => continue,
            }
        }
        dates.push(d);
        values.push(v);
    }
    DailyRedemptionSeries::new(dates, values)
}

pub fn write_redemption_csv<W: Write>(out: W, series: &DailyRedemptionSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::validation(format!("csv write failed: {e}"));
    w.write_record(["date", "redemption_usd"]).map_err(err)?;
    for (d, v) in series.iter() {
        w.write_record([d.to_string(), v.to_string()])
            .map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::validation(format!("csv flush failed: {e}")))
}

// ---------------------------------------------------------------------------
// Minute-resolution redemption demand
// ---------------------------------------------------------------------------

/// Hour of day (UTC) used when a day has no price coverage.
pub const DEFAULT_WORST_HOUR: u32 = 14;

/// For each redemption day, the UTC hour with the highest mean deviation.
pub fn worst_hours_from_deviation(dev: &DeviationSeries, days: &DailyRedemptionSeries) -> Vec<u32> {
    days.dates()
        .iter()
        .map(|&date| {
            let day_start = UtcMinute::from_date(date);
            let mut best: Option<(u32, f64)> = None;
            for hour in 0..24u32 {
                let from = day_start.offset(i64::from(hour) * 60).0 - dev.start().0;
                let to = from + 60;
                if from < 0 || to > dev.len() as i64 {
                    continue;
                }
                let mean = dev.bps()[from as usize..to as usize].iter().sum::<f64>() / 60.0;
                if best.is_none_or(|(_, m)| mean > m) {
                    best = Some((hour, mean));
                }
            }
            best.map_or(DEFAULT_WORST_HOUR, |(h, _)| h)
        })
        .collect()
}

/// Spreads each day's total over its minutes: `worst_hour_share` of the flow
/// lands uniformly in the day's worst hour, the rest uniformly over the
/// remaining 23 hours. Days missing from the calendar get zero demand.
pub fn minute_demand_trace(
    days: &DailyRedemptionSeries,
    worst_hour_share: f64,
    worst_hours: &[u32],
) -> Result<DemandTrace> {
    if !(0.0..=1.0).contains(&worst_hour_share) {
        return Err(Error::validation(format!(
            "worst-hour share must lie in [0, 1], got {worst_hour_share}"
        )));
    }
    if worst_hours.len() != days.len() {
        return Err(Error::validation(format!(
            "{} worst hours for {} days",
            worst_hours.len(),
            days.len()
        )));
    }
    let (Some(&first), Some(&last)) = (days.dates().first(), days.dates().last()) else {
        return Err(Error::validation("no redemption days"));
    };
    let start = UtcMinute::from_date(first);
    let n_days = (last - first).num_days() as usize + 1;
    let mut usd = vec![0.0; n_days * 1440];
    for ((date, total), &hour) in days.iter().zip(worst_hours) {
        if hour >= 24 {
            return Err(Error::validation(format!("worst hour {hour} out of range")));
        }
        let offset = (date - first).num_days() as usize * 1440;
        let peak = worst_hour_share * total / 60.0;
        let rest = (1.0 - worst_hour_share) * total / 1380.0;
        let day = &mut usd[offset..offset + 1440];
        for (m, slot) in day.iter_mut().enumerate() {
            *slot = if m / 60 == hour as usize { peak } else { rest };
        }
    }
    DemandTrace::new(start, usd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn read(text: &str, policy: &IngestPolicy) -> Result<PriceData> {
        read_price_csv(text.as_bytes(), Path::new("prices.csv"), policy)
    }

    fn read_days(text: &str) -> Result<DailyRedemptionSeries> {
        read_redemption_csv(
            text.as_bytes(),
            Path::new("days.csv"),
            &IngestPolicy::default(),
        )
    }

    #[test]
    fn happy_path() {
        let d = read(
            "timestamp,price,volume_usd\n\
             2023-03-10T00:00:00Z,1.0,100\n\
             2023-03-10T00:01:00Z,0.999,200\n\
             2023-03-10T00:02:00Z,0.998,300\n",
            &IngestPolicy::default(),
        )
        .unwrap();
        assert_eq!(d.prices.len(), 3);
        assert_eq!(
            d.prices.start(),
            UtcMinute::from_date("2023-03-10".parse().unwrap())
        );
        assert_eq!(d.report.filled_minutes, 0);
    }

    #[test]
    fn short_gap_forward_fills() {
        let d = read(
            "timestamp,price,volume_usd\n0,0.99,10\n180,0.95,30\n",
            &IngestPolicy::default(),
        )
        .unwrap();
        assert_eq!(d.prices.prices(), &[0.99, 0.99, 0.99, 0.95]);
        assert_eq!(d.volumes.volumes(), &[10.0, 0.0, 0.0, 30.0]);
        assert_eq!(d.report.filled_minutes, 2);
    }

    #[test]
    fn long_gap_errors_or_drops() {
        let text = "timestamp,price,volume_usd\n0,1,1\n60,1,1\n600,0.9,1\n660,0.9,1\n720,0.9,1\n";
        assert!(matches!(
            read(text, &IngestPolicy::default()),
            Err(Error::Gap { .. })
        ));
        let policy = IngestPolicy {
            on_longer_gap: GapPolicy::DropWindow,
            ..Default::default()
        };
        let d = read(text, &policy).unwrap();
        assert_eq!(d.prices.start(), UtcMinute(10));
        assert_eq!(d.prices.len(), 3);
        assert_eq!(d.report.dropped_rows, 2);
    }

    #[test]
    fn negative_price_names_row() {
        let err = read(
            "timestamp,price,volume_usd\n0,1.0,1\n60,-0.5,1\n",
            &IngestPolicy::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains(":3:"), "{err}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = read(
            "timestamp,price,volume_usd\n0,1.0,1\n60,abc,1\n",
            &IngestPolicy::default(),
        )
        .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn sub_minute_timestamps_rejected() {
        assert!(
            read(
                "timestamp,price,volume_usd\n0,1,1\n61,1,1\n",
                &IngestPolicy::default()
            )
            .is_err()
        );
    }

    #[test]
    fn duplicates_follow_policy() {
        let text = "timestamp,price,volume_usd\n0,1.0,1\n0,0.5,1\n60,1.0,1\n";
        assert!(read(text, &IngestPolicy::default()).is_err());
        let policy = IngestPolicy {
            duplicate_policy: DuplicatePolicy::KeepFirst,
            ..Default::default()
        };
        let d = read(text, &policy).unwrap();
        assert_eq!(d.prices.prices(), &[1.0, 1.0]);
        assert_eq!(d.report.duplicates_dropped, 1);
    }

    #[test]
    fn timestamp_formats() {
        let a = parse_timestamp("1678406400").unwrap();
        let b = parse_timestamp("2023-03-10T00:00:00Z").unwrap();
        let c = parse_timestamp("2023-03-10 00:00:00").unwrap();
        let d = parse_timestamp("2023-03-09T19:00:00-05:00").unwrap();
        assert!(a == b && b == c && c == d);
        assert!(parse_timestamp("yesterday").is_err());
    }

    #[test]
    fn redemption_rows() {
        let s = read_days(
            "date,redemption_usd\n2023-03-12,3\n2023-03-10,1848824810\n2023-03-11,2\n2023-03-14,5\n2023-03-13,4\n",
        )
        .unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.dates().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s.redemptions()[0], 1_848_824_810.0);
        assert!(read_days("date,redemption_usd\n2023-03-10,-1\n").is_err());
        assert!(read_days("date,redemption_usd\n2023-03-10,1\n2023-03-10,2\n").is_err());
    }

    #[test]
    fn demand_trace_concentrates_worst_hour() {
        let s = read_days("date,redemption_usd\n2023-03-10,6000\n2023-03-12,1380\n").unwrap();
        let t = minute_demand_trace(&s, 0.75, &[3, 0]).unwrap();
        assert_eq!(t.len(), 3 * 1440);
        assert!((t.usd()[3 * 60] - 75.0).abs() < 1e-9);
        assert!((t.usd()[0] - 1500.0 / 1380.0).abs() < 1e-9);
        assert!(t.usd()[1440..2880].iter().all(|&x| x == 0.0));
        assert!((t.total() - 7380.0).abs() < 1e-6);
        let hour: f64 = t.usd()[180..240].iter().sum();
        assert!((hour - 4500.0).abs() < 1e-6);
    }

    #[test]
    fn worst_hour_tracks_deviation() {
        let start = UtcMinute::from_date("2023-03-10".parse().unwrap());
        let mut bps = vec![1.0; 1440];
        for b in &mut bps[7 * 60..8 * 60] {
            *b = 500.0;
        }
        let dev = DeviationSeries::new(start, bps).unwrap();
        let days = read_days("date,redemption_usd\n2023-03-10,1\n2023-03-11,1\n").unwrap();
        assert_eq!(
            worst_hours_from_deviation(&dev, &days),
            vec![7, DEFAULT_WORST_HOUR]
        );
    }

    proptest! {
        #[test]
        fn price_csv_round_trip(
            start in 0i64..40_000_000,
            rows in prop::collection::vec((1e-4f64..5.0, 0.0f64..1e9), 2..100),
        ) {
            let prices = MinutePriceSeries::new(UtcMinute(start), rows.iter().map(|r| r.0).collect()).unwrap();
            let volumes = MinuteVolumeSeries::new(UtcMinute(start), rows.iter().map(|r| r.1).collect()).unwrap();
            let mut buf = Vec::new();
            write_price_csv(&mut buf, &prices, &volumes).unwrap();
            let back = read_price_csv(buf.as_slice(), Path::new("rt.csv"), &IngestPolicy::default()).unwrap();
            prop_assert_eq!(back.prices, prices);
            prop_assert_eq!(back.volumes, volumes);
        }

        #[test]
        fn redemption_csv_round_trip(vals in prop::collection::vec(0.0f64..1e10, 1..40)) {
            let first: NaiveDate = "2023-01-01".parse().unwrap();
            let dates = (0..vals.len()).map(|i| first + chrono::Days::new(i as u64 * 2)).collect();
            let s = DailyRedemptionSeries::new(dates, vals).unwrap();
            let mut buf = Vec::new();
            write_redemption_csv(&mut buf, &s).unwrap();
            let back = read_redemption_csv(buf.as_slice(), Path::new("rt.csv"), &IngestPolicy::default()).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
