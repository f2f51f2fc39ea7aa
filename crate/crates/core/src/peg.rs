//! Peg persistence metrics and the par-redemption-rail depth counterfactual.
//!
//! The counterfactual treats a rail of capacity `R` USD/min as extra market
//! depth, of which a share `alpha` passes through at minute frequency. Each
//! minute's deviation is scaled by
//!
//! ```text
//! s_t = max(min_scale, V_eff / (V_eff + alpha * R)),   V_eff = max(V_t, vol_floor)
//! ```
//!
//! so the hybrid deviation never exceeds the baseline and never falls below
//! `min_scale` times it.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{DeviationSeries, MinuteVolumeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridRailParams {
    /// Par-redemption capacity R, USD per minute.
    pub rail_capacity_usd_per_min: f64,
    /// Share of rail capacity acting as tradable depth, in (0, 1].
    pub pass_through: f64,
    pub vol_floor_usd_per_min: f64,
    /// Lower bound on the scaling factor, in (0, 1].
    pub min_scale: f64,
}

impl Default for HybridRailParams {
    fn default() -> Self {
        Self {
            rail_capacity_usd_per_min: 100e6,
            pass_through: 0.5,
            vol_floor_usd_per_min: 5e6,
            min_scale: 0.25,
        }
    }
}

impl HybridRailParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rail_capacity_usd_per_min.is_finite() && self.rail_capacity_usd_per_min >= 0.0) {
            return Err(Error::validation(format!(
                "rail capacity must be nonnegative, got {}",
                self.rail_capacity_usd_per_min
            )));
        }
        if !(self.pass_through > 0.0 && self.pass_through <= 1.0) {
            return Err(Error::validation(format!(
                "pass-through must lie in (0, 1], got {}",
                self.pass_through
            )));
        }
        if !(self.vol_floor_usd_per_min.is_finite() && self.vol_floor_usd_per_min > 0.0) {
            return Err(Error::validation(format!(
                "volume floor must be positive, got {}",
                self.vol_floor_usd_per_min
            )));
        }
        if !(self.min_scale > 0.0 && self.min_scale <= 1.0) {
            return Err(Error::validation(format!(
                "min_scale must lie in (0, 1], got {}",
                self.min_scale
            )));
        }
        Ok(())
    }

    /// Scaling factor for one minute with traded volume `volume_usd`.
    pub fn scale(&self, volume_usd: f64) -> f64 {
        let v_eff = volume_usd.max(self.vol_floor_usd_per_min);
        let raw = v_eff / (v_eff + self.pass_through * self.rail_capacity_usd_per_min);
        raw.max(self.min_scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PegSummary {
    pub d_max_bps: f64,
    pub minutes_ge_eps: u64,
    pub longest_run_ge_gamma: u64,
    pub eps_bps: f64,
    pub gamma_bps: f64,
}

/// Peak deviation, minutes at or above `eps_bps`, and the longest streak of
/// consecutive minutes at or above `gamma_bps`. Both thresholds are
/// inclusive.
pub fn summarize(dev: &DeviationSeries, eps_bps: f64, gamma_bps: f64) -> PegSummary {
    let mut d_max = 0.0f64;
    let mut count = 0u64;
    let mut run = 0u64;
    let mut longest = 0u64;
    for &d in dev.bps() {
        d_max = d_max.max(d);
        if d >= eps_bps {
            count += 1;
        }
        if d >= gamma_bps {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }
    PegSummary {
        d_max_bps: d_max,
        minutes_ge_eps: count,
        longest_run_ge_gamma: longest,
        eps_bps,
        gamma_bps,
    }
}

fn check_grid(dev: &DeviationSeries, vol: &MinuteVolumeSeries) -> Result<()> {
    if dev.window() != vol.window() {
        return Err(Error::Alignment(format!(
            "deviation grid {}+{} does not match volume grid {}+{}",
            dev.start(),
            dev.len(),
            vol.start(),
            vol.len()
        )));
    }
    Ok(())
}

/// Per-minute scaling factors for an aligned volume series.
pub fn scale_factors(
    dev: &DeviationSeries,
    vol: &MinuteVolumeSeries,
    params: &HybridRailParams,
) -> Result<Vec<f64>> {
    params.validate()?;
    check_grid(dev, vol)?;
    Ok(vol.volumes().iter().map(|&v| params.scale(v)).collect())
}

pub fn hybrid_transform(
    dev: &DeviationSeries,
    vol: &MinuteVolumeSeries,
    params: &HybridRailParams,
) -> Result<DeviationSeries> {
    let scales = scale_factors(dev, vol, params)?;
    let bps = dev.bps().iter().zip(&scales).map(|(d, s)| d * s).collect();
    DeviationSeries::new(dev.start(), bps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub pass_through: f64,
    pub summary: PegSummary,
}

/// Recomputes the hybrid summary for each pass-through value in `alphas`.
pub fn alpha_sensitivity(
    dev: &DeviationSeries,
    vol: &MinuteVolumeSeries,
    params: &HybridRailParams,
    alphas: &[f64],
    eps_bps: f64,
    gamma_bps: f64,
) -> Result<Vec<AlphaRow>> {
    alphas
        .iter()
        .map(|&a| {
            let p = HybridRailParams {
                pass_through: a,
                ..*params
            };
            let hyp = hybrid_transform(dev, vol, &p)?;
            Ok(AlphaRow {
                pass_through: a,
                summary: summarize(&hyp, eps_bps, gamma_bps),
            })
        })
        .collect()
}

/// Writes `timestamp,d_base_bps,d_hyp_bps,scale` rows for plotting.
pub fn write_deviation_csv<W: Write>(
    out: W,
    base: &DeviationSeries,
    hybrid: &DeviationSeries,
    scales: &[f64],
) -> Result<()> {
    if base.window() != hybrid.window() || scales.len() != base.len() {
        return Err(Error::Alignment(
            "baseline, hybrid and scale columns differ in length".into(),
        ));
    }
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::validation(format!("csv write failed: {e}"));
    w.write_record(["timestamp", "d_base_bps", "d_hyp_bps", "scale"])
        .map_err(csv_err)?;
    for (i, ((b, h), s)) in base.bps().iter().zip(hybrid.bps()).zip(scales).enumerate() {
        let ts = base.start().offset(i as i64).to_datetime();
        w.write_record([
            ts.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            b.to_string(),
            h.to_string(),
            s.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| Error::validation(format!("csv flush failed: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::UtcMinute;
    use proptest::prelude::*;

    fn dev(v: Vec<f64>) -> DeviationSeries {
        DeviationSeries::new(UtcMinute(0), v).unwrap()
    }

    fn vol(v: Vec<f64>) -> MinuteVolumeSeries {
        MinuteVolumeSeries::new(UtcMinute(0), v).unwrap()
    }

    /// Enumerates every window [i, j) and keeps the longest one whose minutes
    /// all clear the threshold.
    fn longest_run_oracle(d: &[f64], gamma: f64) -> u64 {
        let mut best = 0;
        for i in 0..d.len() {
            for j in i + 1..=d.len() {
                if d[i..j].iter().all(|&x| x >= gamma) {
                    best = best.max((j - i) as u64);
                }
            }
        }
        best
    }

    #[test]
    fn perfect_peg_summary() {
        let s = summarize(&dev(vec![0.0; 20]), 5.0, 10.0);
        assert_eq!(
            (s.d_max_bps, s.minutes_ge_eps, s.longest_run_ge_gamma),
            (0.0, 0, 0)
        );
    }

    #[test]
    fn small_summary_by_hand() {
        let s = summarize(&dev(vec![12.0, 3.0, 11.0, 11.0, 9.0]), 5.0, 10.0);
        assert_eq!(s.d_max_bps, 12.0);
        assert_eq!(s.minutes_ge_eps, 4);
        assert_eq!(s.longest_run_ge_gamma, 2);
    }

    #[test]
    fn thresholds_are_inclusive() {
        let s = summarize(&dev(vec![5.0, 10.0, 10.0]), 5.0, 10.0);
        assert_eq!(s.minutes_ge_eps, 3);
        assert_eq!(s.longest_run_ge_gamma, 2);
    }

    #[test]
    fn zero_rail_is_identity() {
        let p = HybridRailParams {
            rail_capacity_usd_per_min: 0.0,
            ..Default::default()
        };
        let d = dev(vec![1219.0, 300.0, 4.0]);
        let out = hybrid_transform(&d, &vol(vec![1e6, 2e7, 0.0]), &p).unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn floor_binds_at_peak() {
        let out = hybrid_transform(
            &dev(vec![1219.0]),
            &vol(vec![1e6]),
            &HybridRailParams::default(),
        )
        .unwrap();
        assert_eq!(out.bps()[0], 304.75);
    }

    #[test]
    fn boundary_ratio_equals_floor() {
        let p = HybridRailParams {
            rail_capacity_usd_per_min: 30e6,
            ..Default::default()
        };
        assert_eq!(p.scale(5e6), 0.25);
    }

    #[test]
    fn misaligned_grids_rejected() {
        let v = MinuteVolumeSeries::new(UtcMinute(1), vec![1.0, 1.0]).unwrap();
        let r = hybrid_transform(&dev(vec![1.0, 1.0]), &v, &HybridRailParams::default());
        assert!(matches!(r, Err(Error::Alignment(_))));
    }

    #[test]
    fn alpha_grid() {
        let d = dev(vec![800.0, 40.0, 12.0, 6.0, 1219.0, 3.0]);
        let v = vol(vec![2e8, 5e7, 1e7, 1e6, 4e8, 0.0]);
        let p = HybridRailParams::default();
        let rows = alpha_sensitivity(&d, &v, &p, &[0.25, 0.5, 1.0], 5.0, 10.0).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].summary.d_max_bps <= w[0].summary.d_max_bps);
        }
        let single = alpha_sensitivity(&d, &v, &p, &[0.5], 5.0, 10.0).unwrap();
        let direct = summarize(&hybrid_transform(&d, &v, &p).unwrap(), 5.0, 10.0);
        assert_eq!(single[0].summary, direct);

        let tiny = alpha_sensitivity(&d, &v, &p, &[1e-12], 5.0, 10.0).unwrap();
        let base = summarize(&d, 5.0, 10.0);
        assert!((tiny[0].summary.d_max_bps - base.d_max_bps).abs() < 1e-6);
        assert_eq!(tiny[0].summary.minutes_ge_eps, base.minutes_ge_eps);
    }

    #[test]
    fn csv_rows() {
        let d = dev(vec![100.0, 8.0]);
        let v = vol(vec![1e6, 1e6]);
        let p = HybridRailParams::default();
        let h = hybrid_transform(&d, &v, &p).unwrap();
        let s = scale_factors(&d, &v, &p).unwrap();
        let mut buf = Vec::new();
        write_deviation_csv(&mut buf, &d, &h, &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "timestamp,d_base_bps,d_hyp_bps,scale\n\
             1970-01-01T00:00:00Z,100,25,0.25\n\
             1970-01-01T00:01:00Z,8,2,0.25\n"
        );
    }

    fn params() -> impl Strategy<Value = HybridRailParams> {
        (0.0f64..5e8, 0.01f64..=1.0, 1e5f64..1e8, 0.01f64..=1.0).prop_map(|(r, a, f, s)| {
            HybridRailParams {
                rail_capacity_usd_per_min: r,
                pass_through: a,
                vol_floor_usd_per_min: f,
                min_scale: s,
            }
        })
    }

    proptest! {
        #[test]
        fn run_length_matches_enumeration(d in prop::collection::vec(0.0f64..30.0, 1..60), gamma in 0.5f64..25.0) {
            let s = summarize(&dev(d.clone()), gamma, gamma);
            prop_assert_eq!(s.longest_run_ge_gamma, longest_run_oracle(&d, gamma));
            prop_assert!(s.longest_run_ge_gamma <= s.minutes_ge_eps);
        }

        #[test]
        fn floor_binding_identity(v in 0.0f64..1e9, d in 0.0f64..2000.0, p in params()) {
            let v_eff = v.max(p.vol_floor_usd_per_min);
            let raw = v_eff / (v_eff + p.pass_through * p.rail_capacity_usd_per_min);
            let out = hybrid_transform(&dev(vec![d]), &vol(vec![v]), &p).unwrap();
            if raw <= p.min_scale {
                prop_assert_eq!(out.bps()[0], p.min_scale * d);
            }
            prop_assert!(out.bps()[0] <= d);
        }

        #[test]
        fn monotone_in_capacity_and_volume(v in 0.0f64..1e9, dv in 0.0f64..1e8, p in params(), dr in 0.0f64..1e8) {
            let more_rail = HybridRailParams { rail_capacity_usd_per_min: p.rail_capacity_usd_per_min + dr, ..p };
            prop_assert!(more_rail.scale(v) <= p.scale(v));
            prop_assert!(p.scale(v + dv) >= p.scale(v));
        }
    }
}
