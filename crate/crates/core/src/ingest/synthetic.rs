//! Synthetic de-peg scenario shaped after the March 2023 USDC episode.
//!
//! The deterministic deviation path is zero before the shock, ramps
//! linearly to the peak, decays with the recovery half-life toward a
//! plateau, holds there, then decays to zero with the same half-life.
//! Gaussian noise (clipped at three standard deviations) is added from the
//! shock onward and the result is clamped to `[0, peak]`, so the peak minute
//! is exactly `peak_deviation_bps`.

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{DailyRedemptionSeries, MinutePriceSeries, MinuteVolumeSeries, UtcMinute};

/// Daily redemptions whose type-7 p99 is $1,848,824,810.
pub const SVB_DAILY_REDEMPTIONS: [f64; 5] = [
    1_676_620_250.0,
    1_856_000_000.0,
    742_000_000.0,
    1_215_000_000.0,
    388_000_000.0,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticScenarioSpec {
    pub seed: u64,
    pub start_date: NaiveDate,
    pub window_minutes: u32,
    pub peak_deviation_bps: f64,
    pub shock_onset_minute: u32,
    pub ramp_minutes: u32,
    pub plateau_bps: f64,
    pub plateau_minutes: u32,
    /// Zero means instantaneous decay.
    pub recovery_halflife_minutes: f64,
    pub noise_bps: f64,
    pub daily_redemption_targets: Vec<f64>,
    pub base_volume_usd_per_min: f64,
    pub stress_volume_multiplier: f64,
}

impl Default for SyntheticScenarioSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            start_date: NaiveDate::from_ymd_opt(2023, 3, 10).unwrap(),
            window_minutes: 7200,
            peak_deviation_bps: 1219.0,
            shock_onset_minute: 1320,
            ramp_minutes: 600,
            plateau_bps: 300.0,
            plateau_minutes: 2400,
            recovery_halflife_minutes: 120.0,
            noise_bps: 3.0,
            daily_redemption_targets: SVB_DAILY_REDEMPTIONS.to_vec(),
            base_volume_usd_per_min: 2e6,
            stress_volume_multiplier: 3.0,
        }
    }
}

impl SyntheticScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let spec_err = |m: String| Err(Error::Spec(m));
        if !(self.peak_deviation_bps > self.plateau_bps && self.plateau_bps >= 0.0) {
            return spec_err(format!(
                "need peak > plateau >= 0, got peak {} plateau {}",
                self.peak_deviation_bps, self.plateau_bps
            ));
        }
        if self.peak_deviation_bps >= 10_000.0 {
            return spec_err("peak deviation must stay below 10000 bps".into());
        }
        let stress_end = u64::from(self.shock_onset_minute)
            + u64::from(self.ramp_minutes)
            + u64::from(self.plateau_minutes);
        if stress_end >= u64::from(self.window_minutes) {
            return spec_err(format!(
                "onset + ramp + plateau ({stress_end} min) leaves no recovery inside the {}-minute window",
                self.window_minutes
            ));
        }
        if self.window_minutes < 2 {
            return spec_err("window must span at least 2 minutes".into());
        }
        if !(self.recovery_halflife_minutes >= 0.0 && self.recovery_halflife_minutes.is_finite()) {
            return spec_err("recovery half-life must be finite and nonnegative".into());
        }
        if !(self.noise_bps >= 0.0 && self.noise_bps.is_finite()) {
            return spec_err("noise must be finite and nonnegative".into());
        }
        if self.daily_redemption_targets.is_empty() {
            return spec_err("at least one daily redemption target is required".into());
        }
        if self
            .daily_redemption_targets
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return spec_err("daily redemption targets must be nonnegative".into());
        }
        if !(self.base_volume_usd_per_min > 0.0 && self.stress_volume_multiplier >= 1.0) {
            return spec_err("volumes need a positive base and a multiplier >= 1".into());
        }
        Ok(())
    }

    /// Noise-free deviation at minute `t` of the window.
    pub fn profile_bps(&self, t: u32) -> f64 {
        let onset = self.shock_onset_minute;
        let peak_at = onset + self.ramp_minutes;
        let plateau_end = peak_at + self.plateau_minutes;
        let decay = |elapsed: u32| -> f64 {
            if self.recovery_halflife_minutes == 0.0 {
                if elapsed == 0 { 1.0 } else { 0.0 }
            } else {
                0.5f64.powf(f64::from(elapsed) / self.recovery_halflife_minutes)
            }
        };
        if t < onset {
            0.0
        } else if t < peak_at {
            self.peak_deviation_bps * f64::from(t - onset + 1) / f64::from(self.ramp_minutes + 1)
        } else if t < plateau_end || (t == peak_at && self.plateau_minutes == 0) {
            self.plateau_bps + (self.peak_deviation_bps - self.plateau_bps) * decay(t - peak_at)
        } else {
            let at_end = self.plateau_bps
                + (self.peak_deviation_bps - self.plateau_bps) * decay(plateau_end - peak_at);
            at_end * decay(t - plateau_end)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScenario {
    pub prices: MinutePriceSeries,
    pub volumes: MinuteVolumeSeries,
    pub redemptions: DailyRedemptionSeries,
}

pub fn generate_synthetic_scenario(spec: &SyntheticScenarioSpec) -> Result<SyntheticScenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_bps).map_err(|e| Error::Spec(e.to_string()))?;
    let clip = 3.0 * spec.noise_bps;
    let peak_at = spec.shock_onset_minute + spec.ramp_minutes;

    let n = spec.window_minutes as usize;
    let mut prices = Vec::with_capacity(n);
    let mut volumes = Vec::with_capacity(n);
    for t in 0..spec.window_minutes {
        let base = spec.profile_bps(t);
        let shock = noise.sample(&mut rng).clamp(-clip, clip);
        let dev = if t < spec.shock_onset_minute || t == peak_at {
            base
        } else {
            (base + shock).clamp(0.0, spec.peak_deviation_bps)
        };
        prices.push(1.0 - dev / 10_000.0);

        let stressed = base >= 1.0;
        let mult = if stressed {
            spec.stress_volume_multiplier
        } else {
            1.0
        };
        let jitter: f64 = rng.random_range(0.5..1.5);
        volumes.push(spec.base_volume_usd_per_min * mult * jitter);
    }

    let start = UtcMinute::from_date(spec.start_date);
    let dates = (0..spec.daily_redemption_targets.len())
        .map(|i| spec.start_date + Days::new(i as u64))
        .collect();
    Ok(SyntheticScenario {
        prices: MinutePriceSeries::new(start, prices)?,
        volumes: MinuteVolumeSeries::new(start, volumes)?,
        redemptions: DailyRedemptionSeries::new(dates, spec.daily_redemption_targets.clone())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funding::empirical_quantile;
    use crate::timeseries::compute_deviation;

    fn max_dev(s: &SyntheticScenario) -> f64 {
        compute_deviation(&s.prices)
            .bps()
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    #[test]
    fn default_peak() {
        let s = generate_synthetic_scenario(&SyntheticScenarioSpec::default()).unwrap();
        assert!((max_dev(&s) - 1219.0).abs() <= 1.0);
        assert_eq!(s.prices.len(), 7200);
    }

    #[test]
    fn zero_before_onset() {
        let spec = SyntheticScenarioSpec::default();
        let s = generate_synthetic_scenario(&spec).unwrap();
        let d = compute_deviation(&s.prices);
        assert!(
            d.bps()[..spec.shock_onset_minute as usize]
                .iter()
                .all(|&x| x == 0.0)
        );
    }

    #[test]
    fn degenerate_single_spike() {
        let spec = SyntheticScenarioSpec {
            noise_bps: 0.0,
            plateau_bps: 0.0,
            plateau_minutes: 0,
            ramp_minutes: 0,
            recovery_halflife_minutes: 0.0,
            shock_onset_minute: 10,
            window_minutes: 30,
            ..Default::default()
        };
        let s = generate_synthetic_scenario(&spec).unwrap();
        let d = compute_deviation(&s.prices);
        let nonzero: Vec<usize> = (0..d.len()).filter(|&i| d.bps()[i] > 1e-9).collect();
        assert_eq!(nonzero, vec![10]);
        assert!((d.bps()[10] - 1219.0).abs() < 1e-6);
    }

    #[test]
    fn deterministic_for_seed() {
        let spec = SyntheticScenarioSpec::default();
        let a = generate_synthetic_scenario(&spec).unwrap();
        let b = generate_synthetic_scenario(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_scenario(&SyntheticScenarioSpec { seed: 7, ..spec }).unwrap();
        assert_ne!(a.prices, c.prices);
    }

    #[test]
    fn redemptions_hit_targets_and_table_p99() {
        let s = generate_synthetic_scenario(&SyntheticScenarioSpec::default()).unwrap();
        assert_eq!(s.redemptions.redemptions(), &SVB_DAILY_REDEMPTIONS);
        let p99 = empirical_quantile(s.redemptions.redemptions(), 0.99).unwrap();
        assert!((p99 - 1_848_824_810.0).abs() / 1_848_824_810.0 < 1e-3);
    }

    #[test]
    fn stress_volumes_scaled() {
        let spec = SyntheticScenarioSpec::default();
        let s = generate_synthetic_scenario(&spec).unwrap();
        let v = s.volumes.volumes();
        assert!(
            v[..100]
                .iter()
                .all(|&x| x < 1.5 * spec.base_volume_usd_per_min)
        );
        let peak = (spec.shock_onset_minute + spec.ramp_minutes) as usize;
        assert!(v[peak] >= 1.5 * spec.base_volume_usd_per_min);
    }

    #[test]
    fn infeasible_specs_rejected() {
        let too_long = SyntheticScenarioSpec {
            plateau_minutes: 10_000,
            ..Default::default()
        };
        assert!(matches!(
            generate_synthetic_scenario(&too_long),
            Err(Error::Spec(_))
        ));
        let inverted = SyntheticScenarioSpec {
            plateau_bps: 2000.0,
            ..Default::default()
        };
        assert!(matches!(
            generate_synthetic_scenario(&inverted),
            Err(Error::Spec(_))
        ));
    }
}
