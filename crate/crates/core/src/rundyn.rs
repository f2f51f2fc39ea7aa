//! Stylized Diamond–Dybvig run equilibria.
//!
//! A depositor who withdraws early is paid par while assets are sold at the
//! fire-sale value `theta` per dollar. If a fraction `f` withdraws early, the
//! bank sells `f / theta` of its assets, and the remainder matures at
//! `hold_to_maturity_value` and is shared among the `1 - f` who waited:
//!
//! ```text
//! wait(f) = max(0, 1 - f / theta) * hold / (1 - f)
//! ```
//!
//! When every uninsured depositor runs, service is sequential with a uniform
//! random place in line, so a runner is paid in full with probability
//! `theta` and receives nothing otherwise. These payoff functions are a
//! minimal formalization of the $1.00 / $0.70 example, not a calibrated
//! balance-sheet model. Insured depositors always receive par.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PAYOFF_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunModel {
    /// Asset value per $1 of deposits if held to maturity.
    pub hold_to_maturity_value: f64,
    /// Value per $1 of assets liquidated early.
    pub fire_sale_value: f64,
    pub insured_fraction: f64,
    /// Depositors with a genuine need to withdraw early.
    pub impatient_fraction: f64,
}

impl Default for RunModel {
    fn default() -> Self {
        Self {
            hold_to_maturity_value: 1.00,
            fire_sale_value: 0.70,
            insured_fraction: 0.0,
            impatient_fraction: 0.0,
        }
    }
}

impl RunModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.fire_sale_value > 0.0 && self.fire_sale_value <= self.hold_to_maturity_value) {
            return Err(Error::validation(format!(
                "fire-sale value must lie in (0, {}], got {}",
                self.hold_to_maturity_value, self.fire_sale_value
            )));
        }
        if !(0.0..=1.0).contains(&self.insured_fraction) {
            return Err(Error::validation(format!(
                "insured fraction must lie in [0, 1], got {}",
                self.insured_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.impatient_fraction) {
            return Err(Error::validation(format!(
                "impatient fraction must lie in [0, 1), got {}",
                self.impatient_fraction
            )));
        }
        Ok(())
    }
}

/// Payoff per $1 to an uninsured depositor who waits while `withdrawing`
/// of all deposits are pulled early.
pub fn wait_payoff(model: &RunModel, withdrawing: f64) -> Result<f64> {
    model.validate()?;
    if !(0.0..1.0).contains(&withdrawing) {
        return Err(Error::validation(format!(
            "withdrawing fraction must lie in [0, 1), got {withdrawing}"
        )));
    }
    let remaining = (1.0 - withdrawing / model.fire_sale_value).max(0.0);
    Ok(remaining * model.hold_to_maturity_value / (1.0 - withdrawing))
}

/// Expected payoff per $1 to an uninsured runner when all uninsured run.
pub fn run_payoff(model: &RunModel) -> Result<f64> {
    model.validate()?;
    Ok(model.fire_sale_value.min(1.0))
}

/// Payoff per $1 to an insured depositor, whatever the others do.
pub fn insured_payoff() -> f64 {
    1.0
}

/// Limit of the waiting payoff as the early-withdrawal share tends to one.
fn wait_payoff_all_run(model: &RunModel) -> f64 {
    if model.fire_sale_value < 1.0 {
        0.0
    } else {
        // Liquidation at par leaves no first-mover advantage.
        model.hold_to_maturity_value
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Equilibria {
    pub no_run_exists: bool,
    pub run_exists: bool,
}

pub fn classify_equilibria(model: &RunModel) -> Result<Equilibria> {
    let waiting = wait_payoff(model, model.impatient_fraction)?;
    let no_run_exists = waiting >= 1.0 - PAYOFF_TOLERANCE;
    let run_exists = run_payoff(model)? > wait_payoff_all_run(model) + PAYOFF_TOLERANCE
        && model.insured_fraction < 1.0;
    Ok(Equilibria {
        no_run_exists,
        run_exists,
    })
}
