//! Worst-hour redemption desk modelled as an M/M/c queue.
//!
//! Rates are per minute; waits are reported in seconds. The Erlang-C
//! probability is evaluated through the Erlang-B recurrence
//! `B(k) = a B(k-1) / (k + a B(k-1))`, which stays finite for any server
//! count, then `C = B / (1 - rho (1 - B))`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueParams {
    /// Requests per minute.
    pub arrival_rate: f64,
    /// Requests per minute per server.
    pub service_rate: f64,
    pub servers: u32,
    pub ticket_size_usd: f64,
    pub sla_seconds: f64,
}

impl QueueParams {
    pub fn new(arrival_rate: f64, service_rate: f64, servers: u32) -> Self {
        Self {
            arrival_rate,
            service_rate,
            servers,
            ticket_size_usd: 1e6,
            sla_seconds: 60.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("arrival rate", self.arrival_rate)?;
        positive("service rate", self.service_rate)?;
        positive("ticket size", self.ticket_size_usd)?;
        positive("SLA", self.sla_seconds)?;
        if self.servers == 0 {
            return Err(Error::validation("at least one server is required"));
        }
        Ok(())
    }

    pub fn offered_load(&self) -> f64 {
        self.arrival_rate / self.service_rate
    }

    pub fn utilization(&self) -> f64 {
        self.arrival_rate / (f64::from(self.servers) * self.service_rate)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueResult {
    pub stable: bool,
    pub utilization: f64,
    /// Probability an arrival waits; 1 for an unstable queue.
    pub p_wait: f64,
    /// Mean wait in queue; `None` when the queue grows without bound.
    pub wq_seconds: Option<f64>,
}

/// `lambda = (Q_1h / S) / 60` requests per minute.
pub fn arrival_rate_from_tail(q_1h_usd: f64, ticket_size_usd: f64) -> Result<f64> {
    positive("1h outflow", q_1h_usd)?;
    positive("ticket size", ticket_size_usd)?;
    Ok(q_1h_usd / ticket_size_usd / 60.0)
}

/// Erlang-C probability of waiting for `servers` servers at offered load `a`.
/// Caller guarantees `a < servers`.
fn erlang_c_probability(a: f64, servers: u32) -> f64 {
    let mut b = 1.0;
    for k in 1..=servers {
        b = a * b / (f64::from(k) + a * b);
    }
    let rho = a / f64::from(servers);
    b / (1.0 - rho * (1.0 - b))
}

pub fn erlang_c(params: &QueueParams) -> Result<QueueResult> {
    params.validate()?;
    let rho = params.utilization();
    if rho >= 1.0 {
        return Ok(QueueResult {
            stable: false,
            utilization: rho,
            p_wait: 1.0,
            wq_seconds: None,
        });
    }
    let p_wait = erlang_c_probability(params.offered_load(), params.servers);
    let capacity = f64::from(params.servers) * params.service_rate;
    Ok(QueueResult {
        stable: true,
        utilization: rho,
        p_wait,
        wq_seconds: Some(60.0 * p_wait / (capacity - params.arrival_rate)),
    })
}

/// Smallest stable server count whose mean wait meets `sla_seconds`.
pub fn min_servers(arrival_rate: f64, service_rate: f64, sla_seconds: f64) -> Result<u32> {
    positive("arrival rate", arrival_rate)?;
    positive("service rate", service_rate)?;
    positive("SLA", sla_seconds)?;
    let mut c = (arrival_rate / service_rate).ceil().max(1.0) as u32;
    loop {
        let mut p = QueueParams::new(arrival_rate, service_rate, c);
        p.sla_seconds = sla_seconds;
        if erlang_c(&p)?.wq_seconds.is_some_and(|wq| wq <= sla_seconds) {
            return Ok(c);
        }
        c += 1;
    }
}

/// Empirical estimates from [`simulate_mmc`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEstimate {
    pub arrivals: u64,
    pub p_wait: f64,
    pub wq_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Time(f64);

impl Eq for Time {}

impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Time {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// FIFO M/M/c discrete-event simulation.
///
/// Each server is represented by the time it next becomes free; an arrival
/// is dispatched to the earliest-free server, which under FIFO is exactly
/// the server that would pick it up in an event-by-event simulation.
pub fn simulate_mmc(params: &QueueParams, arrivals: u64, seed: u64) -> Result<SimEstimate> {
    params.validate()?;
    if params.utilization() >= 1.0 {
        return Err(Error::Unstable {
            utilization: params.utilization(),
        });
    }
    if arrivals == 0 {
        return Err(Error::validation("simulation needs at least one arrival"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let interarrival = Exp::new(params.arrival_rate).expect("validated rate");
    let service = Exp::new(params.service_rate).expect("validated rate");

    let mut free_at: BinaryHeap<Reverse<Time>> =
        (0..params.servers).map(|_| Reverse(Time(0.0))).collect();
    let mut clock = 0.0;
    let mut total_wait = 0.0;
    let mut waited = 0u64;
    for _ in 0..arrivals {
        clock += interarrival.sample(&mut rng);
        let Reverse(Time(free)) = free_at.pop().expect("at least one server");
        let start = free.max(clock);
        let wait = start - clock;
        if wait > 0.0 {
            waited += 1;
            total_wait += wait;
        }
        free_at.push(Reverse(Time(start + service.sample(&mut rng))));
    }
    let n = arrivals as f64;
    Ok(SimEstimate {
        arrivals,
        p_wait: waited as f64 / n,
        wq_seconds: 60.0 * total_wait / n,
    })
}
