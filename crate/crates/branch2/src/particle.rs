//! Exact event-driven (Gillespie) simulation of the individual-based
//! two-level model: cells split at rate r(z) allocating particles
//! binomially, particles birth and die at the fast within-cell rates.
//!
//! Event selection walks a prefix-sum tree over per-cell composite rates,
//! O(log n) per event; the tree is rebuilt periodically to wash out float
//! drift from incremental updates.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fenwick::FenwickTree;
use crate::params::Params;
use crate::state::ParticleState;

const REBUILD_INTERVAL: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParticleEventKind {
    /// Cell `cell` split; `allocated` particles went to the first daughter.
    Split { cell: usize, allocated: u64 },
    Birth { cell: usize },
    Death { cell: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleEvent {
    pub time: f64,
    pub kind: ParticleEventKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticleTrajectory {
    pub initial: ParticleState,
    /// Present only when event recording was requested.
    pub events: Vec<ParticleEvent>,
    pub snapshots: Vec<(f64, ParticleState)>,
    pub final_state: ParticleState,
    pub final_time: f64,
    pub event_count: u64,
}

/// Per-cell jump rates at particle count `n`:
/// split `r(zeta n)`, birth `(sigma/zeta + K) n`, death
/// `n (sigma/zeta + lambda zeta (n-1))`.
pub fn cell_rates(n: u64, params: &Params) -> Result<(f64, f64, f64)> {
    let zeta = params.zeta;
    let per_birth = params.sigma / zeta + params.capital_k;
    if per_birth < 0.0 {
        return Err(Error::InvalidParams(format!(
            "sigma/zeta + K must be nonnegative, got {per_birth}"
        )));
    }
    let nf = n as f64;
    let split = params.split_rate(zeta * nf);
    let birth = per_birth * nf;
    let death = nf * (params.sigma / zeta + params.lambda * zeta * (nf - 1.0).max(0.0));
    Ok((split, birth, death))
}

/// Exact Binomial(n, theta) draw for the split allocation.
pub fn sample_split_allocation<R: Rng + ?Sized>(n: u64, theta: f64, rng: &mut R) -> u64 {
    if n == 0 {
        return 0;
    }
    Binomial::new(n, theta)
        .expect("theta validated in (0,1)")
        .sample(rng)
}

fn composite_rate(n: u64, params: &Params) -> Result<f64> {
    let (s, b, d) = cell_rates(n, params)?;
    Ok(s + b + d)
}

/// Exact Gillespie realization of the particle model on [0, t_end].
///
/// Snapshots are recorded at each requested observation time (clamped to
/// t_end). With `record_events` the full event list is kept; replaying it
/// from the initial state reproduces every snapshot exactly.
pub fn simulate_particle<R: Rng + ?Sized>(
    init: &ParticleState,
    params: &Params,
    t_end: f64,
    obs_times: &[f64],
    rng: &mut R,
    record_events: bool,
) -> Result<ParticleTrajectory> {
    params.validate_particle()?;
    if !t_end.is_finite() || t_end < 0.0 {
        return Err(Error::Domain("t_end must be nonnegative".into()));
    }
    let mut obs: Vec<f64> = obs_times.iter().map(|&t| t.min(t_end)).collect();
    obs.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut counts = init.counts.clone();
    let mut tree = FenwickTree::from_rates(
        &counts
            .iter()
            .map(|&n| composite_rate(n, params))
            .collect::<Result<Vec<_>>>()?,
    );
    let mut t = 0.0f64;
    let mut events = Vec::new();
    let mut snapshots = Vec::with_capacity(obs.len());
    let mut next_obs = 0usize;
    let mut event_count = 0u64;

    loop {
        let total = if tree.is_empty() { 0.0 } else { tree.total() };
        if !total.is_finite() {
            return Err(Error::RateOverflow {
                time: t,
                cells: counts.len(),
            });
        }
        let t_next = if total > 0.0 {
            t + exponential(total, rng)
        } else {
            f64::INFINITY
        };
        // flush observation times passed before the next event
        while next_obs < obs.len() && obs[next_obs] <= t_next.min(t_end) {
            snapshots.push((obs[next_obs], ParticleState::new(counts.clone())));
            next_obs += 1;
        }
        if t_next > t_end {
            t = t_end;
            break;
        }
        t = t_next;

        let cell = tree.select(rng.random::<f64>() * total);
        let n = counts[cell];
        let (split, birth, _death) = cell_rates(n, params)?;
        let u = rng.random::<f64>() * tree.get(cell);
        let kind = if u < split {
            let k = sample_split_allocation(n, params.theta, rng);
            counts[cell] = k;
            counts.push(n - k);
            tree.set(cell, composite_rate(k, params)?);
            tree.push(composite_rate(n - k, params)?);
            ParticleEventKind::Split { cell, allocated: k }
        } else if u < split + birth {
            counts[cell] = n + 1;
            tree.set(cell, composite_rate(n + 1, params)?);
            ParticleEventKind::Birth { cell }
        } else {
            // death rate is 0 at n=0, so n >= 1 here
            counts[cell] = n - 1;
            tree.set(cell, composite_rate(n - 1, params)?);
            ParticleEventKind::Death { cell }
        };
        if record_events {
            events.push(ParticleEvent { time: t, kind });
        }
        event_count += 1;
        if event_count.is_multiple_of(REBUILD_INTERVAL) {
            tree.rebuild();
        }
    }

    Ok(ParticleTrajectory {
        initial: init.clone(),
        events,
        snapshots,
        final_state: ParticleState::new(counts),
        final_time: t,
        event_count,
    })
}

fn exponential<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    // inverse transform; 1-u avoids ln(0)
    -(1.0 - rng.random::<f64>()).ln() / rate
}

/// Replay an event list from `initial`, returning the state after all
/// events with time <= `t`. Split events must conserve particle counts
/// exactly; this is checked.
pub fn replay_events(initial: &ParticleState, events: &[ParticleEvent], t: f64) -> ParticleState {
    let mut counts = initial.counts.clone();
    for ev in events.iter().take_while(|e| e.time <= t) {
        match ev.kind {
            ParticleEventKind::Split { cell, allocated } => {
                let n = counts[cell];
                assert!(allocated <= n, "split allocation exceeds cell count");
                counts[cell] = allocated;
                counts.push(n - allocated);
            }
            ParticleEventKind::Birth { cell } => counts[cell] += 1,
            ParticleEventKind::Death { cell } => counts[cell] -= 1,
        }
    }
    ParticleState::new(counts)
}
