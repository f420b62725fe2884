//! Control-step latency measurement against the 650 Hz tick budget.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::runtime::{postprocess, preprocess, InferenceRuntime, StateInputs};

pub const WARMUP_CALLS: usize = 100;
pub const MIN_ITERATIONS: usize = 1000;
pub const TICK_RATE_HZ: f64 = 650.0;
/// One 650 Hz tick, ns.
pub const TICK_BUDGET_NS: f64 = 1e9 / TICK_RATE_HZ;
/// Cortex-M7 (460 MHz) figures published for the original module.
pub const REFERENCE_INFER_US: f64 = 93.4;
pub const REFERENCE_LOOP_US: f64 = 137.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Preprocess,
    Infer,
    Postprocess,
    Total,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Preprocess, Phase::Infer, Phase::Postprocess, Phase::Total];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Preprocess => "preprocess",
            Phase::Infer => "infer",
            Phase::Postprocess => "postprocess",
            Phase::Total => "total",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseStats {
    pub phase: Phase,
    pub samples: usize,
    pub p50_ns: u64,
    pub p95_ns: u64,
    pub p99_ns: u64,
    pub max_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub iterations: usize,
    pub phases: [PhaseStats; 4],
    pub file_bytes: usize,
    pub arena_bytes: usize,
    pub budget_bytes: usize,
}

/// Nearest-rank percentile of sorted samples.
pub fn percentile(sorted: &[u64], q: f64) -> u64 {
    assert!(!sorted.is_empty());
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn stats(phase: Phase, samples: &mut [u64]) -> PhaseStats {
    samples.sort_unstable();
    PhaseStats {
        phase,
        samples: samples.len(),
        p50_ns: percentile(samples, 0.50),
        p95_ns: percentile(samples, 0.95),
        p99_ns: percentile(samples, 0.99),
        max_ns: *samples.last().unwrap(),
    }
}

/// Times `iterations` control steps over a pool of random flight states.
/// The first [`WARMUP_CALLS`] calls are run but not recorded.
pub fn bench(runtime: &mut InferenceRuntime, iterations: usize, budget_bytes: usize) -> Result<LatencyReport> {
    if iterations < MIN_ITERATIONS {
        return Err(Error::Parameter(format!(
            "bench needs at least {MIN_ITERATIONS} iterations, got {iterations}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xbe7c);
    let pool: Vec<(StateInputs, [f64; 3])> = (0..1024)
        .map(|_| {
            let mut q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            q.iter_mut().for_each(|v| *v /= n);
            let mut v3 = |r: f64| -> [f64; 3] { std::array::from_fn(|_| rng.gen_range(-r..r)) };
            (
                StateInputs {
                    position: v3(3.0),
                    velocity: v3(2.0),
                    attitude: q,
                    angular_velocity: v3(3.0),
                },
                v3(3.0),
            )
        })
        .collect();

    let mut samples: [Vec<u64>; 4] = std::array::from_fn(|_| Vec::with_capacity(iterations));
    for k in 0..WARMUP_CALLS + iterations {
        let (state, setpoint) = &pool[k % pool.len()];
        let t0 = Instant::now();
        let obs = preprocess(state, setpoint);
        let t1 = Instant::now();
        let action = obs.and_then(|o| runtime.infer(&o));
        let t2 = Instant::now();
        let commands = action.map(|a| postprocess(&a));
        let t3 = Instant::now();
        std::hint::black_box(commands).ok();
        if k >= WARMUP_CALLS {
            samples[0].push((t1 - t0).as_nanos() as u64);
            samples[1].push((t2 - t1).as_nanos() as u64);
            samples[2].push((t3 - t2).as_nanos() as u64);
            samples[3].push((t3 - t0).as_nanos() as u64);
        }
    }
    let mut it = samples.iter_mut();
    let phases = Phase::ALL.map(|p| stats(p, it.next().unwrap()));
    Ok(LatencyReport {
        iterations,
        phases,
        file_bytes: runtime.model().file_bytes(),
        arena_bytes: runtime.arena_bytes(),
        budget_bytes,
    })
}

impl LatencyReport {
    pub fn phase(&self, phase: Phase) -> &PhaseStats {
        &self.phases[Phase::ALL.iter().position(|p| *p == phase).unwrap()]
    }

    pub fn footprint_bytes(&self) -> usize {
        self.file_bytes + self.arena_bytes
    }

    /// Fraction of the 650 Hz tick left after the p99 control step.
    pub fn tick_margin(&self) -> f64 {
        1.0 - self.phase(Phase::Total).p99_ns as f64 / TICK_BUDGET_NS
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("phase,samples,p50_ns,p95_ns,p99_ns,max_ns\n");
        for p in &self.phases {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                p.phase.name(),
                p.samples,
                p.p50_ns,
                p.p95_ns,
                p.p99_ns,
                p.max_ns
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let us = |ns: u64| ns as f64 / 1000.0;
        let mut s = format!("control-step latency over {} iterations (µs)\n", self.iterations);
        let _ = writeln!(s, "{:<12} {:>10} {:>10} {:>10} {:>10}", "phase", "p50", "p95", "p99", "max");
        for p in &self.phases {
            let _ = writeln!(
                s,
                "{:<12} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
                p.phase.name(),
                us(p.p50_ns),
                us(p.p95_ns),
                us(p.p99_ns),
                us(p.max_ns)
            );
        }
        let _ = writeln!(
            s,
            "650 Hz tick budget: {:.2} µs, p99 total uses {:.3}% (margin {:.3}%)",
            TICK_BUDGET_NS / 1000.0,
            100.0 * (1.0 - self.tick_margin()),
            100.0 * self.tick_margin()
        );
        let _ = writeln!(
            s,
            "footprint: {} / {} bytes (model {} + arena {})",
            self.footprint_bytes(),
            self.budget_bytes,
            self.file_bytes,
            self.arena_bytes
        );
        let _ = writeln!(
            s,
            "Cortex-M7 @ 460 MHz reference, not reproduced: infer {REFERENCE_INFER_US} µs, full loop {REFERENCE_LOOP_US} µs"
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelpack::{export, DEFAULT_BUDGET_BYTES};
    use crate::training::PolicyNet;

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 0.5), 50);
        assert_eq!(percentile(&v, 0.99), 99);
        assert_eq!(percentile(&v, 1.0), 100);
        assert_eq!(percentile(&[7], 0.95), 7);
    }

    #[test]
    fn bench_counts_and_budget_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let blob = export(&PolicyNet::new(&mut rng, 0.5, 0.0));
        let mut rt = InferenceRuntime::init(&blob, DEFAULT_BUDGET_BYTES).unwrap();
        let a = bench(&mut rt, 1000, DEFAULT_BUDGET_BYTES).unwrap();
        let b = bench(&mut rt, 1000, DEFAULT_BUDGET_BYTES).unwrap();
        for r in [&a, &b] {
            assert!(r.phases.iter().all(|p| p.samples == 1000));
            assert!(r.phase(Phase::Total).p99_ns as f64 <= TICK_BUDGET_NS);
        }
        let (pa, pb) = (a.phase(Phase::Total).p50_ns as f64, b.phase(Phase::Total).p50_ns as f64);
        assert!((pa - pb).abs() <= 0.5 * pa.max(pb), "{pa} vs {pb}");
        let table = a.to_table();
        assert!(table.contains("reference, not reproduced"));
        assert!(table.contains("13516 / 50000"));
        assert_eq!(a.to_csv().lines().count(), 5);
        assert!(bench(&mut rt, 999, DEFAULT_BUDGET_BYTES).is_err());
    }
}
