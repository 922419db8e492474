//! Wall-clock microbenchmark of the tree matching on random trees.

use std::hint::black_box;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::metrics::quantile;
use crate::tmwm::{t_mwm, WeightedTree};

/// Random recursive tree on `nodes` nodes: node `i` hangs off a uniform
/// earlier node, weights uniform in `[0, max_weight)`.
pub fn random_tree<R: Rng>(nodes: usize, max_weight: f64, rng: &mut R) -> WeightedTree {
    let edges: Vec<(usize, usize)> = (1..nodes).map(|i| (rng.random_range(0..i), i)).collect();
    let weights = (1..nodes).map(|_| rng.random::<f64>() * max_weight).collect();
    WeightedTree::new(nodes.max(1), edges, weights).expect("recursive trees are parent-ordered")
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub nodes: usize,
    pub reps: usize,
    pub median_us: f64,
    pub q1_us: f64,
    pub q3_us: f64,
    pub min_us: f64,
    pub max_us: f64,
}

/// Times `reps` matchings per size, each on a fresh random tree.
pub fn bench_tmwm(sizes: &[usize], reps: usize, seed: u64) -> Vec<BenchRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sizes
        .iter()
        .map(|&nodes| {
            let mut us = Vec::with_capacity(reps);
            for _ in 0..reps {
                let tree = random_tree(nodes, 100.0, &mut rng);
                let start = Instant::now();
                black_box(t_mwm(black_box(&tree)));
                us.push(start.elapsed().as_secs_f64() * 1e6);
            }
            let q = |p| quantile(&us, p).unwrap_or(f64::NAN);
            BenchRow { nodes, reps, median_us: q(0.5), q1_us: q(0.25), q3_us: q(0.75), min_us: q(0.0), max_us: q(1.0) }
        })
        .collect()
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["nodes", "reps", "median_us", "q1_us", "q3_us", "min_us", "max_us"])?;
    for r in rows {
        w.write_record([
            r.nodes.to_string(),
            r.reps.to_string(),
            format!("{:.3}", r.median_us),
            format!("{:.3}", r.q1_us),
            format!("{:.3}", r.q3_us),
            format!("{:.3}", r.min_us),
            format!("{:.3}", r.max_us),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares line `y = slope * x + intercept` and its R².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LinearFit { slope, intercept, r_squared })
}
