//! Fan-out of independent runs. Each job owns its inputs, so the parallel and
//! sequential executors produce identical results in identical order.

use crate::config::SweepConfig;
use crate::policies::Policy;

/// Seed of run `index` under `master`. Depends only on the run index, so every
/// policy and grid cell sees the same channel realisations.
pub fn run_seed(master: u64, index: usize) -> u64 {
    let mut z = master.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One run of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Job {
    pub policy: Policy,
    pub s_udp: u32,
    pub t_alloc: u64,
    pub run: usize,
    pub seed: u64,
}

/// Jobs in deterministic order: policy, size, period, run.
pub fn jobs(sweep: &SweepConfig) -> Vec<Job> {
    let mut out = Vec::with_capacity(sweep.policies.len() * sweep.s_udp.len() * sweep.t_alloc.len() * sweep.runs);
    for &policy in &sweep.policies {
        for &s_udp in &sweep.s_udp {
            for &t_alloc in &sweep.t_alloc {
                for run in 0..sweep.runs {
                    out.push(Job { policy, s_udp, t_alloc, run, seed: run_seed(sweep.master_seed, run) });
                }
            }
        }
    }
    out
}

pub fn run_sequential<J, T, F>(jobs: &[J], f: F) -> Vec<T>
where
    F: Fn(&J) -> T,
{
    jobs.iter().map(f).collect()
}

/// Runs `f` over `jobs` on a pool of `threads` workers (0 = one per core).
#[cfg(feature = "parallel")]
pub fn run_parallel<J, T, F>(jobs: &[J], threads: usize, f: F) -> Vec<T>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
    pool.install(|| jobs.par_iter().map(&f).collect())
}

/// Parallel when the `parallel` feature is on, sequential otherwise.
pub fn run_all<J, T, F>(jobs: &[J], threads: usize, f: F) -> Vec<T>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if threads != 1 {
            return run_parallel(jobs, threads, f);
        }
    }
    let _ = threads;
    run_sequential(jobs, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_distinct_and_stable() {
        let s: Vec<u64> = (0..1000).map(|i| run_seed(7, i)).collect();
        let mut d = s.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 1000);
        assert_eq!(run_seed(7, 3), s[3]);
        assert_ne!(run_seed(8, 3), s[3]);
    }

    #[test]
    fn seed_ignores_policy() {
        let sweep = SweepConfig { policies: vec![Policy::Distr, Policy::Mrba], s_udp: vec![50], t_alloc: vec![1, 2], runs: 3, master_seed: 11 };
        let j = jobs(&sweep);
        assert_eq!(j.len(), 12);
        for a in &j {
            for b in &j {
                if a.run == b.run {
                    assert_eq!(a.seed, b.seed);
                }
            }
        }
        assert_eq!((j[0].policy, j[0].t_alloc, j[0].run), (Policy::Distr, 1, 0));
        assert_eq!((j[11].policy, j[11].t_alloc, j[11].run), (Policy::Mrba, 2, 2));
    }

    #[test]
    fn executors_agree() {
        let input: Vec<u64> = (0..200).collect();
        let f = |x: &u64| run_seed(*x, 5);
        let seq = run_sequential(&input, f);
        assert_eq!(run_all(&input, 4, f), seq);
        assert_eq!(run_all(&input, 1, f), seq);
    }
}
