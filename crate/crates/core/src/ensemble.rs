//! Seed ensembles. Each seed runs an independent, fully deterministic
//! simulation, so the results are the same whether the seeds run one after
//! another or spread across threads. With the `parallel` feature `sweep`
//! uses rayon; without it, `sweep` is the sequential loop.

/// Runs `f` for every seed, in order.
pub fn sweep_sequential<T, F>(seeds: &[u64], f: F) -> Vec<T>
where
    F: Fn(u64) -> T,
{
    seeds.iter().map(|&s| f(s)).collect()
}

/// Runs `f` for every seed on the rayon pool. Output order matches `seeds`.
#[cfg(feature = "parallel")]
pub fn sweep_parallel<T, F>(seeds: &[u64], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    use rayon::prelude::*;
    seeds.par_iter().map(|&s| f(s)).collect()
}

#[cfg(feature = "parallel")]
pub fn sweep<T, F>(seeds: &[u64], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    sweep_parallel(seeds, f)
}

#[cfg(not(feature = "parallel"))]
pub fn sweep<T, F>(seeds: &[u64], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    sweep_sequential(seeds, f)
}

/// `n` consecutive seeds starting at `first`.
pub fn seeds(first: u64, n: usize) -> Vec<u64> {
    (first..).take(n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TestbedConfig;
    use crate::reader::{ROSpec, ReportTrigger};
    use crate::rf::AntennaId;

    fn reads(seed: u64) -> Vec<u32> {
        let mut r = TestbedConfig::default().build_reader(seed).unwrap();
        let spec = ROSpec {
            id: 1,
            antenna_ids: vec![AntennaId(2)],
            duration_ms: 2_000,
            report_trigger: ReportTrigger::EndOfSpec,
        };
        let batches = r.execute_rospec(&spec, &mut |_| {}).unwrap();
        batches.iter().flat_map(|b| b.reports.iter().map(|t| t.read_count)).collect()
    }

    #[test]
    fn sweep_matches_sequential() {
        let s = seeds(100, 16);
        assert_eq!(sweep(&s, reads), sweep_sequential(&s, reads));
    }
}
