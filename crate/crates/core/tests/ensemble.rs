use tpcbed::config::TestbedConfig;
use tpcbed::ensemble::{seeds, sweep, sweep_sequential};
use tpcbed::reader::{ROSpec, ReportTrigger, TagReport};
use tpcbed::rf::{AntennaId, TagId, SINGLE_TAG};
use tpcbed::wisent::{reprogram, FirmwareImage, ReprogramPolicy, TransferStats};

fn inventory(seed: u64) -> Vec<TagReport> {
    let mut r = TestbedConfig::default().build_reader(seed).unwrap();
    let spec = ROSpec {
        id: 1,
        antenna_ids: vec![AntennaId(2), AntennaId(3)],
        duration_ms: 3_000,
        report_trigger: ReportTrigger::Periodic { interval_ms: 1_000 },
    };
    r.execute_rospec(&spec, &mut |_| {})
        .unwrap()
        .into_iter()
        .flat_map(|b| b.reports)
        .collect()
}

fn transfers(seed: u64) -> Vec<TransferStats> {
    let mut r = TestbedConfig::default().build_reader(seed).unwrap();
    let image = FirmwareImage::synthetic(0x4400, 512, Default::default());
    let policy = ReprogramPolicy::default();
    [(SINGLE_TAG, AntennaId(1)), (TagId(2), AntennaId(2))]
        .into_iter()
        .map(|(t, a)| reprogram(&mut r, t, &image, vec![a], &policy, &mut |_| {}))
        .collect()
}

#[test]
fn feature_sweep_matches_sequential() {
    let s = seeds(40, 12);
    assert_eq!(sweep(&s, inventory), sweep_sequential(&s, inventory));
    assert_eq!(sweep(&s, transfers), sweep_sequential(&s, transfers));
}

#[test]
fn seeds_give_different_runs() {
    let runs = sweep(&seeds(0, 4), inventory);
    assert!(runs.windows(2).all(|w| w[0] != w[1]));
}

#[cfg(feature = "parallel")]
#[test]
fn parallel_sweep_keeps_seed_order() {
    let s: Vec<u64> = (0..64).rev().collect();
    assert_eq!(tpcbed::ensemble::sweep_parallel(&s, |x| x * 3), s.iter().map(|x| x * 3).collect::<Vec<_>>());
}
