//! Reduced Gen2 medium access: framed slotted ALOHA with the Q-algorithm,
//! and retried access commands.
//!
//! There are no session flags or select masks. Every energized tag takes
//! part in every round and picks one slot uniformly from `[0, 2^Q - 1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rf::TagId;
use crate::tag::Epc;

pub type SimRng = rand_chacha::ChaCha8Rng;

pub const Q_MAX: u8 = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InventoryConfig {
    pub q_initial: u8,
    pub q_fp_step: f64,
    pub slot_duration_ms: u64,
    pub rng_seed: u64,
}

impl Default for InventoryConfig {
    fn default() -> Self {
        Self {
            q_initial: 4,
            q_fp_step: 0.5,
            slot_duration_ms: 5,
            rng_seed: 0,
        }
    }
}

impl InventoryConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.q_initial > Q_MAX {
            return Err(format!("q_initial {} exceeds {Q_MAX}", self.q_initial));
        }
        if !(self.q_fp_step > 0.0 && self.q_fp_step <= 1.0) {
            return Err(format!("q_fp_step {} outside (0, 1]", self.q_fp_step));
        }
        if self.slot_duration_ms == 0 {
            return Err("slot_duration_ms must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeKind {
    Empty,
    Singulated,
    Collision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SlotKind {
    Empty,
    Singulated { tag: TagId, rssi_dbm: f64 },
    Collision { tags: Vec<TagId> },
}

impl SlotKind {
    pub fn outcome(&self) -> OutcomeKind {
        match self {
            SlotKind::Empty => OutcomeKind::Empty,
            SlotKind::Singulated { .. } => OutcomeKind::Singulated,
            SlotKind::Collision { .. } => OutcomeKind::Collision,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotOutcome {
    pub kind: SlotKind,
    pub slot_index: u32,
    pub timestamp_ms: u64,
}

/// A tag that is energized and listening during a round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contender {
    pub tag: TagId,
    pub delivery_probability: f64,
    pub rssi_dbm: f64,
}

/// The reader's floating-point Q.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QState {
    pub q_fp: f64,
}

impl QState {
    pub fn new(q: u8) -> Self {
        Self {
            q_fp: f64::from(q.min(Q_MAX)),
        }
    }

    pub fn q(&self) -> u8 {
        self.q_fp.round() as u8
    }

    pub fn frame_size(&self) -> u32 {
        1u32 << self.q()
    }
}

pub fn adjust_q(q_fp: f64, outcome: OutcomeKind, step: f64) -> f64 {
    let next = match outcome {
        OutcomeKind::Collision => q_fp + step,
        OutcomeKind::Empty => q_fp - step,
        OutcomeKind::Singulated => q_fp,
    };
    next.clamp(0.0, f64::from(Q_MAX))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub outcomes: Vec<SlotOutcome>,
    pub duration_ms: u64,
}

impl RoundResult {
    pub fn singulated(&self) -> impl Iterator<Item = (TagId, f64, u64)> + '_ {
        self.outcomes.iter().filter_map(|o| match o.kind {
            SlotKind::Singulated { tag, rssi_dbm } => Some((tag, rssi_dbm, o.timestamp_ms)),
            _ => None,
        })
    }
}

/// Runs one inventory frame of `2^Q` slots starting at `start_ms`.
///
/// Q is fixed for the frame; `q` is adjusted after every slot so the next
/// frame uses the updated value.
pub fn run_inventory_round<R: Rng + ?Sized>(
    contenders: &[Contender],
    q: &mut QState,
    step: f64,
    slot_duration_ms: u64,
    start_ms: u64,
    rng: &mut R,
) -> RoundResult {
    let frame = q.frame_size();
    let picks: Vec<u32> = contenders.iter().map(|_| rng.random_range(0..frame)).collect();
    let mut outcomes = Vec::with_capacity(frame as usize);
    let mut replying = Vec::new();
    for slot in 0..frame {
        replying.clear();
        for (c, &pick) in contenders.iter().zip(&picks) {
            if pick == slot && rng.random_bool(c.delivery_probability.clamp(0.0, 1.0)) {
                replying.push(*c);
            }
        }
        let kind = match replying.as_slice() {
            [] => SlotKind::Empty,
            [only] => SlotKind::Singulated {
                tag: only.tag,
                rssi_dbm: only.rssi_dbm,
            },
            many => SlotKind::Collision {
                tags: many.iter().map(|c| c.tag).collect(),
            },
        };
        q.q_fp = adjust_q(q.q_fp, kind.outcome(), step);
        outcomes.push(SlotOutcome {
            kind,
            slot_index: slot,
            timestamp_ms: start_ms + u64::from(slot) * slot_duration_ms,
        });
    }
    RoundResult {
        outcomes,
        duration_ms: u64::from(frame) * slot_duration_ms,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccessOpKind {
    Read,
    BlockWrite,
    GotoBios,
    Checksum,
    Commit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessResult {
    pub op: AccessOpKind,
    pub target: Epc,
    pub success: bool,
    pub attempts: u32,
}

/// Retries a command until both the command and its acknowledgment get
/// through, each with probability `p`. Returns `(success, attempts)`.
pub fn attempt_exchange<R: Rng + ?Sized>(p: f64, max_retries: u32, rng: &mut R) -> (bool, u32) {
    let per_attempt = (p * p).clamp(0.0, 1.0);
    for attempt in 1..=max_retries.saturating_add(1) {
        if rng.random_bool(per_attempt) {
            return (true, attempt);
        }
    }
    (false, max_retries.saturating_add(1))
}

/// Block-write of `words` to `target`. `on_delivered` runs exactly once,
/// on the attempt that gets through.
pub fn access_write<R, F>(
    target: Epc,
    words: &[u16],
    delivery_probability: f64,
    max_retries: u32,
    rng: &mut R,
    on_delivered: F,
) -> AccessResult
where
    R: Rng + ?Sized,
    F: FnOnce(&[u16]),
{
    debug_assert!(!words.is_empty());
    let (success, attempts) = attempt_exchange(delivery_probability, max_retries, rng);
    if success {
        on_delivered(words);
    }
    AccessResult {
        op: AccessOpKind::BlockWrite,
        target,
        success,
        attempts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> SimRng {
        SimRng::seed_from_u64(seed)
    }

    fn sure(n: u8) -> Vec<Contender> {
        (0..n)
            .map(|i| Contender {
                tag: TagId(i),
                delivery_probability: 1.0,
                rssi_dbm: -40.0,
            })
            .collect()
    }

    #[test]
    fn single_tag_single_slot() {
        let mut q = QState::new(0);
        let r = run_inventory_round(&sure(1), &mut q, 0.5, 5, 0, &mut rng(1));
        assert_eq!(r.outcomes.len(), 1);
        assert!(matches!(r.outcomes[0].kind, SlotKind::Singulated { tag: TagId(0), .. }));
        assert_eq!(r.duration_ms, 5);
    }

    #[test]
    fn two_tags_two_slots_collide_half_the_time() {
        // Enumeration: 4 equiprobable assignments, 2 of which share a slot.
        let exact = 2.0 / 4.0;
        let mut r = rng(7);
        let n = 20_000;
        let collided = (0..n)
            .filter(|_| {
                let mut q = QState::new(1);
                let res = run_inventory_round(&sure(2), &mut q, 0.5, 5, 0, &mut r);
                res.outcomes.iter().any(|o| o.kind.outcome() == OutcomeKind::Collision)
            })
            .count();
        let freq = collided as f64 / f64::from(n);
        assert!((freq - exact).abs() < 0.02, "{freq}");
    }

    #[test]
    fn empty_population_drains_q() {
        let mut q = QState::new(3);
        let r = run_inventory_round(&[], &mut q, 0.5, 5, 100, &mut rng(3));
        assert_eq!(r.outcomes.len(), 8);
        assert!(r.outcomes.iter().all(|o| o.kind == SlotKind::Empty));
        assert_eq!(q.q_fp, 0.0);
        assert_eq!(r.outcomes[7].timestamp_ms, 135);
    }

    #[test]
    fn adjust_q_definition() {
        assert_eq!(adjust_q(4.0, OutcomeKind::Collision, 0.5), 4.5);
        assert_eq!(adjust_q(0.0, OutcomeKind::Empty, 0.5), 0.0);
        assert_eq!(adjust_q(15.0, OutcomeKind::Collision, 0.5), 15.0);
        assert_eq!(adjust_q(7.25, OutcomeKind::Singulated, 0.5), 7.25);
        let there = adjust_q(6.0, OutcomeKind::Collision, 0.3);
        assert_eq!(adjust_q(there, OutcomeKind::Empty, 0.3), 6.0);
    }

    #[test]
    fn q_rounds_to_nearest() {
        assert_eq!(QState { q_fp: 4.4 }.q(), 4);
        assert_eq!(QState { q_fp: 4.5 }.q(), 5);
        assert_eq!(QState::new(20).q(), 15);
    }

    #[test]
    fn rounds_are_reproducible() {
        let pop = vec![
            Contender { tag: TagId(0), delivery_probability: 0.7, rssi_dbm: -30.0 },
            Contender { tag: TagId(1), delivery_probability: 0.3, rssi_dbm: -50.0 },
            Contender { tag: TagId(2), delivery_probability: 0.9, rssi_dbm: -35.0 },
        ];
        let run = |seed| {
            let mut q = QState::new(2);
            let mut r = rng(seed);
            (0..50)
                .map(|_| run_inventory_round(&pop, &mut q, 0.5, 5, 0, &mut r).outcomes)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn each_tag_singulated_at_most_once_per_round() {
        let mut r = rng(5);
        let mut q = QState::new(2);
        for _ in 0..2000 {
            let res = run_inventory_round(&sure(5), &mut q, 0.5, 5, 0, &mut r);
            let mut seen = std::collections::HashSet::new();
            for (tag, _, _) in res.singulated() {
                assert!(seen.insert(tag));
            }
            assert!(q.q() <= Q_MAX);
        }
    }

    /// Exact expected number of singulated slots per round with certain
    /// replies, by enumerating every slot assignment.
    fn enumerate_singulations(n: u32, q: u32) -> f64 {
        let frame = 1u32 << q;
        let total = frame.pow(n);
        let mut sum = 0u64;
        for code in 0..total {
            let mut counts = vec![0u32; frame as usize];
            let mut c = code;
            for _ in 0..n {
                counts[(c % frame) as usize] += 1;
                c /= frame;
            }
            sum += counts.iter().filter(|&&k| k == 1).count() as u64;
        }
        sum as f64 / f64::from(total)
    }

    #[test]
    fn singulation_fraction_matches_enumeration() {
        for n in 1u8..=5 {
            let q = (f64::from(n).log2().ceil() as u32) + 1;
            let exact = enumerate_singulations(u32::from(n), q) / f64::from(n);
            let mut r = rng(1000 + u64::from(n));
            let runs = 10_000;
            let mut singled = 0usize;
            for _ in 0..runs {
                let mut qs = QState::new(q as u8);
                singled += run_inventory_round(&sure(n), &mut qs, 0.5, 5, 0, &mut r).singulated().count();
            }
            let freq = singled as f64 / (f64::from(runs) * f64::from(n));
            assert!((freq - exact).abs() < 0.02, "n={n} q={q} freq={freq} exact={exact}");
        }
    }

    #[test]
    fn access_write_certain_delivery() {
        let mut calls = 0;
        let res = access_write(Epc::from_tag(TagId(1)), &[1, 2], 1.0, 3, &mut rng(0), |_| calls += 1);
        assert!(res.success);
        assert_eq!(res.attempts, 1);
        assert_eq!(calls, 1);
    }

    #[test]
    fn access_write_certain_loss() {
        let mut calls = 0;
        let res = access_write(Epc::from_tag(TagId(1)), &[1], 0.0, 3, &mut rng(0), |_| calls += 1);
        assert!(!res.success);
        assert_eq!(res.attempts, 4);
        assert_eq!(calls, 0);
    }

    #[test]
    fn access_write_mean_attempts_is_geometric() {
        // Per-attempt success 0.25 with an effectively unbounded budget: E = 4.
        let mut r = rng(99);
        let n = 20_000;
        let total: u64 = (0..n)
            .map(|_| u64::from(access_write(Epc::from_tag(TagId(0)), &[0], 0.5, 10_000, &mut r, |_| {}).attempts))
            .sum();
        let mean = total as f64 / f64::from(n);
        assert!((mean - 4.0).abs() < 0.1, "{mean}");
    }
}
