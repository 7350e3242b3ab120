//! A WISP-like computational RFID tag.
//!
//! The tag stores harvested energy in a capacitor, browns out when it runs
//! dry, and carries a memory map split into an application region and an
//! immutable bootloader region. Wireless writes are staged in volatile
//! memory while the tag is in bios mode and only reach flash through an
//! all-or-nothing commit.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rf::TagId;

/// Value of an erased flash byte.
pub const ERASED: u8 = 0xFF;

/// 96-bit EPC identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Epc(pub [u8; 12]);

impl Epc {
    /// The EPC assigned to a bench tag.
    pub fn from_tag(tag: TagId) -> Self {
        let mut bytes = [0u8; 12];
        bytes[..4].copy_from_slice(&[0x0B, 0x0B, 0x51, 0x00]);
        bytes[11] = tag.0;
        Epc(bytes)
    }

    /// Inverse of [`Epc::from_tag`].
    pub fn bench_tag(&self) -> Option<TagId> {
        (*self == Epc::from_tag(TagId(self.0[11]))).then_some(TagId(self.0[11]))
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02X}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let s = s.trim();
        if s.len() != 24 || !s.is_ascii() {
            return None;
        }
        let mut out = [0u8; 12];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
        }
        Some(Epc(out))
    }
}

impl fmt::Display for Epc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Epc {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Epc {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Epc::from_hex(&s).ok_or_else(|| serde::de::Error::custom(format!("invalid EPC {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Application,
    Bios,
}

/// What the installed firmware does, as far as the testbed can observe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApplicationBehavior {
    pub obeys_goto_bios: bool,
    pub responds_to_inventory: bool,
}

impl Default for ApplicationBehavior {
    fn default() -> Self {
        Self {
            obeys_goto_bios: true,
            responds_to_inventory: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryLayout {
    /// Addressable bytes, starting at 0.
    pub span: u32,
    pub bootloader_start: u32,
    pub bootloader_end: u32,
}

impl Default for MemoryLayout {
    fn default() -> Self {
        Self {
            span: 0x1_0000,
            bootloader_start: 0xFC00,
            bootloader_end: 0x1_0000,
        }
    }
}

impl MemoryLayout {
    pub fn bootloader(&self) -> Range<u32> {
        self.bootloader_start..self.bootloader_end
    }

    /// Application ranges: the span minus the bootloader.
    pub fn application(&self) -> Vec<Range<u32>> {
        let mut out = Vec::new();
        if self.bootloader_start > 0 {
            out.push(0..self.bootloader_start);
        }
        if self.bootloader_end < self.span {
            out.push(self.bootloader_end..self.span);
        }
        out
    }

    pub fn in_application(&self, range: &Range<u32>) -> bool {
        range.end <= self.span && !overlaps(range, &self.bootloader())
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.span == 0 || self.span > 0x1_0000 {
            return Err(format!("memory span {:#x} not in (0, 0x10000]", self.span));
        }
        if self.bootloader_start >= self.bootloader_end || self.bootloader_end > self.span {
            return Err("bootloader region must be a non-empty range inside the span".into());
        }
        Ok(())
    }
}

pub fn overlaps(a: &Range<u32>, b: &Range<u32>) -> bool {
    a.start < b.end && b.start < a.end && !a.is_empty() && !b.is_empty()
}

/// Flash contents, erased bytes read as [`ERASED`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryMap {
    pub layout: MemoryLayout,
    bytes: Vec<u8>,
}

impl MemoryMap {
    pub fn new(layout: MemoryLayout) -> Self {
        let bytes = vec![ERASED; layout.span as usize];
        Self { layout, bytes }
    }

    pub fn read(&self, range: Range<u32>) -> Option<&[u8]> {
        (range.start <= range.end && range.end <= self.layout.span)
            .then(|| &self.bytes[range.start as usize..range.end as usize])
    }

    /// Factory programming, bypassing the wireless path.
    pub fn flash(&mut self, start: u32, data: &[u8]) {
        let start = start as usize;
        self.bytes[start..start + data.len()].copy_from_slice(data);
    }

    fn erase(&mut self, range: Range<u32>) {
        self.bytes[range.start as usize..range.end as usize].fill(ERASED);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyParams {
    pub capacity_uj: f64,
    pub harvest_efficiency: f64,
    /// Incident power below which the harvester does not run.
    pub operate_threshold_on_dbm: f64,
    pub draw_mw: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            capacity_uj: 50.0,
            harvest_efficiency: 0.3,
            operate_threshold_on_dbm: -15.0,
            draw_mw: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Nack {
    #[error("tag is not in bios mode")]
    WrongMode,
    #[error("write touches the bootloader region")]
    RegionViolation,
    #[error("write runs past the end of memory")]
    OutOfRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TagError {
    #[error("range {start:#x}..{end:#x} outside memory span {span:#x}")]
    OutOfRange { start: u32, end: u32, span: u32 },
    #[error("commit refused: tag is not in bios mode")]
    NotInBios,
    #[error("commit refused: checksum of {start:#x}..{end:#x} is {actual:#06x}, expected {expected:#06x}")]
    ChecksumMismatch {
        start: u32,
        end: u32,
        expected: u16,
        actual: u16,
    },
    #[error("commit refused: segment {start:#x}..{end:#x} is not in the application region")]
    RegionViolation { start: u32, end: u32 },
}

/// What the host sends to finalize a transfer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitManifest {
    pub segments: Vec<SegmentDigest>,
    pub behavior: ApplicationBehavior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentDigest {
    pub start: u32,
    pub end: u32,
    pub checksum: u16,
}

/// 16-bit ones-complement sum of `bytes`.
pub fn ones_complement_sum(bytes: &[u8]) -> u16 {
    let mut sum: u32 = bytes.iter().map(|&b| u32::from(b)).sum();
    while sum > 0xFFFF {
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    sum as u16
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagState {
    pub tag_id: TagId,
    pub epc: Epc,
    pub model: String,
    pub energy_uj: f64,
    pub energy: EnergyParams,
    pub mode: Mode,
    pub memory: MemoryMap,
    pub behavior: ApplicationBehavior,
    /// Bytes written over the air but not yet committed. Volatile.
    staged: BTreeMap<u32, u8>,
    interruptions: u64,
}

impl TagState {
    pub fn new(tag_id: TagId, energy: EnergyParams, layout: MemoryLayout, behavior: ApplicationBehavior) -> Self {
        Self {
            tag_id,
            epc: Epc::from_tag(tag_id),
            model: "WISP 5.1".into(),
            energy_uj: 0.0,
            energy,
            mode: Mode::Application,
            memory: MemoryMap::new(layout),
            behavior,
            staged: BTreeMap::new(),
            interruptions: 0,
        }
    }

    pub fn powered(&self) -> bool {
        self.energy_uj > 0.0
    }

    /// Whether the tag answers the reader at all right now.
    pub fn responsive(&self) -> bool {
        self.powered() && (self.mode == Mode::Bios || self.behavior.responds_to_inventory)
    }

    pub fn interruptions(&self) -> u64 {
        self.interruptions
    }

    pub fn staged_len(&self) -> usize {
        self.staged.len()
    }

    /// Charges from `incident_dbm` for `dt_ms`, or discharges when the
    /// harvester is below its turn-on level. Returns `true` on a brownout.
    pub fn harvest_step(&mut self, incident_dbm: f64, dt_ms: f64) -> bool {
        debug_assert!(dt_ms > 0.0);
        let was_powered = self.powered();
        let e = &self.energy;
        let delta = if incident_dbm >= e.operate_threshold_on_dbm {
            // mW × ms = µJ
            e.harvest_efficiency * 10f64.powf(incident_dbm / 10.0) * dt_ms
        } else {
            -e.draw_mw * dt_ms
        };
        self.energy_uj = (self.energy_uj + delta).clamp(0.0, e.capacity_uj);
        if was_powered && !self.powered() {
            self.power_interruption();
            return true;
        }
        false
    }

    /// Switched off and left to drain: no charge, installed firmware
    /// running, nothing staged.
    pub fn power_cycle(&mut self) {
        self.energy_uj = 0.0;
        self.mode = Mode::Application;
        self.staged.clear();
    }

    fn power_interruption(&mut self) {
        self.interruptions += 1;
        self.mode = Mode::Application;
        self.staged.clear();
    }

    /// Returns `true` when the tag acknowledges.
    pub fn on_goto_bios(&mut self) -> bool {
        if !self.responsive() {
            return false;
        }
        match self.mode {
            Mode::Bios => true,
            Mode::Application if self.behavior.obeys_goto_bios => {
                self.mode = Mode::Bios;
                self.staged.clear();
                true
            }
            Mode::Application => false,
        }
    }

    /// Stages little-endian words at `start`. All or nothing.
    pub fn on_write_words(&mut self, start: u32, words: &[u16]) -> Result<(), Nack> {
        if self.mode != Mode::Bios {
            return Err(Nack::WrongMode);
        }
        let end = u64::from(start) + 2 * words.len() as u64;
        if end > u64::from(self.memory.layout.span) {
            return Err(Nack::OutOfRange);
        }
        let range = start..end as u32;
        if overlaps(&range, &self.memory.layout.bootloader()) {
            return Err(Nack::RegionViolation);
        }
        for (i, w) in words.iter().enumerate() {
            let [lo, hi] = w.to_le_bytes();
            let addr = start + 2 * i as u32;
            self.staged.insert(addr, lo);
            self.staged.insert(addr + 1, hi);
        }
        Ok(())
    }

    /// Memory as the bootloader sees it: flash with staged bytes on top.
    pub fn effective_byte(&self, addr: u32) -> u8 {
        match self.staged.get(&addr) {
            Some(&b) => b,
            None => self.memory.bytes[addr as usize],
        }
    }

    pub fn compute_checksum(&self, range: Range<u32>) -> Result<u16, TagError> {
        let span = self.memory.layout.span;
        if range.start > range.end || range.end > span {
            return Err(TagError::OutOfRange {
                start: range.start,
                end: range.end,
                span,
            });
        }
        let bytes: Vec<u8> = range.map(|a| self.effective_byte(a)).collect();
        Ok(ones_complement_sum(&bytes))
    }

    /// Verifies the staged image against the manifest and, if it matches,
    /// replaces the application region with it and boots the new firmware.
    pub fn commit_firmware(&mut self, manifest: &CommitManifest) -> Result<(), TagError> {
        if self.mode != Mode::Bios {
            return Err(TagError::NotInBios);
        }
        for seg in &manifest.segments {
            if !self.memory.layout.in_application(&(seg.start..seg.end)) {
                return Err(TagError::RegionViolation {
                    start: seg.start,
                    end: seg.end,
                });
            }
            let actual = self.compute_checksum(seg.start..seg.end)?;
            if actual != seg.checksum {
                return Err(TagError::ChecksumMismatch {
                    start: seg.start,
                    end: seg.end,
                    expected: seg.checksum,
                    actual,
                });
            }
        }
        for range in self.memory.layout.application() {
            self.memory.erase(range);
        }
        for (&addr, &b) in &self.staged {
            self.memory.bytes[addr as usize] = b;
        }
        self.staged.clear();
        self.behavior = manifest.behavior;
        self.mode = Mode::Application;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tag() -> TagState {
        let mut t = TagState::new(TagId(0), EnergyParams::default(), MemoryLayout::default(), ApplicationBehavior::default());
        t.energy_uj = t.energy.capacity_uj;
        t
    }

    fn bios_tag() -> TagState {
        let mut t = tag();
        assert!(t.on_goto_bios());
        t
    }

    /// Byte-at-a-time end-around-carry addition.
    fn naive_checksum(bytes: &[u8]) -> u16 {
        let mut acc: u16 = 0;
        for &b in bytes {
            let (s, carry) = acc.overflowing_add(u16::from(b));
            acc = s + u16::from(carry);
        }
        acc
    }

    #[test]
    fn epc_hex_round_trip() {
        let e = Epc::from_tag(TagId(5));
        assert_eq!(e.to_hex(), "0B0B51000000000000000005");
        assert_eq!(Epc::from_hex(&e.to_hex()), Some(e));
        assert_eq!(Epc::from_hex("zz"), None);
    }

    #[test]
    fn no_source_no_power() {
        let mut t = TagState::new(TagId(0), EnergyParams::default(), MemoryLayout::default(), ApplicationBehavior::default());
        for _ in 0..100 {
            t.harvest_step(-90.0, 10.0);
        }
        assert_eq!(t.energy_uj, 0.0);
        assert!(!t.responsive());
        assert_eq!(t.interruptions(), 0);
    }

    #[test]
    fn strong_source_saturates() {
        let mut t = TagState::new(TagId(0), EnergyParams::default(), MemoryLayout::default(), ApplicationBehavior::default());
        t.harvest_step(15.0, 10_000.0);
        assert_eq!(t.energy_uj, t.energy.capacity_uj);
    }

    #[test]
    fn charge_time_halves_when_power_doubles() {
        // dE/dt = η·P; time to reach capacity from empty is C / (η·P).
        let time_to_full = |dbm: f64| {
            let mut t = TagState::new(TagId(0), EnergyParams::default(), MemoryLayout::default(), ApplicationBehavior::default());
            let dt = 0.001;
            let mut elapsed = 0.0;
            while t.energy_uj < t.energy.capacity_uj {
                t.harvest_step(dbm, dt);
                elapsed += dt;
            }
            elapsed
        };
        let base = time_to_full(0.0);
        let doubled = time_to_full(10.0 * 2f64.log10());
        assert!((base / doubled - 2.0).abs() < 1e-3, "{base} {doubled}");
        // Closed form at 0 dBm: 50 µJ / (0.3 × 1 mW) ms.
        assert!((base - 50.0 / 0.3).abs() < 0.01);
    }

    #[test]
    fn brownout_resets_mode_and_staging() {
        let mut t = bios_tag();
        t.on_write_words(0x4400, &[0xBEEF]).unwrap();
        assert_eq!(t.staged_len(), 2);
        assert!(t.harvest_step(-90.0, 1e6));
        assert_eq!(t.mode, Mode::Application);
        assert_eq!(t.staged_len(), 0);
        assert_eq!(t.interruptions(), 1);
        assert_eq!(t.memory.read(0x4400..0x4402).unwrap(), &[ERASED, ERASED]);
    }

    #[test]
    fn goto_bios_respects_behavior() {
        let mut t = tag();
        assert!(t.on_goto_bios());
        assert_eq!(t.mode, Mode::Bios);
        assert!(t.on_goto_bios(), "already in bios still acknowledges");
        assert_eq!(t.mode, Mode::Bios);

        let mut stubborn = tag();
        stubborn.behavior.obeys_goto_bios = false;
        assert!(!stubborn.on_goto_bios());
        assert_eq!(stubborn.mode, Mode::Application);

        let mut dead = tag();
        dead.energy_uj = 0.0;
        assert!(!dead.on_goto_bios());
    }

    #[test]
    fn write_round_trip_through_commit() {
        let mut t = bios_tag();
        t.on_write_words(0x4400, &[0x0201, 0x0403]).unwrap();
        let sum = t.compute_checksum(0x4400..0x4404).unwrap();
        t.commit_firmware(&CommitManifest {
            segments: vec![SegmentDigest { start: 0x4400, end: 0x4404, checksum: sum }],
            behavior: ApplicationBehavior::default(),
        })
        .unwrap();
        assert_eq!(t.memory.read(0x4400..0x4404).unwrap(), &[1, 2, 3, 4]);
        assert_eq!(t.mode, Mode::Application);
    }

    #[test]
    fn write_into_bootloader_is_rejected_whole() {
        let mut t = bios_tag();
        assert_eq!(t.on_write_words(0xFBFE, &[1, 2]), Err(Nack::RegionViolation));
        assert_eq!(t.on_write_words(0xFC00, &[1]), Err(Nack::RegionViolation));
        assert_eq!(t.staged_len(), 0);
        assert_eq!(t.on_write_words(0xFBFC, &[1, 2]), Ok(()));
    }

    #[test]
    fn write_in_application_mode_is_rejected() {
        let mut t = tag();
        assert_eq!(t.on_write_words(0x4400, &[1]), Err(Nack::WrongMode));
    }

    #[test]
    fn checksum_edges() {
        let t = tag();
        assert_eq!(t.compute_checksum(0x100..0x100).unwrap(), 0);
        let mut z = bios_tag();
        z.on_write_words(0x2000, &[0; 8]).unwrap();
        assert_eq!(z.compute_checksum(0x2000..0x2010).unwrap(), 0);
        assert!(matches!(t.compute_checksum(0xFFF0..0x1_0001), Err(TagError::OutOfRange { .. })));
    }

    #[test]
    fn corrupted_stage_refuses_commit() {
        let mut t = bios_tag();
        t.on_write_words(0x4400, &[0x1111, 0x2222]).unwrap();
        let good = t.compute_checksum(0x4400..0x4404).unwrap();
        t.on_write_words(0x4402, &[0x2223]).unwrap();
        let err = t
            .commit_firmware(&CommitManifest {
                segments: vec![SegmentDigest { start: 0x4400, end: 0x4404, checksum: good }],
                behavior: ApplicationBehavior::default(),
            })
            .unwrap_err();
        assert!(matches!(err, TagError::ChecksumMismatch { .. }));
        assert_eq!(t.mode, Mode::Bios);
    }

    #[test]
    fn commit_outside_bios_is_refused() {
        let mut t = tag();
        let m = CommitManifest { segments: vec![], behavior: ApplicationBehavior::default() };
        assert_eq!(t.commit_firmware(&m), Err(TagError::NotInBios));
    }

    #[test]
    fn commit_installs_new_behavior() {
        let mut t = bios_tag();
        t.commit_firmware(&CommitManifest {
            segments: vec![],
            behavior: ApplicationBehavior { obeys_goto_bios: false, responds_to_inventory: true },
        })
        .unwrap();
        assert!(!t.on_goto_bios());
    }

    #[derive(Debug, Clone)]
    enum Event {
        Harvest(f64, f64),
        GotoBios,
        Write(u32, Vec<u16>),
        Commit,
    }

    fn event() -> impl Strategy<Value = Event> {
        prop_oneof![
            (-95.0f64..20.0, 0.1f64..5_000.0).prop_map(|(p, dt)| Event::Harvest(p, dt)),
            Just(Event::GotoBios),
            (0xF000u32..0x1_0000, proptest::collection::vec(any::<u16>(), 1..8))
                .prop_map(|(a, w)| Event::Write(a & !1, w)),
            Just(Event::Commit),
        ]
    }

    proptest! {
        #[test]
        fn checksum_matches_naive(bytes in proptest::collection::vec(any::<u8>(), 64)) {
            prop_assert_eq!(ones_complement_sum(&bytes), naive_checksum(&bytes));
        }

        #[test]
        fn checksum_matches_naive_any_length(bytes in proptest::collection::vec(any::<u8>(), 0..600)) {
            prop_assert_eq!(ones_complement_sum(&bytes), naive_checksum(&bytes));
        }

        #[test]
        fn bootloader_and_energy_invariants(events in proptest::collection::vec(event(), 1..60)) {
            let mut t = tag();
            t.memory.flash(0xFC00, &[0xA5; 0x400]);
            let boot_before = t.memory.read(0xFC00..0x1_0000).unwrap().to_vec();
            for e in events {
                match e {
                    Event::Harvest(p, dt) => { t.harvest_step(p, dt); }
                    Event::GotoBios => { t.on_goto_bios(); }
                    Event::Write(a, w) => { let _ = t.on_write_words(a, &w); }
                    Event::Commit => {
                        let _ = t.commit_firmware(&CommitManifest { segments: vec![], behavior: ApplicationBehavior::default() });
                    }
                }
                prop_assert!(t.energy_uj >= 0.0 && t.energy_uj <= t.energy.capacity_uj);
                if !t.powered() {
                    prop_assert_eq!(t.staged_len(), 0);
                }
            }
            prop_assert_eq!(t.memory.read(0xFC00..0x1_0000).unwrap(), &boot_before[..]);
        }
    }
}
