//! Host side of wireless reprogramming: firmware images, region checks,
//! antenna choice and the goto-bios / write / verify / commit transfer.

pub mod titxt;

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::port::{PortError, ReaderPort};
use crate::reader::{AccessOp, AccessOpResult, AccessOpSpec, AccessReply, AccessSpec, Reader, ReaderEvent};
use crate::rf::{link_quality, AntennaId, LinkBudgetParams, TagId, TestbedGeometry};
use crate::tag::{
    ones_complement_sum, overlaps, ApplicationBehavior, CommitManifest, Epc, MemoryLayout, Nack, SegmentDigest,
};
use titxt::{parse_segments, serialize_segments, ParseError, Segment};

/// Fill byte used to pad segments out to whole words.
pub const PAD_BYTE: u8 = 0xFF;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error("{path}: {source}")]
    Sidecar {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
}

/// A parsed image. Segments are sorted, disjoint and word aligned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FirmwareImage {
    pub segments: Vec<Segment>,
    pub behavior: ApplicationBehavior,
}

impl FirmwareImage {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        Ok(Self::from_segments(parse_segments(text)?, ApplicationBehavior::default()))
    }

    /// Pads `segments` to word boundaries with [`PAD_BYTE`] and merges any
    /// that touch afterwards.
    pub fn from_segments(segments: Vec<Segment>, behavior: ApplicationBehavior) -> Self {
        let mut out: Vec<Segment> = Vec::with_capacity(segments.len());
        for mut seg in segments {
            if seg.bytes.is_empty() {
                continue;
            }
            if seg.start % 2 == 1 {
                seg.start -= 1;
                seg.bytes.insert(0, PAD_BYTE);
            }
            if seg.bytes.len() % 2 == 1 {
                seg.bytes.push(PAD_BYTE);
            }
            match out.last_mut() {
                Some(prev) if prev.end() == seg.start => prev.bytes.extend_from_slice(&seg.bytes),
                _ => out.push(seg),
            }
        }
        Self { segments: out, behavior }
    }

    /// Reads a TI-TXT file and, when present, its behavior sidecar.
    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let text = std::fs::read_to_string(path).map_err(|source| ImageError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut image = Self::parse(&text).map_err(|source| ImageError::Parse {
            path: path.to_owned(),
            source,
        })?;
        let sidecar = sidecar_path(path);
        match std::fs::read_to_string(&sidecar) {
            Ok(s) => {
                image.behavior = toml::from_str(&s).map_err(|source| ImageError::Sidecar { path: sidecar, source })?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(source) => return Err(ImageError::Io { path: sidecar, source }),
        }
        Ok(image)
    }

    pub fn to_ti_txt(&self) -> String {
        serialize_segments(&self.segments)
    }

    pub fn byte_len(&self) -> usize {
        self.segments.iter().map(|s| s.bytes.len()).sum()
    }

    pub fn word_len(&self) -> usize {
        self.byte_len() / 2
    }

    pub fn manifest(&self) -> CommitManifest {
        CommitManifest {
            segments: self
                .segments
                .iter()
                .map(|s| SegmentDigest {
                    start: s.start,
                    end: s.end(),
                    checksum: ones_complement_sum(&s.bytes),
                })
                .collect(),
            behavior: self.behavior,
        }
    }

    /// A deterministic image of `len` bytes at `start`, for demos and tests.
    pub fn synthetic(start: u32, len: usize, behavior: ApplicationBehavior) -> Self {
        let bytes = (0..len).map(|i| (i as u32).wrapping_mul(0x9E37_79B1).rotate_left(7) as u8).collect();
        Self::from_segments(vec![Segment { start, bytes }], behavior)
    }
}

/// `app.txt` → `app.behavior.toml`
pub fn sidecar_path(image: &Path) -> PathBuf {
    let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    image.with_file_name(format!("{stem}.behavior.toml"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub offending: Vec<Range<u32>>,
}

/// Every byte of the image must land in the application region.
pub fn validate_regions(image: &FirmwareImage, layout: &MemoryLayout) -> Result<(), OverlapReport> {
    let offending: Vec<Range<u32>> = image
        .segments
        .iter()
        .map(Segment::range)
        .filter(|r| r.end > layout.span || overlaps(r, &layout.bootloader()))
        .collect();
    if offending.is_empty() {
        Ok(())
    } else {
        Err(OverlapReport { offending })
    }
}

/// Antenna(s) with the strongest predicted RSSI for `tag`. Antennas within
/// `tie_window_db` of the best are included too. Sorted by id.
pub fn choose_antennas(
    geometry: &TestbedGeometry,
    link: &LinkBudgetParams,
    tag: TagId,
    tie_window_db: f64,
) -> Vec<AntennaId> {
    let Ok(placement) = geometry.tag(tag) else {
        return Vec::new();
    };
    let scored: Vec<(AntennaId, f64)> = placement
        .links
        .iter()
        .filter_map(|l| link_quality(geometry, link, l.antenna, tag).ok().map(|q| (l.antenna, q)))
        .filter(|(_, q)| q.is_reachable())
        .map(|(a, q)| (a, q.rssi_dbm))
        .collect();
    let Some(best) = scored.iter().map(|&(_, r)| r).reduce(f64::max) else {
        return Vec::new();
    };
    let mut chosen: Vec<AntennaId> = scored
        .into_iter()
        .filter(|&(_, r)| best - r < tie_window_db || r == best)
        .map(|(a, _)| a)
        .collect();
    chosen.sort();
    chosen.dedup();
    chosen
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReprogramPolicy {
    pub chunk_words: usize,
    /// Retries per block-write, checksum query and commit.
    pub chunk_retries: u32,
    /// How long to keep sending goto-bios before giving up.
    pub abort_timeout_ms: u64,
    /// Full restarts allowed after the tag drops out of bios mode or
    /// fails verification.
    pub max_restarts: u32,
    pub tie_window_db: f64,
}

impl Default for ReprogramPolicy {
    fn default() -> Self {
        Self {
            chunk_words: 8,
            chunk_retries: 64,
            abort_timeout_ms: 60_000,
            max_restarts: 3,
            tie_window_db: 3.0,
        }
    }
}

impl ReprogramPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.chunk_words == 0 {
            return Err("chunk_words must be positive".into());
        }
        if self.abort_timeout_ms == 0 {
            return Err("abort_timeout_ms must be positive".into());
        }
        if !(self.tie_window_db >= 0.0) {
            return Err("tie_window_db must be non-negative".into());
        }
        Ok(())
    }

    /// Goto-bios retries that fit inside the abort timeout.
    pub fn goto_bios_retries(&self, slot_ms: u64) -> u32 {
        let attempts = self.abort_timeout_ms.div_ceil(slot_ms.max(1));
        u32::try_from(attempts.saturating_sub(1)).unwrap_or(u32::MAX)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferOutcome {
    Success,
    AbortTimeout,
    RegionViolation,
    VerifyFailed,
}

impl TransferOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            TransferOutcome::Success => "success",
            TransferOutcome::AbortTimeout => "abort-timeout",
            TransferOutcome::RegionViolation => "region-violation",
            TransferOutcome::VerifyFailed => "verify-failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferStats {
    pub tag_id: TagId,
    pub antennas: Vec<AntennaId>,
    pub messages_sent: u64,
    pub messages_retried: u64,
    pub virtual_duration_ms: u64,
    pub restarts: u32,
    pub outcome: TransferOutcome,
}

impl TransferStats {
    pub fn virtual_duration_s(&self) -> f64 {
        self.virtual_duration_ms as f64 / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    EnterBios,
    Write { segment: usize, word: usize },
    Verify { segment: usize },
    Commit,
    Done(TransferOutcome),
}

/// One transfer, advanced a single access op at a time.
#[derive(Debug, Clone)]
pub struct Transfer {
    target: Epc,
    image: FirmwareImage,
    words: Vec<Vec<u16>>,
    manifest: CommitManifest,
    policy: ReprogramPolicy,
    phase: Phase,
    next_spec_id: u32,
    stats: TransferStats,
}

impl Transfer {
    /// Prepares a transfer. An image that would touch the bootloader ends
    /// the transfer before anything is sent.
    pub fn new(
        tag_id: TagId,
        target: Epc,
        image: FirmwareImage,
        layout: &MemoryLayout,
        antennas: Vec<AntennaId>,
        policy: ReprogramPolicy,
    ) -> Self {
        let phase = match validate_regions(&image, layout) {
            Ok(()) => Phase::EnterBios,
            Err(_) => Phase::Done(TransferOutcome::RegionViolation),
        };
        let words = image
            .segments
            .iter()
            .map(|s| s.bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
            .collect();
        let manifest = image.manifest();
        Self {
            target,
            image,
            words,
            manifest,
            policy,
            phase,
            next_spec_id: 1,
            stats: TransferStats {
                tag_id,
                antennas,
                messages_sent: 0,
                messages_retried: 0,
                virtual_duration_ms: 0,
                restarts: 0,
                outcome: TransferOutcome::AbortTimeout,
            },
        }
    }

    pub fn image(&self) -> &FirmwareImage {
        &self.image
    }

    pub fn outcome(&self) -> Option<TransferOutcome> {
        match self.phase {
            Phase::Done(o) => Some(o),
            _ => None,
        }
    }

    pub fn stats(&self) -> &TransferStats {
        &self.stats
    }

    fn next_op(&self, slot_ms: u64) -> Option<AccessOp> {
        let retries = self.policy.chunk_retries;
        let (spec, max_retries) = match self.phase {
            Phase::Done(_) => return None,
            Phase::EnterBios => (AccessOpSpec::GotoBios, self.policy.goto_bios_retries(slot_ms)),
            Phase::Write { segment, word } => {
                let seg_words = &self.words[segment];
                let end = (word + self.policy.chunk_words).min(seg_words.len());
                let start = self.image.segments[segment].start + 2 * word as u32;
                (
                    AccessOpSpec::BlockWrite {
                        start,
                        words: seg_words[word..end].to_vec(),
                    },
                    retries,
                )
            }
            Phase::Verify { segment } => {
                let d = self.manifest.segments[segment];
                (AccessOpSpec::Checksum { start: d.start, end: d.end }, retries)
            }
            Phase::Commit => (
                AccessOpSpec::Commit {
                    manifest: self.manifest.clone(),
                },
                retries,
            ),
        };
        Some(AccessOp { spec, max_retries })
    }

    fn restart_or(&mut self, outcome: TransferOutcome) -> Phase {
        if self.stats.restarts < self.policy.max_restarts {
            self.stats.restarts += 1;
            Phase::EnterBios
        } else {
            Phase::Done(outcome)
        }
    }

    fn after_write(&self, segment: usize, word: usize) -> Phase {
        let next = word + self.policy.chunk_words;
        if next < self.words[segment].len() {
            Phase::Write { segment, word: next }
        } else if segment + 1 < self.words.len() {
            Phase::Write {
                segment: segment + 1,
                word: 0,
            }
        } else if self.words.is_empty() {
            Phase::Commit
        } else {
            Phase::Verify { segment: 0 }
        }
    }

    fn on_result(&mut self, r: &AccessOpResult) {
        let attempts = u64::from(r.result.attempts);
        self.stats.messages_sent += attempts;
        self.stats.messages_retried += attempts.saturating_sub(1);
        let Some(reply) = &r.reply else {
            self.phase = Phase::Done(TransferOutcome::AbortTimeout);
            return;
        };
        self.phase = match (self.phase, reply) {
            (Phase::EnterBios, AccessReply::Ack) => match self.words.is_empty() {
                true => Phase::Commit,
                false => Phase::Write { segment: 0, word: 0 },
            },
            (Phase::Write { segment, word }, AccessReply::Ack) => self.after_write(segment, word),
            (Phase::Write { .. }, AccessReply::Nack { reason: Nack::WrongMode }) => {
                self.restart_or(TransferOutcome::AbortTimeout)
            }
            (Phase::Write { .. }, AccessReply::Nack { .. }) => Phase::Done(TransferOutcome::RegionViolation),
            (Phase::Verify { segment }, AccessReply::Checksum { value }) => {
                if *value != self.manifest.segments[segment].checksum {
                    self.restart_or(TransferOutcome::VerifyFailed)
                } else if segment + 1 < self.manifest.segments.len() {
                    Phase::Verify { segment: segment + 1 }
                } else {
                    Phase::Commit
                }
            }
            (Phase::Commit, AccessReply::Ack) => Phase::Done(TransferOutcome::Success),
            (Phase::Commit, _) => self.restart_or(TransferOutcome::VerifyFailed),
            (_, _) => Phase::Done(TransferOutcome::VerifyFailed),
        };
    }

    /// Sends the next op through `port`. Returns the outcome once the
    /// transfer has finished.
    pub fn step(
        &mut self,
        port: &mut dyn ReaderPort,
        observer: &mut dyn FnMut(&ReaderEvent),
    ) -> Result<Option<TransferOutcome>, PortError> {
        let slot_ms = port.access_slot_ms()?;
        if let Some(op) = self.next_op(slot_ms) {
            let spec = AccessSpec {
                id: self.next_spec_id,
                target: self.target,
                antenna_ids: self.stats.antennas.clone(),
                ops: vec![op],
            };
            self.next_spec_id += 1;
            let results = port.run_accessspec(&spec, observer)?;
            let result = results.first().ok_or(PortError::MissingResult(spec.id))?;
            self.stats.virtual_duration_ms += u64::from(result.result.attempts) * slot_ms;
            self.on_result(result);
        }
        let outcome = self.outcome();
        if let Some(o) = outcome {
            self.stats.outcome = o;
        }
        Ok(outcome)
    }

    pub fn run(
        mut self,
        port: &mut dyn ReaderPort,
        observer: &mut dyn FnMut(&ReaderEvent),
    ) -> Result<TransferStats, PortError> {
        while self.step(port, observer)?.is_none() {}
        Ok(self.stats)
    }
}

/// Reprograms `tag` on an in-process reader, over `antennas` (empty means
/// the reader picks among all of them).
pub fn reprogram(
    reader: &mut Reader,
    tag: TagId,
    image: &FirmwareImage,
    antennas: Vec<AntennaId>,
    policy: &ReprogramPolicy,
    observer: &mut dyn FnMut(&ReaderEvent),
) -> TransferStats {
    let (epc, layout) = match reader.world.tag(tag) {
        Some(t) => (t.epc, t.memory.layout.clone()),
        None => (Epc::from_tag(tag), MemoryLayout::default()),
    };
    Transfer::new(tag, epc, image.clone(), &layout, antennas, policy.clone())
        .run(reader, observer)
        .expect("in-process reader does not fail")
}
