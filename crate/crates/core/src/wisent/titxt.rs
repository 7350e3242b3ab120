//! TI-TXT firmware images.
//!
//! ```text
//! @F000
//! 31 40 00 24 B2 40 80 5A 20 01
//! q
//! ```
//!
//! `@` starts a section at a hex address, data lines hold space-separated
//! two-digit hex bytes, and `q` ends the file. Blank lines and surrounding
//! whitespace are ignored. Sections that continue exactly where the
//! previous one ended are merged.

use std::fmt::Write as _;
use std::ops::Range;

use thiserror::Error;

/// Highest address + 1 an image may touch.
pub const ADDRESS_LIMIT: u32 = 0x1_0000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub start: u32,
    pub bytes: Vec<u8>,
}

impl Segment {
    pub fn end(&self) -> u32 {
        self.start + self.bytes.len() as u32
    }

    pub fn range(&self) -> Range<u32> {
        self.start..self.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("invalid hex {0:?}")]
    BadHex(String),
    #[error("missing 'q' terminator")]
    MissingTerminator,
    #[error("data runs past address {:#x}", ADDRESS_LIMIT)]
    AddressOverflow,
    #[error("data before the first '@' address")]
    DataBeforeAddress,
    #[error("section overlaps earlier data")]
    Overlap,
    #[error("content after 'q' terminator")]
    TrailingContent,
}

fn err(line: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { line, kind }
}

/// Parses TI-TXT into sorted, non-overlapping segments.
pub fn parse_segments(text: &str) -> Result<Vec<Segment>, ParseError> {
    let mut segments: Vec<Segment> = Vec::new();
    let mut current: Option<Segment> = None;
    let mut terminated = false;
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if terminated {
            return Err(err(line_no, ParseErrorKind::TrailingContent));
        }
        if line.eq_ignore_ascii_case("q") {
            terminated = true;
            continue;
        }
        if let Some(addr) = line.strip_prefix('@') {
            let addr = addr.trim();
            if addr.is_empty() || addr.len() > 8 {
                return Err(err(line_no, ParseErrorKind::BadHex(addr.to_string())));
            }
            let start =
                u32::from_str_radix(addr, 16).map_err(|_| err(line_no, ParseErrorKind::BadHex(addr.to_string())))?;
            if start >= ADDRESS_LIMIT {
                return Err(err(line_no, ParseErrorKind::AddressOverflow));
            }
            if let Some(seg) = current.take() {
                segments.push(seg);
            }
            current = Some(Segment { start, bytes: Vec::new() });
            continue;
        }
        let seg = current
            .as_mut()
            .ok_or_else(|| err(line_no, ParseErrorKind::DataBeforeAddress))?;
        for tok in line.split_whitespace() {
            if tok.len() != 2 {
                return Err(err(line_no, ParseErrorKind::BadHex(tok.to_string())));
            }
            let b = u8::from_str_radix(tok, 16).map_err(|_| err(line_no, ParseErrorKind::BadHex(tok.to_string())))?;
            if seg.end() >= ADDRESS_LIMIT {
                return Err(err(line_no, ParseErrorKind::AddressOverflow));
            }
            seg.bytes.push(b);
        }
    }
    if !terminated {
        return Err(err(last_line.max(1), ParseErrorKind::MissingTerminator));
    }
    if let Some(seg) = current.take() {
        segments.push(seg);
    }
    normalize(segments).map_err(|line_kind| err(last_line, line_kind))
}

fn normalize(mut segments: Vec<Segment>) -> Result<Vec<Segment>, ParseErrorKind> {
    segments.retain(|s| !s.bytes.is_empty());
    segments.sort_by_key(|s| s.start);
    let mut out: Vec<Segment> = Vec::with_capacity(segments.len());
    for seg in segments {
        match out.last_mut() {
            Some(prev) if seg.start < prev.end() => return Err(ParseErrorKind::Overlap),
            Some(prev) if seg.start == prev.end() => prev.bytes.extend_from_slice(&seg.bytes),
            _ => out.push(seg),
        }
    }
    Ok(out)
}

/// Canonical text: upper-case four-digit addresses, 16 bytes per line.
pub fn serialize_segments(segments: &[Segment]) -> String {
    let mut out = String::new();
    for seg in segments {
        let _ = writeln!(out, "@{:04X}", seg.start);
        for chunk in seg.bytes.chunks(16) {
            let line: Vec<String> = chunk.iter().map(|b| format!("{b:02X}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
    }
    out.push_str("q\n");
    out
}
