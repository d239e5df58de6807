use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use memchr::memmem;
use serde::{Deserialize, Serialize};

pub const PEM_HEADER: &[u8] = b"-----BEGIN CERTIFICATE-----";

/// The signature table: one magic per filesystem and byte order.
pub const SIGNATURE_TABLE: &str = include_str!("signatures.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FindingKind {
    PemCertificate,
    SquashFS,
    CramFS,
    JFFS2,
    UBIFS,
    RomFS,
}

impl fmt::Display for FindingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for FindingKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "PemCertificate" => FindingKind::PemCertificate,
            "SquashFS" => FindingKind::SquashFS,
            "CramFS" => FindingKind::CramFS,
            "JFFS2" => FindingKind::JFFS2,
            "UBIFS" => FindingKind::UBIFS,
            "RomFS" => FindingKind::RomFS,
            other => return Err(format!("unknown finding kind {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobFinding {
    pub offset: usize,
    pub kind: FindingKind,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub kind: FindingKind,
    pub order: ByteOrder,
    pub magic: Vec<u8>,
    pub class: String,
}

/// Parse a signature table in the format of [`SIGNATURE_TABLE`].
pub fn parse_signatures(table: &str) -> Result<Vec<Signature>, String> {
    let mut out = Vec::new();
    for (i, line) in table.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [kind, order, magic, class] = cols[..] else {
            return Err(format!("line {}: expected 4 columns", i + 1));
        };
        let order = match order {
            "le" => ByteOrder::Little,
            "be" => ByteOrder::Big,
            other => return Err(format!("line {}: bad byte order {other:?}", i + 1)),
        };
        out.push(Signature {
            kind: kind.parse().map_err(|e| format!("line {}: {e}", i + 1))?,
            order,
            magic: hex::decode(magic).map_err(|e| format!("line {}: {e}", i + 1))?,
            class: class.to_string(),
        });
    }
    Ok(out)
}

pub fn signatures() -> &'static [Signature] {
    static TABLE: OnceLock<Vec<Signature>> = OnceLock::new();
    TABLE
        .get_or_init(|| parse_signatures(SIGNATURE_TABLE).expect("built-in signature table parses"))
}

/// Offsets of every certificate header, ascending.
pub fn find_pem_certificates(blob: &[u8]) -> Vec<BlobFinding> {
    memmem::find_iter(blob, PEM_HEADER)
        .map(|offset| BlobFinding {
            offset,
            kind: FindingKind::PemCertificate,
            detail: "certificate".into(),
        })
        .collect()
}

struct Reader<'a> {
    data: &'a [u8],
    order: ByteOrder,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> Option<[u8; N]> {
        self.data.get(at..at.checked_add(N)?)?.try_into().ok()
    }

    fn u16(&self, at: usize) -> Option<u16> {
        let b = self.bytes::<2>(at)?;
        Some(match self.order {
            ByteOrder::Little => u16::from_le_bytes(b),
            ByteOrder::Big => u16::from_be_bytes(b),
        })
    }

    fn u32(&self, at: usize) -> Option<u32> {
        let b = self.bytes::<4>(at)?;
        Some(match self.order {
            ByteOrder::Little => u32::from_le_bytes(b),
            ByteOrder::Big => u32::from_be_bytes(b),
        })
    }

    fn u64(&self, at: usize) -> Option<u64> {
        let b = self.bytes::<8>(at)?;
        Some(match self.order {
            ByteOrder::Little => u64::from_le_bytes(b),
            ByteOrder::Big => u64::from_be_bytes(b),
        })
    }
}

/// Raw CRC-32 register update (reflected, no pre- or post-inversion)
/// starting from `seed`.
fn crc32_raw(seed: u32, data: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new_with_initial(!seed);
    h.update(data);
    !h.finalize()
}

const SQUASHFS_V4_HEADER: usize = 96;

/// Validated image length starting at the magic, or `None` if the header
/// does not check out. A length of zero means the extent is unknown.
fn squashfs(r: &Reader<'_>) -> Option<usize> {
    let major = r.u16(28)?;
    let minor = r.u16(30)?;
    match major {
        4 => {
            let block_size = r.u32(12)?;
            let block_log = r.u16(22)?;
            if minor != 0 || !block_size.is_power_of_two() || !(12..=20).contains(&block_log) {
                return None;
            }
            if block_size != 1 << block_log {
                return None;
            }
            let bytes_used = usize::try_from(r.u64(40)?).ok()?;
            (bytes_used >= SQUASHFS_V4_HEADER).then_some(bytes_used)
        }
        1..=3 if minor <= 1 => Some(0),
        _ => None,
    }
}

fn cramfs(r: &Reader<'_>) -> Option<usize> {
    if r.bytes::<16>(16)? != *b"Compressed ROMFS" {
        return None;
    }
    let size = r.u32(4)? as usize;
    (size >= 76).then_some(size)
}

const JFFS2_NODE_TYPES: [u16; 7] = [0xE001, 0xE002, 0x2003, 0x2004, 0xE006, 0xE008, 0xE009];
const JFFS2_HEADER: usize = 12;

fn jffs2_node(r: &Reader<'_>, at: usize) -> Option<usize> {
    let magic = r.u16(at)?;
    let node_type = r.u16(at + 2)?;
    let total = r.u32(at + 4)? as usize;
    let crc = r.u32(at + 8)?;
    let header = r.data.get(at..at + 8)?;
    if magic != 0x1985 || !JFFS2_NODE_TYPES.contains(&node_type) || total < JFFS2_HEADER {
        return None;
    }
    (crc32_raw(0, header) == crc).then_some(total.next_multiple_of(4))
}

/// Chain of consecutive nodes, allowing erase-block padding in between.
fn jffs2(r: &Reader<'_>) -> Option<usize> {
    let mut end = jffs2_node(r, 0)?;
    let mut at = end;
    while at < r.data.len() {
        if let Some(len) = jffs2_node(r, at) {
            at += len;
            end = at;
            continue;
        }
        match r.data[at] {
            0xFF | 0x00 => at += 4,
            _ => break,
        }
    }
    Some(end.min(r.data.len()))
}

const UBIFS_SB_NODE: u8 = 6;
const UBIFS_COMMON_HEADER: usize = 24;

fn ubifs(r: &Reader<'_>) -> Option<usize> {
    let crc = r.u32(4)?;
    let len = r.u32(16)? as usize;
    let node_type = r.bytes::<1>(20)?[0];
    if node_type != UBIFS_SB_NODE || !(UBIFS_COMMON_HEADER..=4096).contains(&len) {
        return None;
    }
    let body = r.data.get(8..len)?;
    if crc32_raw(!0, body) != crc {
        return None;
    }
    let leb_size = r.u32(36)? as usize;
    let leb_count = r.u32(40)? as usize;
    Some(leb_size.checked_mul(leb_count)?.max(len))
}

fn romfs(r: &Reader<'_>) -> Option<usize> {
    let size = r.u32(8)? as usize;
    if size < 32 {
        return None;
    }
    let checked = r.data.get(..size.min(512))?;
    let sum = checked.chunks_exact(4).fold(0u32, |acc, w| {
        acc.wrapping_add(u32::from_be_bytes(w.try_into().unwrap()))
    });
    (sum == 0).then_some(size)
}

fn validate(sig: &Signature, tail: &[u8]) -> Option<usize> {
    let r = Reader {
        data: tail,
        order: sig.order,
    };
    match sig.kind {
        FindingKind::SquashFS => squashfs(&r),
        FindingKind::CramFS => cramfs(&r),
        FindingKind::JFFS2 => jffs2(&r),
        FindingKind::UBIFS => ubifs(&r),
        FindingKind::RomFS => romfs(&r),
        FindingKind::PemCertificate => None,
    }
}

/// Filesystem images in `blob`, ascending by offset. Every byte offset is
/// a candidate. Signatures falling inside an image already identified are
/// part of that image and are not reported.
pub fn identify_filesystems(blob: &[u8]) -> Vec<BlobFinding> {
    let sigs = signatures();
    let mut candidates: Vec<(usize, usize)> = sigs
        .iter()
        .enumerate()
        .flat_map(|(i, sig)| memmem::find_iter(blob, &sig.magic).map(move |at| (at, i)))
        .collect();
    candidates.sort_unstable();

    let mut findings = Vec::new();
    let mut covered_until = 0;
    for (offset, i) in candidates {
        if offset < covered_until {
            continue;
        }
        let sig = &sigs[i];
        let Some(extent) = validate(sig, &blob[offset..]) else {
            continue;
        };
        covered_until = offset + extent.max(1);
        findings.push(BlobFinding {
            offset,
            kind: sig.kind,
            detail: sig.class.clone(),
        });
    }
    findings
}
