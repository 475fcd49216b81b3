//! The `DRST` reinforcement store.
//!
//! ```text
//! offset  size  field (little-endian)
//!      0     4  magic "DRST"
//!      4     2  version (1)
//!      6     2  variant flags (bit0 RRC, bit1 RA/RE, bit2 Mixing)
//!      8     4  num_classes
//!     12     1  top_k
//!     13     2  samples_per_image
//!     15     8  num_images
//!     23     8  FNV-1a 64 of every record byte
//!     31     2  teacher id length L
//!     33     L  teacher id (UTF-8)
//!   33+L     …  num_images × samples_per_image fixed-size records
//! ```
//!
//! Record layout:
//!
//! ```text
//! top_k × (u32 class, f32 prob)                      8·top_k
//! crop x, y, w, h: f32; flip: u8                     17
//! [RA/RE]  2 × (i32 op, f32 magnitude); erase 4×f32  32
//! [Mixing] mixup (i32 partner, f32 λ);
//!          cutmix (i32 partner, 4×f32 box)           28
//! ```
//!
//! Records of one image are contiguous and sorted by descending teacher
//! confidence, so record `(i, j)` lives at `header_len + (i·N + j)·size`.

use std::fs;
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::Path;

use serde::Serialize;

use crate::augment::{AugmentationDescriptor, CutMix, MixUp, RaSlot, Rect, VariantFlags};
use crate::teacher::SparseProbs;
use crate::{Error, Result};

pub const STORE_MAGIC: &[u8; 4] = b"DRST";
pub const STORE_VERSION: u16 = 1;

pub const PROB_ENTRY_BYTES: usize = 8;
pub const RRC_BLOCK_BYTES: usize = 17;
pub const RA_RE_BLOCK_BYTES: usize = 32;
pub const MIXING_BLOCK_BYTES: usize = 28;

const FIXED_HEADER_BYTES: usize = 33;
const CHECKSUM_OFFSET: u64 = 23;
const MAX_VIOLATIONS: usize = 100;

/// Bytes per record for the given `top_k` and variant flags.
pub fn record_size(top_k: usize, flags: VariantFlags) -> usize {
    let mut n = PROB_ENTRY_BYTES * top_k + RRC_BLOCK_BYTES;
    if flags.has_ra_re() {
        n += RA_RE_BLOCK_BYTES;
    }
    if flags.has_mixing() {
        n += MIXING_BLOCK_BYTES;
    }
    n
}

/// Size of a whole store file.
pub fn total_size(
    num_images: u64,
    samples_per_image: u64,
    top_k: usize,
    flags: VariantFlags,
    teacher_id_len: usize,
) -> Result<u64> {
    num_images
        .checked_mul(samples_per_image)
        .and_then(|r| r.checked_mul(record_size(top_k, flags) as u64))
        .and_then(|b| b.checked_add((FIXED_HEADER_BYTES + teacher_id_len) as u64))
        .ok_or_else(|| Error::invalid("store size overflows u64"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StoreHeader {
    #[serde(serialize_with = "ser_flags")]
    pub flags: VariantFlags,
    pub num_classes: u32,
    pub top_k: u8,
    pub samples_per_image: u16,
    pub num_images: u64,
    pub teacher_id: String,
}

fn ser_flags<S: serde::Serializer>(f: &VariantFlags, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_u16(f.bits())
}

impl StoreHeader {
    pub fn new(
        flags: VariantFlags,
        num_classes: u32,
        top_k: u8,
        samples_per_image: u16,
        num_images: u64,
        teacher_id: impl Into<String>,
    ) -> Result<Self> {
        let h = Self { flags, num_classes, top_k, samples_per_image, num_images, teacher_id: teacher_id.into() };
        let v = h.violations();
        if v.is_empty() {
            Ok(h)
        } else {
            Err(Error::invalid(v.join("; ")))
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.flags.bits() & VariantFlags::RRC == 0 {
            v.push("flags must include RRC".to_string());
        }
        if self.top_k == 0 || self.top_k as u32 > self.num_classes {
            v.push(format!("top_k {} must be in [1, num_classes = {}]", self.top_k, self.num_classes));
        }
        if self.samples_per_image == 0 {
            v.push("samples_per_image must be at least 1".to_string());
        }
        if self.teacher_id.len() > u16::MAX as usize {
            v.push("teacher id longer than 65535 bytes".to_string());
        }
        v
    }

    pub fn header_len(&self) -> usize {
        FIXED_HEADER_BYTES + self.teacher_id.len()
    }

    pub fn record_size(&self) -> usize {
        record_size(self.top_k as usize, self.flags)
    }

    pub fn num_records(&self) -> u64 {
        self.num_images * self.samples_per_image as u64
    }

    pub fn total_size(&self) -> Result<u64> {
        total_size(
            self.num_images,
            self.samples_per_image as u64,
            self.top_k as usize,
            self.flags,
            self.teacher_id.len(),
        )
    }

    fn encode(&self, checksum: u64) -> Vec<u8> {
        let mut b = Vec::with_capacity(self.header_len());
        b.extend_from_slice(STORE_MAGIC);
        b.extend_from_slice(&STORE_VERSION.to_le_bytes());
        b.extend_from_slice(&self.flags.bits().to_le_bytes());
        b.extend_from_slice(&self.num_classes.to_le_bytes());
        b.push(self.top_k);
        b.extend_from_slice(&self.samples_per_image.to_le_bytes());
        b.extend_from_slice(&self.num_images.to_le_bytes());
        b.extend_from_slice(&checksum.to_le_bytes());
        b.extend_from_slice(&(self.teacher_id.len() as u16).to_le_bytes());
        b.extend_from_slice(self.teacher_id.as_bytes());
        b
    }

    /// Parses a header, returning it with the stored checksum.
    fn decode(bytes: &[u8]) -> Result<(Self, u64)> {
        let need = |n: usize| {
            if bytes.len() < n {
                Err(Error::decode(None, format!("truncated header: {} of {n} bytes", bytes.len())))
            } else {
                Ok(())
            }
        };
        need(FIXED_HEADER_BYTES)?;
        if &bytes[..4] != STORE_MAGIC {
            return Err(Error::decode(None, format!("bad magic {:?} at offset 0", &bytes[..4])));
        }
        let mut r = Reader::new(&bytes[4..FIXED_HEADER_BYTES]);
        let version = r.u16();
        if version != STORE_VERSION {
            return Err(Error::decode(None, format!("unsupported version {version} at offset 4")));
        }
        let bits = r.u16();
        let flags = VariantFlags::from_bits(bits)
            .ok_or_else(|| Error::decode(None, format!("bad variant flags {bits:#06x} at offset 6")))?;
        let num_classes = r.u32();
        let top_k = r.u8();
        let samples_per_image = r.u16();
        let num_images = r.u64();
        let checksum = r.u64();
        let id_len = r.u16() as usize;
        need(FIXED_HEADER_BYTES + id_len)?;
        let teacher_id = std::str::from_utf8(&bytes[FIXED_HEADER_BYTES..FIXED_HEADER_BYTES + id_len])
            .map_err(|e| Error::decode(None, format!("teacher id at offset 33 is not UTF-8: {e}")))?
            .to_string();
        let h = Self { flags, num_classes, top_k, samples_per_image, num_images, teacher_id };
        let v = h.violations();
        if !v.is_empty() {
            return Err(Error::decode(None, v.join("; ")));
        }
        Ok((h, checksum))
    }
}

/// One stored reinforcement: sparse teacher output plus the augmentation
/// that produced the input the teacher saw.
#[derive(Clone, Debug, PartialEq)]
pub struct ReinforcementRecord {
    pub probs: SparseProbs,
    pub descriptor: AugmentationDescriptor,
}

impl ReinforcementRecord {
    pub fn confidence(&self) -> f64 {
        self.probs.confidence()
    }
}

/// Appends the encoding of `rec` to `out`.
pub fn encode_record(header: &StoreHeader, rec: &ReinforcementRecord, out: &mut Vec<u8>) -> Result<()> {
    let d = &rec.descriptor;
    if rec.probs.k() != header.top_k as usize {
        return Err(Error::invalid(format!(
            "record has {} probabilities, header top_k is {}",
            rec.probs.k(),
            header.top_k
        )));
    }
    if d.flags != header.flags {
        return Err(Error::invalid(format!(
            "descriptor flags {:#x} differ from store flags {:#x}",
            d.flags.bits(),
            header.flags.bits()
        )));
    }
    let start = out.len();
    for &(c, p) in rec.probs.entries() {
        out.extend_from_slice(&c.to_le_bytes());
        out.extend_from_slice(&p.to_le_bytes());
    }
    put_rect(out, d.crop);
    out.push(d.flip as u8);
    if header.flags.has_ra_re() {
        for s in &d.ra {
            out.extend_from_slice(&s.op.to_le_bytes());
            out.extend_from_slice(&s.magnitude.to_le_bytes());
        }
        put_rect(out, d.erase);
    } else if d.ra.iter().any(|s| !s.is_empty()) || d.erase_applied() {
        return Err(Error::invalid("RA/RE values set but the store has no RA/RE block"));
    }
    if header.flags.has_mixing() {
        out.extend_from_slice(&d.mixup.partner.to_le_bytes());
        out.extend_from_slice(&d.mixup.lambda.to_le_bytes());
        out.extend_from_slice(&d.cutmix.partner.to_le_bytes());
        put_rect(out, d.cutmix.rect);
    } else if d.mix_applied() {
        return Err(Error::invalid("mix partner set but the store has no mixing block"));
    }
    debug_assert_eq!(out.len() - start, header.record_size());
    Ok(())
}

/// Decodes one record; `bytes` must be exactly one record long.
pub fn decode_record(header: &StoreHeader, bytes: &[u8], record: u64) -> Result<ReinforcementRecord> {
    if bytes.len() != header.record_size() {
        return Err(Error::decode(
            Some(record),
            format!("record is {} bytes, expected {}", bytes.len(), header.record_size()),
        ));
    }
    let mut r = Reader::new(bytes);
    let entries = (0..header.top_k).map(|_| (r.u32(), r.f32())).collect();
    let mut d = AugmentationDescriptor::identity(header.flags);
    d.crop = r.rect();
    d.flip = match r.u8() {
        0 => false,
        1 => true,
        b => return Err(Error::decode(Some(record), format!("flip byte {b} is not 0 or 1"))),
    };
    if header.flags.has_ra_re() {
        for slot in &mut d.ra {
            *slot = RaSlot { op: r.i32(), magnitude: r.f32() };
        }
        d.erase = r.rect();
    }
    if header.flags.has_mixing() {
        d.mixup = MixUp { partner: r.i32(), lambda: r.f32() };
        d.cutmix = CutMix { partner: r.i32(), rect: r.rect() };
    }
    Ok(ReinforcementRecord { probs: SparseProbs::from_entries(entries), descriptor: d })
}

fn put_rect(out: &mut Vec<u8>, r: Rect) {
    for v in [r.x, r.y, r.w, r.h] {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.bytes[self.pos..self.pos + N].try_into().expect("length checked by caller");
        self.pos += N;
        out
    }

    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }

    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take())
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }

    fn i32(&mut self) -> i32 {
        i32::from_le_bytes(self.take())
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }

    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }

    fn rect(&mut self) -> Rect {
        Rect::new(self.f32(), self.f32(), self.f32(), self.f32())
    }
}

/// 64-bit FNV-1a, fed incrementally.
#[derive(Clone, Copy, Debug)]
pub struct Fnv1a(u64);

impl Default for Fnv1a {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv1a {
    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

/// Streams image groups to `W` in image order and patches the checksum on
/// [`finish`](StoreWriter::finish).
pub struct StoreWriter<W: Write + Seek> {
    out: W,
    header: StoreHeader,
    start: u64,
    groups: u64,
    bytes: u64,
    hash: Fnv1a,
    buf: Vec<u8>,
}

impl<W: Write + Seek> StoreWriter<W> {
    pub fn new(mut out: W, header: StoreHeader) -> Result<Self> {
        let v = header.violations();
        if !v.is_empty() {
            return Err(Error::invalid(v.join("; ")));
        }
        let start = out.stream_position()?;
        let head = header.encode(0);
        out.write_all(&head)?;
        Ok(Self { out, bytes: head.len() as u64, header, start, groups: 0, hash: Fnv1a::default(), buf: Vec::new() })
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    pub fn groups_written(&self) -> u64 {
        self.groups
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes
    }

    /// Writes the records of the next image. They must number
    /// `samples_per_image` and be sorted by descending confidence.
    pub fn write_group(&mut self, records: &[ReinforcementRecord]) -> Result<()> {
        let image = self.groups;
        if image >= self.header.num_images {
            return Err(Error::invalid(format!("store already holds all {} image groups", self.header.num_images)));
        }
        if records.len() != self.header.samples_per_image as usize {
            return Err(Error::Integrity {
                image,
                message: format!("{} records, expected {}", records.len(), self.header.samples_per_image),
            });
        }
        if let Some(j) = first_unsorted(records.iter().map(|r| r.probs.confidence())) {
            return Err(Error::Integrity {
                image,
                message: format!("record {j} is more confident than record {}", j - 1),
            });
        }
        self.buf.clear();
        for rec in records {
            encode_record(&self.header, rec, &mut self.buf)?;
        }
        self.out.write_all(&self.buf)?;
        self.hash.update(&self.buf);
        self.bytes += self.buf.len() as u64;
        self.groups += 1;
        Ok(())
    }

    /// Patches the checksum and returns the sink with the byte count.
    pub fn finish(mut self) -> Result<(W, u64)> {
        if self.groups != self.header.num_images {
            return Err(Error::invalid(format!(
                "wrote {} image groups, header declares {}",
                self.groups, self.header.num_images
            )));
        }
        let end = self.out.stream_position()?;
        self.out.seek(SeekFrom::Start(self.start + CHECKSUM_OFFSET))?;
        self.out.write_all(&self.hash.finish().to_le_bytes())?;
        self.out.seek(SeekFrom::Start(end))?;
        self.out.flush()?;
        Ok((self.out, self.bytes))
    }
}

fn first_unsorted(confidences: impl Iterator<Item = f64>) -> Option<usize> {
    let mut prev = f64::INFINITY;
    for (j, c) in confidences.enumerate() {
        if c > prev {
            return Some(j);
        }
        prev = c;
    }
    None
}

/// Immutable in-memory store with O(1) record access.
#[derive(Clone, Debug, PartialEq)]
pub struct Store {
    header: StoreHeader,
    checksum: u64,
    bytes: Vec<u8>,
}

impl Store {
    /// Encodes `groups` into a new store.
    pub fn build<I>(header: StoreHeader, groups: I) -> Result<Self>
    where
        I: IntoIterator,
        I::Item: AsRef<[ReinforcementRecord]>,
    {
        let mut w = StoreWriter::new(std::io::Cursor::new(Vec::new()), header)?;
        for g in groups {
            w.write_group(g.as_ref())?;
        }
        let (cursor, _) = w.finish()?;
        Self::from_bytes(cursor.into_inner(), false)
    }

    /// Parses a store. With `verify`, the checksum and per-group ordering are
    /// checked too.
    pub fn from_bytes(bytes: Vec<u8>, verify: bool) -> Result<Self> {
        let (header, checksum) = StoreHeader::decode(&bytes)?;
        let expected = header.total_size()?;
        if bytes.len() as u64 != expected {
            let rs = header.record_size() as u64;
            let body = (bytes.len() as u64).saturating_sub(header.header_len() as u64);
            return Err(Error::decode(
                Some(body / rs),
                format!(
                    "file is {} bytes, header implies {expected}; first bad offset {}",
                    bytes.len(),
                    header.header_len() as u64 + body / rs * rs
                ),
            ));
        }
        let store = Self { header, checksum, bytes };
        if verify {
            let actual = store.compute_checksum();
            if actual != checksum {
                return Err(Error::Checksum { expected: checksum, actual });
            }
            for i in 0..store.num_images() {
                let n = store.samples_per_image();
                if let Some(j) = first_unsorted((0..n).map(|j| store.confidence(i, j) as f64)) {
                    return Err(Error::Integrity {
                        image: i,
                        message: format!("record {j} is more confident than record {}", j - 1),
                    });
                }
            }
        }
        Ok(store)
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(fs::read(path)?, true)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<u64> {
        let mut f = BufWriter::new(fs::File::create(path)?);
        f.write_all(&self.bytes)?;
        f.flush()?;
        Ok(self.bytes.len() as u64)
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn num_images(&self) -> u64 {
        self.header.num_images
    }

    pub fn samples_per_image(&self) -> usize {
        self.header.samples_per_image as usize
    }

    fn compute_checksum(&self) -> u64 {
        let mut h = Fnv1a::default();
        h.update(&self.bytes[self.header.header_len()..]);
        h.finish()
    }

    fn offset(&self, image: u64, index: usize) -> Result<usize> {
        if image >= self.num_images() || index >= self.samples_per_image() {
            return Err(Error::invalid(format!(
                "record ({image}, {index}) outside {} images × {} samples",
                self.num_images(),
                self.samples_per_image()
            )));
        }
        let n = image as usize * self.samples_per_image() + index;
        Ok(self.header.header_len() + n * self.header.record_size())
    }

    pub fn record_bytes(&self, image: u64, index: usize) -> Result<&[u8]> {
        let off = self.offset(image, index)?;
        Ok(&self.bytes[off..off + self.header.record_size()])
    }

    pub fn record(&self, image: u64, index: usize) -> Result<ReinforcementRecord> {
        let n = image * self.samples_per_image() as u64 + index as u64;
        decode_record(&self.header, self.record_bytes(image, index)?, n)
    }

    pub fn group(&self, image: u64) -> Result<Vec<ReinforcementRecord>> {
        (0..self.samples_per_image()).map(|j| self.record(image, j)).collect()
    }

    /// First stored probability of a record, read without a full decode.
    pub fn confidence(&self, image: u64, index: usize) -> f32 {
        let off = self.offset(image, index).expect("record index in range");
        f32::from_le_bytes(self.bytes[off + 4..off + 8].try_into().expect("4 bytes"))
    }

    /// All records in file order.
    pub fn records(&self) -> impl Iterator<Item = Result<ReinforcementRecord>> + '_ {
        let n = self.samples_per_image();
        (0..self.num_images()).flat_map(move |i| (0..n).map(move |j| self.record(i, j)))
    }
}

pub fn read_store(path: impl AsRef<Path>) -> Result<Store> {
    Store::open(path)
}

/// Streams `groups` to a file and returns the bytes written.
pub fn write_store<I>(path: impl AsRef<Path>, header: StoreHeader, groups: I) -> Result<u64>
where
    I: IntoIterator,
    I::Item: AsRef<[ReinforcementRecord]>,
{
    let mut w = StoreWriter::new(BufWriter::new(fs::File::create(path)?), header)?;
    for g in groups {
        w.write_group(g.as_ref())?;
    }
    let (mut out, n) = w.finish()?;
    out.flush()?;
    Ok(n)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub image: u64,
    pub index: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.index {
            Some(j) => write!(f, "image {} record {j}: {}", self.image, self.message),
            None => write!(f, "image {}: {}", self.image, self.message),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub records_checked: u64,
    /// Total violations found; only the first 100 are kept in `violations`.
    pub total: u64,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.total == 0
    }

    fn push(&mut self, image: u64, index: Option<usize>, message: String) {
        self.total += 1;
        if self.violations.len() < MAX_VIOLATIONS {
            self.violations.push(Violation { image, index, message });
        }
    }
}

/// Checks every record against the format invariants.
pub fn validate(store: &Store) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let k = store.header().num_classes as usize;
    let n = store.samples_per_image();
    for i in 0..store.num_images() {
        let mut prev = f64::INFINITY;
        for j in 0..n {
            rep.records_checked += 1;
            let rec = match store.record(i, j) {
                Ok(r) => r,
                Err(e) => {
                    rep.push(i, Some(j), e.to_string());
                    continue;
                }
            };
            for m in rec.probs.violations(k) {
                rep.push(i, Some(j), m);
            }
            for m in rec.descriptor.violations(Some(store.num_images())) {
                rep.push(i, Some(j), m);
            }
            let c = rec.confidence();
            if c > prev {
                rep.push(i, Some(j), format!("confidence {c} exceeds the previous record's {prev}"));
            }
            prev = c;
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::Variant;

    fn rec(flags: VariantFlags, conf: f32) -> ReinforcementRecord {
        let mut d = AugmentationDescriptor::identity(flags);
        d.crop = Rect::new(0.1, 0.2, 0.5, 0.6);
        d.flip = true;
        ReinforcementRecord {
            probs: SparseProbs::from_entries(vec![(3, conf), (1, (1.0 - conf) / 2.0)]),
            descriptor: d,
        }
    }

    #[test]
    fn record_sizes_per_block() {
        assert_eq!(record_size(10, Variant::Rrc.flags()), 97);
        assert_eq!(record_size(10, Variant::RrcRaRe.flags()), 129);
        assert_eq!(record_size(5, Variant::Rrc.flags()), 57);
        assert_eq!(record_size(10, Variant::RrcMixingRaRe.flags()), 157);
    }

    #[test]
    fn zero_images_is_header_only() {
        let h = StoreHeader::new(Variant::Rrc.flags(), 10, 2, 3, 0, "t").unwrap();
        let s = Store::build(h.clone(), Vec::<Vec<ReinforcementRecord>>::new()).unwrap();
        assert_eq!(s.as_bytes().len(), h.header_len());
        assert_eq!(h.total_size().unwrap(), 34);
    }

    #[test]
    fn header_rejects_bad_params() {
        assert!(StoreHeader::new(Variant::Rrc.flags(), 10, 0, 1, 1, "").is_err());
        assert!(StoreHeader::new(Variant::Rrc.flags(), 3, 4, 1, 1, "").is_err());
        assert!(StoreHeader::new(Variant::Rrc.flags(), 10, 2, 0, 1, "").is_err());
        assert!(total_size(u64::MAX, 400, 10, Variant::Rrc.flags(), 0).is_err());
    }

    #[test]
    fn writer_rejects_unsorted_group() {
        let f = Variant::Rrc.flags();
        let h = StoreHeader::new(f, 10, 2, 2, 2, "t").unwrap();
        let mut w = StoreWriter::new(std::io::Cursor::new(Vec::new()), h).unwrap();
        w.write_group(&[rec(f, 0.9), rec(f, 0.5)]).unwrap();
        match w.write_group(&[rec(f, 0.5), rec(f, 0.9)]) {
            Err(Error::Integrity { image: 1, .. }) => {}
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn tampered_byte_fails_checksum() {
        let f = Variant::Rrc.flags();
        let h = StoreHeader::new(f, 10, 2, 2, 2, "t").unwrap();
        let s = Store::build(h, [[rec(f, 0.9), rec(f, 0.5)], [rec(f, 0.8), rec(f, 0.7)]]).unwrap();
        let mut bytes = s.into_bytes();
        let last = bytes.len() - 3;
        bytes[last] ^= 0x40;
        assert!(matches!(Store::from_bytes(bytes.clone(), true), Err(Error::Checksum { .. })));
        assert!(Store::from_bytes(bytes, false).is_ok());
    }

    #[test]
    fn truncation_and_bad_magic() {
        let f = Variant::Rrc.flags();
        let h = StoreHeader::new(f, 10, 2, 1, 2, "t").unwrap();
        let s = Store::build(h, [[rec(f, 0.9)], [rec(f, 0.8)]]).unwrap();
        let bytes = s.into_bytes();
        let err = Store::from_bytes(bytes[..bytes.len() - 1].to_vec(), true).unwrap_err();
        assert!(matches!(err, Error::Decode { record: Some(1), .. }), "{err}");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Store::from_bytes(bad, true), Err(Error::Decode { .. })));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(Store::from_bytes(bad, true).unwrap_err().to_string().contains("version"));
    }
}
