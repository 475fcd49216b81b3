//! Raw images, labelled datasets and the packed `DIMG` file format.
//!
//! `DIMG` layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "DIMG"
//!      4     1  version (1)
//!      5     4  count
//!      9     2  height
//!     11     2  width
//!     13     1  channels (1 or 3)
//!     14     2  num_classes
//!     16     …  count × (label u16, height·width·channels raw bytes)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::rng::SeededRng;
use crate::{Error, Result};

pub const DIMG_MAGIC: &[u8; 4] = b"DIMG";
pub const DIMG_VERSION: u8 = 1;
pub const DIMG_HEADER_LEN: usize = 16;

/// Height, width and channel count of an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Dims {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.channels == 1 || self.channels == 3) {
            return Err(Error::invalid(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.height == 0 || self.width == 0 || self.height > u16::MAX as usize || self.width > u16::MAX as usize {
            return Err(Error::invalid(format!("image size {}x{} outside 1..=65535", self.height, self.width)));
        }
        Ok(())
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Row-major, channel-interleaved 8-bit image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image {
    dims: Dims,
    data: Vec<u8>,
}

impl Image {
    pub fn new(dims: Dims, data: Vec<u8>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} bytes for {dims}", dims.len()),
                actual: format!("{} bytes", data.len()),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: Dims, value: u8) -> Self {
        Self { dims, data: vec![value; dims.len()] }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn channels(&self) -> usize {
        self.dims.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[(y * self.dims.width + x) * self.dims.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: u8) {
        let w = self.dims.width;
        let ch = self.dims.channels;
        self.data[(y * w + x) * ch + c] = v;
    }
}

/// Images of uniform size with class labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledDataset {
    dims: Dims,
    num_classes: usize,
    images: Vec<Image>,
    labels: Vec<u16>,
}

impl LabeledDataset {
    pub fn new(dims: Dims, num_classes: usize, images: Vec<Image>, labels: Vec<u16>) -> Result<Self> {
        dims.validate()?;
        if num_classes == 0 || num_classes > u16::MAX as usize {
            return Err(Error::invalid(format!("num_classes {num_classes} outside 1..=65535")));
        }
        if images.len() != labels.len() {
            return Err(Error::invalid(format!("{} images but {} labels", images.len(), labels.len())));
        }
        if let Some(i) = images.iter().position(|im| im.dims() != dims) {
            return Err(Error::DimensionMismatch {
                expected: dims.to_string(),
                actual: format!("{} at image {i}", images[i].dims()),
            });
        }
        if let Some(i) = labels.iter().position(|&l| l as usize >= num_classes) {
            return Err(Error::invalid(format!("label {} at image {i} is not < num_classes {num_classes}", labels[i])));
        }
        Ok(Self { dims, num_classes, images, labels })
    }

    pub fn empty(dims: Dims, num_classes: usize) -> Result<Self> {
        Self::new(dims, num_classes, Vec::new(), Vec::new())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &Image {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    /// Sub-dataset made of the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            dims: self.dims,
            num_classes: self.num_classes,
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Serialises to `DIMG` bytes.
    pub fn to_packed_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(packed_len(self.dims, self.len()));
        out.extend_from_slice(DIMG_MAGIC);
        out.push(DIMG_VERSION);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dims.height as u16).to_le_bytes());
        out.extend_from_slice(&(self.dims.width as u16).to_le_bytes());
        out.push(self.dims.channels as u8);
        out.extend_from_slice(&(self.num_classes as u16).to_le_bytes());
        debug_assert_eq!(out.len(), DIMG_HEADER_LEN);
        for (img, &label) in self.images.iter().zip(&self.labels) {
            out.extend_from_slice(&label.to_le_bytes());
            out.extend_from_slice(img.data());
        }
        out
    }

    pub fn from_packed_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < DIMG_HEADER_LEN {
            return Err(Error::decode(None, "truncated header"));
        }
        if &bytes[0..4] != DIMG_MAGIC {
            return Err(Error::decode(None, "bad magic, expected DIMG"));
        }
        if bytes[4] != DIMG_VERSION {
            return Err(Error::decode(None, format!("unsupported version {}", bytes[4])));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]) as usize;
        let count = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let dims = Dims::new(u16_at(9), u16_at(11), bytes[13] as usize);
        let num_classes = u16_at(14);
        dims.validate().map_err(|e| Error::decode(None, format!("bad header dims: {e}")))?;
        if num_classes == 0 {
            return Err(Error::decode(None, "num_classes is 0"));
        }
        let stride = 2 + dims.len();
        let mut images = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let off = DIMG_HEADER_LEN + i * stride;
            if bytes.len() < off + stride {
                return Err(Error::decode(Some(i as u64), "truncated record"));
            }
            let label = u16::from_le_bytes([bytes[off], bytes[off + 1]]);
            if label as usize >= num_classes {
                return Err(Error::decode(Some(i as u64), format!("label {label} >= num_classes {num_classes}")));
            }
            labels.push(label);
            images.push(Image { dims, data: bytes[off + 2..off + stride].to_vec() });
        }
        let expected = packed_len(dims, count);
        if bytes.len() != expected {
            return Err(Error::decode(
                None,
                format!("{} trailing bytes after {count} records", bytes.len() - expected),
            ));
        }
        Ok(Self { dims, num_classes, images, labels })
    }
}

/// Exact `DIMG` file length for `count` images of `dims`.
pub fn packed_len(dims: Dims, count: usize) -> usize {
    DIMG_HEADER_LEN + count * (2 + dims.len())
}

pub fn load_packed(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let bytes = fs::read(path)?;
    LabeledDataset::from_packed_bytes(&bytes)
}

/// Writes `ds` as a `DIMG` file and returns the number of bytes written.
pub fn write_packed(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<u64> {
    let bytes = ds.to_packed_bytes();
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(bytes.len() as u64)
}

/// Deterministic shuffled split. The first part receives
/// `floor(train_fraction × len)` images, the second the remainder.
pub fn split(
    ds: &LabeledDataset,
    fractions: (f64, f64),
    rng: &mut SeededRng,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let (a, b) = fractions;
    for f in [a, b] {
        if !(0.0..=1.0).contains(&f) || !f.is_finite() {
            return Err(Error::invalid(format!("split fraction {f} outside [0, 1]")));
        }
    }
    if ((a + b) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions {a} + {b} do not sum to 1")));
    }
    let n = ds.len();
    // The epsilon absorbs representation error such as 0.29 × 100 = 28.999….
    let first = ((a * n as f64) + 1e-9).floor().min(n as f64) as usize;
    let perm = rng.permutation(n);
    Ok((ds.subset(&perm[..first]), ds.subset(&perm[first..])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(count: usize, dims: Dims, classes: usize, seed: u64) -> LabeledDataset {
        let mut rng = SeededRng::new(seed, 0);
        let images = (0..count)
            .map(|_| {
                let data = (0..dims.len()).map(|_| rng.below(256) as u8).collect();
                Image::new(dims, data).unwrap()
            })
            .collect();
        let labels = (0..count).map(|_| rng.below(classes) as u16).collect();
        LabeledDataset::new(dims, classes, images, labels).unwrap()
    }

    #[test]
    fn hand_assembled_file_decodes() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"DIMG");
        bytes.push(1);
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.push(1);
        bytes.extend_from_slice(&2u16.to_le_bytes());
        assert_eq!(bytes.len(), 16);
        bytes.extend_from_slice(&0u16.to_le_bytes());
        bytes.extend((0u8..16).collect::<Vec<_>>());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend((100u8..116).collect::<Vec<_>>());

        let ds = LabeledDataset::from_packed_bytes(&bytes).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dims(), Dims::new(4, 4, 1));
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.labels(), &[0, 1]);
        assert_eq!(ds.image(0).data(), (0u8..16).collect::<Vec<_>>().as_slice());
        assert_eq!(ds.image(1).get(3, 3, 0), 115);
        assert_eq!(ds.to_packed_bytes(), bytes);
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let ds = LabeledDataset::empty(Dims::new(8, 8, 3), 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.dimg");
        assert_eq!(write_packed(&ds, &p).unwrap(), 16);
        assert_eq!(load_packed(&p).unwrap(), ds);
    }

    #[test]
    fn byte_count_formula() {
        let ds = tiny(10, Dims::new(8, 8, 3), 5, 3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.dimg");
        assert_eq!(write_packed(&ds, &p).unwrap(), 1956);
        assert_eq!(load_packed(&p).unwrap(), ds);
    }

    #[test]
    fn decode_errors() {
        let ds = tiny(3, Dims::new(2, 2, 1), 4, 1);
        let mut bytes = ds.to_packed_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(LabeledDataset::from_packed_bytes(&bad), Err(Error::Decode { record: None, .. })));
        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(LabeledDataset::from_packed_bytes(truncated), Err(Error::Decode { record: Some(2), .. })));
        // label of record 1 := 4 (num_classes = 4)
        let off = 16 + 6;
        bytes[off..off + 2].copy_from_slice(&4u16.to_le_bytes());
        let err = LabeledDataset::from_packed_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Decode { record: Some(1), .. }), "{err}");
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = tiny(100, Dims::new(2, 2, 1), 3, 5);
        let (a, b) = split(&ds, (0.8, 0.2), &mut SeededRng::new(11, 0)).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));
        let (a2, b2) = split(&ds, (0.8, 0.2), &mut SeededRng::new(11, 0)).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);

        let (all, none) = split(&ds, (1.0, 0.0), &mut SeededRng::new(1, 0)).unwrap();
        assert_eq!(all.len(), 100);
        assert!(none.is_empty());

        assert!(split(&ds, (1.2, -0.2), &mut SeededRng::new(1, 0)).is_err());
        assert!(split(&ds, (0.5, 0.4), &mut SeededRng::new(1, 0)).is_err());
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        // Use distinct image contents so membership can be tracked.
        let dims = Dims::new(1, 1, 1);
        let images = (0..=255u8).map(|v| Image::new(dims, vec![v]).unwrap()).collect();
        let ds = LabeledDataset::new(dims, 1, images, vec![0; 256]).unwrap();
        for seed in 0..20 {
            let (a, b) = split(&ds, (0.3, 0.7), &mut SeededRng::new(seed, 0)).unwrap();
            let mut seen: Vec<u8> = a.images().iter().chain(b.images()).map(|im| im.data()[0]).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..=255u8).collect::<Vec<_>>());
            assert_eq!(a.len(), 76);
        }
    }

    #[test]
    fn invariants_rejected() {
        let dims = Dims::new(2, 2, 1);
        assert!(Image::new(dims, vec![0; 3]).is_err());
        assert!(Image::new(Dims::new(2, 2, 2), vec![0; 8]).is_err());
        let img = Image::filled(dims, 0);
        assert!(LabeledDataset::new(dims, 2, vec![img.clone()], vec![2]).is_err());
        assert!(LabeledDataset::new(dims, 2, vec![img], vec![]).is_err());
    }
}
