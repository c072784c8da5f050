//! The `LDWR` binary descriptor file. All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "LDWR"
//! 4       4     u32 format version (1)
//! 8       4     u32 channels C
//! 12      4     u32 height H
//! 16      4     u32 width W
//! 20      4     u32 sample count
//! 24      4     u32 class count
//! 28      ...   class table: per class, u32 byte length + UTF-8 name
//! ...     ...   records: per sample, u32 class index, u64 sample id,
//!               C*H*W f32 values in channel-major (c, h, w) order
//! ```

use std::path::Path;

use crate::descriptor::{ClassId, DescriptorSet, LabeledSample};
use crate::episode::DescriptorDataset;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LDWR";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;
pub const RECORD_HEADER_LEN: usize = 12;

/// Exact encoded size of a dataset.
pub fn encoded_len(ds: &DescriptorDataset) -> usize {
    HEADER_LEN
        + ds.classes.iter().map(|c| 4 + c.len()).sum::<usize>()
        + ds.samples.len() * (RECORD_HEADER_LEN + 4 * ds.channels * ds.height * ds.width)
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidData(format!("{what} {v} does not fit in u32")))
}

pub fn encode_dataset(ds: &DescriptorDataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let mut out = Vec::with_capacity(encoded_len(ds));
    out.extend_from_slice(MAGIC);
    for v in [
        FORMAT_VERSION,
        to_u32(ds.channels, "channel count")?,
        to_u32(ds.height, "height")?,
        to_u32(ds.width, "width")?,
        to_u32(ds.samples.len(), "sample count")?,
        to_u32(ds.classes.len(), "class count")?,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for name in &ds.classes {
        out.extend_from_slice(&to_u32(name.len(), "class name length")?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for s in &ds.samples {
        out.extend_from_slice(&s.label.0.to_le_bytes());
        out.extend_from_slice(&s.sample_id.to_le_bytes());
        for v in s.descriptors.to_chw() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    debug_assert_eq!(out.len(), encoded_len(ds));
    Ok(out)
}

pub fn write_dataset(ds: &DescriptorDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_dataset(ds)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<DescriptorDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes, path)
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn error(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.offset + n;
        if end > self.bytes.len() {
            return Err(self.error(
                self.offset,
                format!(
                    "truncated {what}: expected at least {end} bytes, file has {}",
                    self.bytes.len()
                ),
            ));
        }
        let s = &self.bytes[self.offset..end];
        self.offset = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses and fully validates an encoded dataset. `path` is used in errors only.
pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<DescriptorDataset> {
    let mut r = Reader {
        bytes,
        offset: 0,
        path,
    };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(r.error(0, format!("bad magic {magic:?}, expected \"LDWR\"")));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(r.error(
            4,
            format!("unsupported format version {version}, expected {FORMAT_VERSION}"),
        ));
    }
    let channels = r.u32("header")? as usize;
    let height = r.u32("header")? as usize;
    let width = r.u32("header")? as usize;
    let sample_count = r.u32("header")? as usize;
    let class_count = r.u32("header")? as usize;
    if channels == 0 || height == 0 || width == 0 {
        return Err(r.error(
            8,
            format!("descriptor shape must be positive, got C={channels} H={height} W={width}"),
        ));
    }
    if class_count == 0 {
        return Err(r.error(24, "empty class table"));
    }

    let mut classes = Vec::with_capacity(class_count.min(1 << 16));
    for _ in 0..class_count {
        let len = r.u32("class name length")? as usize;
        let at = r.offset;
        let raw = r.take(len, "class name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|e| r.error(at, format!("class name is not UTF-8: {e}")))?;
        classes.push(name.to_owned());
    }

    let values = channels * height * width;
    let record_len = RECORD_HEADER_LEN + 4 * values;
    let expected = r.offset + sample_count * record_len;
    if bytes.len() != expected {
        let what = if bytes.len() < expected {
            "truncated file"
        } else {
            "trailing bytes"
        };
        return Err(r.error(
            bytes.len().min(expected),
            format!(
                "{what}: expected {expected} bytes for {sample_count} records, found {}",
                bytes.len()
            ),
        ));
    }

    let mut samples = Vec::with_capacity(sample_count);
    let mut chw = vec![0.0f32; values];
    for record in 0..sample_count {
        let at = r.offset;
        let class = r.u32("record")?;
        if class as usize >= class_count {
            return Err(r.error(
                at,
                format!("record {record} has class index {class}, table has {class_count}"),
            ));
        }
        let sample_id = r.u64("record")?;
        let start = r.offset;
        let raw = r.take(4 * values, "record values")?;
        for (i, (dst, chunk)) in chw.iter_mut().zip(raw.chunks_exact(4)).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                let n = height * width;
                return Err(r.error(
                    start + 4 * i,
                    format!(
                        "non-finite value {v} in sample {sample_id} (record {record}) at channel {}, position {}",
                        i / n,
                        i % n
                    ),
                ));
            }
            *dst = v;
        }
        let descriptors = DescriptorSet::from_chw(channels, height, width, &chw)?;
        samples.push(LabeledSample::new(descriptors, ClassId(class), sample_id));
    }

    Ok(DescriptorDataset {
        classes,
        samples,
        channels,
        height,
        width,
        source: path.display().to_string(),
    })
}
