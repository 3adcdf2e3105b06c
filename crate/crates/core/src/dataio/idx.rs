//! IDX files (the MNIST container): big-endian header, unsigned-byte payload.
//!
//! Images: magic `0x00000803`, then `count`, `rows`, `cols` as u32, then
//! `count * rows * cols` bytes. Labels: magic `0x00000801`, `count`, then
//! `count` bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Shape};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, offset: usize, message: String) -> Error {
        Error::Parse {
            path: self.path.to_owned(),
            offset: offset as u64,
            message,
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let b = self.bytes.get(self.pos..end).ok_or_else(|| {
            self.err(
                self.bytes.len(),
                format!("truncated header: missing {what}"),
            )
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.saturating_add(n);
        if end > self.bytes.len() {
            return Err(self.err(
                self.bytes.len(),
                format!(
                    "truncated {what}: need {n} bytes from offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            ));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let m = self.u32("magic number")?;
        if m != expected {
            return Err(self.err(
                0,
                format!("magic number 0x{m:08x}, expected 0x{expected:08x}"),
            ));
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<Vec<ImageTensor>> {
    let mut c = Cursor {
        path,
        bytes,
        pos: 0,
    };
    c.magic(IMAGES_MAGIC)?;
    let count = c.u32("image count")? as usize;
    let rows = c.u32("row count")? as usize;
    let cols = c.u32("column count")? as usize;
    if rows == 0 || cols == 0 {
        return Err(c.err(8, format!("degenerate image size {rows}x{cols}")));
    }
    let shape = Shape::new(rows, cols, 1);
    let data = c.take(count * shape.len(), "image data")?;
    data.chunks_exact(shape.len())
        .map(|px| ImageTensor::from_u8(shape, px))
        .collect()
}

pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>> {
    let mut c = Cursor {
        path,
        bytes,
        pos: 0,
    };
    c.magic(LABELS_MAGIC)?;
    let count = c.u32("label count")? as usize;
    Ok(c.take(count, "label data")?
        .iter()
        .map(|&b| usize::from(b))
        .collect())
}

pub fn read_images(path: &Path) -> Result<Vec<ImageTensor>> {
    parse_images(path, &read(path)?)
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    parse_labels(path, &read(path)?)
}

/// Encodes single-channel images as an IDX images file.
pub fn encode_images(images: &[ImageTensor]) -> Result<Vec<u8>> {
    let shape = images
        .first()
        .map(ImageTensor::shape)
        .unwrap_or(Shape::new(1, 1, 1));
    if shape.channels != 1 || images.iter().any(|i| i.shape() != shape) {
        return Err(Error::Input(
            "IDX images must share one single-channel shape".into(),
        ));
    }
    let mut out = Vec::with_capacity(16 + images.len() * shape.len());
    for v in [
        IMAGES_MAGIC,
        images.len() as u32,
        shape.height as u32,
        shape.width as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        out.extend(img.to_u8());
    }
    Ok(out)
}

pub fn encode_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        out.push(
            u8::try_from(l).map_err(|_| Error::Input(format!("label {l} does not fit a byte")))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_file_parses() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 2];
        bytes.extend([0, 255, 51, 102]);
        let imgs = parse_images(Path::new("x"), &bytes).unwrap();
        assert_eq!(imgs.len(), 2);
        assert_eq!(imgs[0].shape(), Shape::new(1, 2, 1));
        assert_eq!(imgs[0].pixels(), &[0.0, 1.0]);
        assert_eq!(imgs[1].pixels(), &[0.2, 0.4]);

        let labels = parse_labels(Path::new("y"), &[0, 0, 8, 1, 0, 0, 0, 3, 7, 0, 9]).unwrap();
        assert_eq!(labels, vec![7, 0, 9]);
    }

    #[test]
    fn wrong_magic_names_offset_zero() {
        let err = parse_images(Path::new("x"), &[0, 0, 8, 1, 0, 0, 0, 0]).unwrap_err();
        match err {
            Error::Parse {
                offset, message, ..
            } => {
                assert_eq!(offset, 0);
                assert!(message.contains("0x00000801"), "{message}");
            }
            e => panic!("{e}"),
        }
        assert!(matches!(
            parse_labels(Path::new("y"), &[0, 0, 8, 3, 0, 0, 0, 0]),
            Err(Error::Parse { offset: 0, .. })
        ));
    }

    #[test]
    fn truncation_is_reported_with_offset() {
        let bytes = [0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3];
        match parse_images(Path::new("x"), &bytes).unwrap_err() {
            Error::Parse {
                offset, message, ..
            } => {
                assert_eq!(offset, 19);
                assert!(message.contains("truncated"));
            }
            e => panic!("{e}"),
        }
        assert!(matches!(
            parse_labels(Path::new("y"), &[0, 0, 8, 1, 0]),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn encode_parse_round_trip() {
        let imgs: Vec<_> = (0..3u8)
            .map(|i| {
                ImageTensor::from_u8(Shape::new(2, 3, 1), &[i, 2 * i, 3 * i, 4, 5, 255]).unwrap()
            })
            .collect();
        let bytes = encode_images(&imgs).unwrap();
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(parse_images(Path::new("x"), &bytes).unwrap(), imgs);
        let lb = encode_labels(&[1, 2, 3]).unwrap();
        assert_eq!(parse_labels(Path::new("y"), &lb).unwrap(), vec![1, 2, 3]);
    }
}
