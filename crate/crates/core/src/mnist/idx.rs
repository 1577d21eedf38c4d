//! IDX files: big-endian headers, magic `0x00000803` for `u8` image tensors
//! and `0x00000801` for `u8` label vectors. Gzip-compressed files are
//! detected by their header and decompressed transparently.

use std::io::Read;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use flate2::read::GzDecoder;

use super::MnistError;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Raw grayscale images, row-major, one byte per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let len = self.rows * self.cols;
        &self.pixels[i * len..(i + 1) * len]
    }

    /// Image `i` scaled to `[0, 1]`.
    pub fn image_f32(&self, i: usize) -> Vec<f32> {
        self.image(i).iter().map(|&b| b as f32 / 255.0).collect()
    }
}

fn maybe_gunzip(bytes: Vec<u8>) -> Result<Vec<u8>, MnistError> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&bytes[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

pub fn parse_images(bytes: Vec<u8>) -> Result<IdxImages, MnistError> {
    let bytes = maybe_gunzip(bytes)?;
    let mut r = &bytes[..];
    let magic = r.read_u32::<BigEndian>()?;
    if magic != IMAGE_MAGIC {
        return Err(MnistError::BadMagic { expected: IMAGE_MAGIC, found: magic });
    }
    let count = r.read_u32::<BigEndian>()? as usize;
    let rows = r.read_u32::<BigEndian>()? as usize;
    let cols = r.read_u32::<BigEndian>()? as usize;
    let len = count * rows * cols;
    if r.len() < len {
        return Err(MnistError::Truncated { expected: len, found: r.len() });
    }
    Ok(IdxImages { count, rows, cols, pixels: r[..len].to_vec() })
}

pub fn parse_labels(bytes: Vec<u8>) -> Result<Vec<u8>, MnistError> {
    let bytes = maybe_gunzip(bytes)?;
    let mut r = &bytes[..];
    let magic = r.read_u32::<BigEndian>()?;
    if magic != LABEL_MAGIC {
        return Err(MnistError::BadMagic { expected: LABEL_MAGIC, found: magic });
    }
    let count = r.read_u32::<BigEndian>()? as usize;
    if r.len() < count {
        return Err(MnistError::Truncated { expected: count, found: r.len() });
    }
    Ok(r[..count].to_vec())
}

pub fn read_images(path: &Path) -> Result<IdxImages, MnistError> {
    parse_images(std::fs::read(path)?)
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>, MnistError> {
    parse_labels(std::fs::read(path)?)
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.write_u32::<BigEndian>(v).expect("vec write");
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.write_u32::<BigEndian>(LABEL_MAGIC).expect("vec write");
    out.write_u32::<BigEndian>(labels.len() as u32).expect("vec write");
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use std::io::Write;

    #[test]
    fn parses_hand_built_header() {
        let bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 255, 128, 7];
        let imgs = parse_images(bytes).unwrap();
        assert_eq!((imgs.count, imgs.rows, imgs.cols), (2, 1, 2));
        assert_eq!(imgs.image(1), &[128, 7]);
        assert_eq!(imgs.image_f32(0), vec![0.0, 1.0]);
        let labels = parse_labels(vec![0, 0, 8, 1, 0, 0, 0, 3, 3, 4, 9]).unwrap();
        assert_eq!(labels, vec![3, 4, 9]);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        assert!(matches!(
            parse_images(vec![0, 0, 8, 1, 0, 0, 0, 0]),
            Err(MnistError::BadMagic { expected: IMAGE_MAGIC, found: LABEL_MAGIC })
        ));
        assert!(matches!(
            parse_labels(vec![0, 0, 8, 1, 0, 0, 0, 5, 1]),
            Err(MnistError::Truncated { expected: 5, found: 1 })
        ));
    }

    #[test]
    fn gzip_round_trip() {
        let imgs = IdxImages { count: 1, rows: 2, cols: 2, pixels: vec![1, 2, 3, 4] };
        let mut gz = GzEncoder::new(Vec::new(), Compression::default());
        gz.write_all(&encode_images(&imgs)).unwrap();
        assert_eq!(parse_images(gz.finish().unwrap()).unwrap(), imgs);
        assert_eq!(parse_labels(encode_labels(&[5, 6])).unwrap(), vec![5, 6]);
    }
}
