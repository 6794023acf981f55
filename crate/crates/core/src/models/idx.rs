//! IDX ingestion (the MNIST container format): big-endian `u32` magic, then
//! big-endian `u32` dimension sizes, then unsigned bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::models::Dataset;
use crate::scalar::Scalar;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx(format!("truncated {what}: header ends at byte {}", bytes.len())))
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let magic = read_u32(bytes, 0, what)?;
    if magic != expected {
        return Err(Error::Idx(format!(
            "magic mismatch in {what}: expected {expected:#010x}, found {magic:#010x}"
        )));
    }
    Ok(())
}

/// Returns `(count, rows, cols, pixels)` with pixels as raw bytes.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    check_magic(bytes, IMAGES_MAGIC, "images file")?;
    let n = read_u32(bytes, 4, "images file")? as usize;
    let rows = read_u32(bytes, 8, "images file")? as usize;
    let cols = read_u32(bytes, 12, "images file")? as usize;
    let need = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Idx(format!(
            "truncated images file: expected {need} pixel bytes, found {}",
            body.len()
        )));
    }
    Ok((n, rows, cols, &body[..need]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    check_magic(bytes, LABELS_MAGIC, "labels file")?;
    let n = read_u32(bytes, 4, "labels file")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Idx(format!(
            "truncated labels file: expected {n} label bytes, found {}",
            body.len()
        )));
    }
    Ok(&body[..n])
}

/// First `limit` image/label pairs, pixels scaled to `[0, 1]`, one-hot over
/// at least 10 classes.
pub fn load_idx<T: Scalar>(images_path: &Path, labels_path: &Path, limit: usize) -> Result<Dataset<T>> {
    let image_bytes = std::fs::read(images_path)?;
    let label_bytes = std::fs::read(labels_path)?;
    dataset_from_idx(&image_bytes, &label_bytes, limit)
}

pub(crate) fn dataset_from_idx<T: Scalar>(image_bytes: &[u8], label_bytes: &[u8], limit: usize) -> Result<Dataset<T>> {
    let (n, rows, cols, pixels) = parse_idx_images(image_bytes)?;
    let labels = parse_idx_labels(label_bytes)?;
    if labels.len() != n {
        return Err(Error::Idx(format!(
            "count mismatch: {n} images but {} labels",
            labels.len()
        )));
    }
    let take = limit.min(n);
    let pixel_count = rows * cols;
    let scale = T::one() / T::lit(255.0);
    let inputs = (0..take)
        .map(|i| {
            pixels[i * pixel_count..(i + 1) * pixel_count]
                .iter()
                .map(|&p| T::lit(f64::from(p)) * scale)
                .collect()
        })
        .collect();
    let labels: Vec<usize> = labels[..take].iter().map(|&l| usize::from(l)).collect();
    let classes = labels.iter().max().map_or(10, |&m| (m + 1).max(10));
    Dataset::new(inputs, labels, classes)
}
