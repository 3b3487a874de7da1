//! On-disk formats.
//!
//! * NUCF float images: 16-byte header (`b"NUCF"`, version byte, height and width
//!   as little-endian `u32`, three reserved zero bytes), row-major little-endian
//!   `f64` values, then validity bits packed row-major, least significant bit first.
//! * Plain-text matrices with 17 significant digits, one row per line.
//! * 8-bit binary PGM (`P5`) for viewing and for user-supplied scenes.

use std::fs;
use std::path::Path;

use crate::error::{NucError, Result};
use crate::grid::{Homography, ImageGrid, Mask};

pub const NUCF_MAGIC: &[u8; 4] = b"NUCF";
pub const NUCF_VERSION: u8 = 1;
const HEADER_LEN: usize = 16;

fn io_err(path: &Path, e: impl std::fmt::Display) -> NucError {
    NucError::Format(format!("{}: {e}", path.display()))
}

pub fn encode_nucf(image: &ImageGrid) -> Vec<u8> {
    let (h, w) = image.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * h * w + (h * w).div_ceil(8));
    out.extend_from_slice(NUCF_MAGIC);
    out.push(NUCF_VERSION);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&[0, 0, 0]);
    for v in image.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut bits = vec![0u8; (h * w).div_ceil(8)];
    for (p, &ok) in image.mask().as_slice().iter().enumerate() {
        if ok {
            bits[p / 8] |= 1 << (p % 8);
        }
    }
    out.extend_from_slice(&bits);
    out
}

pub fn decode_nucf(bytes: &[u8]) -> Result<ImageGrid> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != NUCF_MAGIC {
        return Err(NucError::Format("missing NUCF header".into()));
    }
    if bytes[4] != NUCF_VERSION {
        return Err(NucError::Format(format!("unsupported NUCF version {}", bytes[4])));
    }
    let h = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
    let n = h
        .checked_mul(w)
        .ok_or_else(|| NucError::Format("NUCF dimensions overflow".into()))?;
    let expected = HEADER_LEN + 8 * n + n.div_ceil(8);
    if bytes.len() != expected {
        return Err(NucError::Format(format!(
            "NUCF {h}x{w} needs {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..HEADER_LEN + 8 * n]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let packed = &bytes[HEADER_LEN + 8 * n..];
    let bits = (0..n).map(|p| packed[p / 8] >> (p % 8) & 1 == 1).collect();
    ImageGrid::with_mask(values, Mask::from_vec(h, w, bits)?)
}

pub fn write_nucf(path: &Path, image: &ImageGrid) -> Result<()> {
    fs::write(path, encode_nucf(image)).map_err(|e| io_err(path, e))
}

pub fn read_nucf(path: &Path) -> Result<ImageGrid> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_nucf(&bytes).map_err(|e| io_err(path, e))
}

/// Masks are stored as NUCF images holding 1.0 where set.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let values = mask.as_slice().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    write_nucf(path, &ImageGrid::from_vec(mask.height(), mask.width(), values)?)
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = read_nucf(path)?;
    let bits = img.values().iter().map(|&v| v != 0.0).collect();
    Mask::from_vec(img.height(), img.width(), bits)
}

/// Rows of numbers as text, 17 significant digits each.
pub fn format_matrix(rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|e| NucError::Format(format!("bad number '{tok}': {e}")))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    if let Some(first) = rows.first() {
        if rows.iter().any(|r| r.len() != first.len()) {
            return Err(NucError::Format("ragged matrix".into()));
        }
    }
    Ok(rows)
}

pub fn write_homography(path: &Path, h: &Homography) -> Result<()> {
    let rows: Vec<Vec<f64>> = h.rows().iter().map(|r| r.to_vec()).collect();
    fs::write(path, format_matrix(&rows)).map_err(|e| io_err(path, e))
}

pub fn read_homography(path: &Path) -> Result<Homography> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let rows = parse_matrix(&text).map_err(|e| io_err(path, e))?;
    if rows.len() != 3 || rows[0].len() != 3 {
        return Err(io_err(path, "homography must be 3x3"));
    }
    Homography::from_rows([
        [rows[0][0], rows[0][1], rows[0][2]],
        [rows[1][0], rows[1][1], rows[1][2]],
        [rows[2][0], rows[2][1], rows[2][2]],
    ])
}

/// A fully valid field (gain or offset map) as a text matrix.
pub fn write_field(path: &Path, field: &ImageGrid) -> Result<()> {
    let rows: Vec<Vec<f64>> = field.values().chunks(field.width()).map(|r| r.to_vec()).collect();
    fs::write(path, format_matrix(&rows)).map_err(|e| io_err(path, e))
}

pub fn read_field(path: &Path) -> Result<ImageGrid> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let rows = parse_matrix(&text).map_err(|e| io_err(path, e))?;
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    ImageGrid::from_vec(h, w, rows.into_iter().flatten().collect()).map_err(|e| io_err(path, e))
}

pub fn encode_pgm(height: usize, width: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Reads an 8-bit binary PGM as gray values 0..=255.
pub fn decode_pgm(bytes: &[u8]) -> Result<ImageGrid> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(NucError::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(NucError::Format(format!("unsupported PGM magic '{}'", fields[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| NucError::Format(format!("bad PGM header field '{s}': {e}")))
    };
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(NucError::Format(format!(
            "only 8-bit PGM is supported (maxval {maxval})"
        )));
    }
    let data = bytes
        .get(pos..pos + h * w)
        .ok_or_else(|| NucError::Format("truncated PGM data".into()))?;
    ImageGrid::from_vec(h, w, data.iter().map(|&b| b as f64).collect())
}

pub fn read_pgm(path: &Path) -> Result<ImageGrid> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_pgm(&bytes).map_err(|e| io_err(path, e))
}

/// Reads a scene from NUCF or PGM, chosen by magic bytes.
pub fn read_scene(path: &Path) -> Result<ImageGrid> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.starts_with(NUCF_MAGIC) {
        decode_nucf(&bytes)
    } else {
        decode_pgm(&bytes)
    }
    .map_err(|e| io_err(path, e))
}

/// Signed error map: mid-gray is zero, ±127 steps reach the largest absolute
/// error, invalid pixels are white.
pub fn difference_pgm(truth: &ImageGrid, estimate: &ImageGrid, valid: &Mask) -> Result<Vec<u8>> {
    if truth.dims() != estimate.dims() || truth.dims() != valid.dims() {
        return Err(NucError::Evaluation("difference map inputs differ in size".into()));
    }
    let n = truth.len();
    let diff: Vec<Option<f64>> = (0..n)
        .map(|p| valid.as_slice()[p].then(|| estimate.values()[p] - truth.values()[p]))
        .collect();
    let peak = diff.iter().flatten().fold(0.0f64, |m, e| m.max(e.abs()));
    let pixels: Vec<u8> = diff
        .iter()
        .map(|e| match e {
            None => 255,
            Some(e) if peak > 0.0 => (128.0 + 127.0 * e / peak).round().clamp(0.0, 255.0) as u8,
            Some(_) => 128,
        })
        .collect();
    Ok(encode_pgm(truth.height(), truth.width(), &pixels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nucf_round_trip() {
        let mut mask = Mask::filled(3, 5, true);
        mask.set(1, 2, false);
        let img = ImageGrid::with_mask((0..15).map(|v| v as f64 * 0.1 - 0.3).collect(), mask).unwrap();
        let bytes = encode_nucf(&img);
        assert_eq!(&bytes[..4], b"NUCF");
        assert_eq!(bytes.len(), 16 + 15 * 8 + 2);
        assert_eq!(decode_nucf(&bytes).unwrap(), img);
        assert!(decode_nucf(&bytes[..20]).is_err());
    }

    #[test]
    fn matrix_text_is_exact() {
        let rows = vec![vec![0.1, -1.0 / 3.0], vec![1e-300, 123456.789]];
        assert_eq!(parse_matrix(&format_matrix(&rows)).unwrap(), rows);
        assert!(parse_matrix("1 2\n3\n").is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let px: Vec<u8> = (0..12).map(|v| v * 20).collect();
        let img = decode_pgm(&encode_pgm(3, 4, &px)).unwrap();
        assert_eq!(img.dims(), (3, 4));
        assert_eq!(img.get(2, 3), 220.0);
        let commented = b"P5\n# c\n3 3\n255\n\x00\x01\x02\x03\x04\x05\x06\x07\x08";
        assert_eq!(decode_pgm(commented).unwrap().get(1, 1), 4.0);
    }
}
