//! Portable float map: `PF` header, little-endian (negative scale), rows
//! stored bottom-to-top.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::RgbImage;

pub fn encode(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("PF\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    out.reserve(img.data.len() * 4);
    for row in (0..img.height).rev() {
        let start = row * img.width * 3;
        for v in &img.data[start..start + img.width * 3] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    // header: magic, width, height, scale separated by whitespace
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PFM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::format(path, "non-ASCII header"))?);
    }
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    let channels = match fields[0] {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::format(path, format!("unsupported PFM magic {other:?}"))),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::format(path, format!("bad dimension {s:?}")));
    let width = parse(fields[1])?;
    let height = parse(fields[2])?;
    let scale: f32 = fields[3]
        .parse()
        .map_err(|_| Error::format(path, format!("bad scale {:?}", fields[3])))?;
    if scale == 0.0 {
        return Err(Error::format(path, "zero scale"));
    }
    let little = scale < 0.0;
    let n = width * height * channels;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() != n * 4 {
        return Err(Error::format(path, format!("expected {} payload bytes, found {}", n * 4, payload.len())));
    }
    let mut img = RgbImage::new(width, height);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let file_row = i / (width * channels);
        let rest = i % (width * channels);
        let row = height - 1 - file_row;
        if channels == 3 {
            img.data[row * width * 3 + rest] = v;
        } else {
            let base = (row * width + rest) * 3;
            img.data[base..base + 3].fill(v);
        }
    }
    Ok(img)
}

pub fn write(path: &Path, img: &RgbImage) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(img)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_and_row_order() {
        let img = RgbImage::from_data(1, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bytes = encode(&img);
        assert!(bytes.starts_with(b"PF\n1 2\n-1.0\n"));
        // bottom row first
        let first = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
        assert_eq!(first, 4.0);
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut bytes = encode(&RgbImage::new(2, 2));
        bytes.pop();
        assert!(decode(&bytes, Path::new("x.pfm")).is_err());
        assert!(decode(b"P6\n1 1\n255\n", Path::new("x.pfm")).is_err());
    }

    #[test]
    fn reads_big_endian_and_grayscale() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&2.5f32.to_be_bytes());
        let img = decode(&bytes, Path::new("g.pfm")).unwrap();
        assert_eq!(img.data, vec![2.5, 2.5, 2.5]);
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
            let mut s = seed;
            let data: Vec<f32> = (0..w * h * 3).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f32::from_bits((s >> 33) as u32 & 0x7f7f_ffff)
            }).collect();
            let img = RgbImage::from_data(w, h, data).unwrap();
            let bytes = encode(&img);
            let back = decode(&bytes, Path::new("r.pfm")).unwrap();
            let a: Vec<u32> = img.data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(encode(&back), bytes);
        }
    }
}
