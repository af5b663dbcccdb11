//! 8-bit PNG I/O. Values are written as-is (display-encoded), clamped to
//! `[0, 1]` and rounded.

use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::image::quantize;
use crate::io::RgbImage;

pub fn write(path: &Path, img: &RgbImage) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = ::png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(::png::ColorType::Rgb);
    enc.set_depth(::png::BitDepth::Eight);
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    let mut writer = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::format(path, e.to_string()))?;
    writer.finish().map_err(|e| Error::format(path, e.to_string()))
}

pub fn read(path: &Path) -> Result<RgbImage> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = ::png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(::png::Transformations::EXPAND | ::png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        ::png::ColorType::Grayscale => 1,
        ::png::ColorType::GrayscaleAlpha => 2,
        ::png::ColorType::Rgb => 3,
        ::png::ColorType::Rgba => 4,
        ::png::ColorType::Indexed => return Err(Error::format(path, "unexpanded palette image")),
    };
    let mut img = RgbImage::new(w, h);
    for i in 0..w * h {
        let px = &buf[i * channels..(i + 1) * channels];
        let rgb = if channels < 3 { [px[0]; 3] } else { [px[0], px[1], px[2]] };
        for c in 0..3 {
            img.data[i * 3 + c] = rgb[c] as f32 / 255.0;
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantized_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = RgbImage::from_data(2, 1, vec![0.0, 0.5, 1.2, 0.25, -1.0, 0.999]).unwrap();
        write(&path, &img).unwrap();
        let back = read(&path).unwrap();
        assert_eq!(back, img.quantized_u8());
        // stable once quantized
        write(&path, &back).unwrap();
        assert_eq!(read(&path).unwrap(), back);
    }
}
