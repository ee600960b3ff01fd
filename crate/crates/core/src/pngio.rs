//! PNG ingestion and export: 8-bit images, single-channel class-index label
//! maps, 16-bit id maps, and 1-bit masks.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::raster::{Image, LabelMap};
use crate::scalar::Real;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::io(path.display().to_string(), e)
}

/// Loads an 8-bit PNG as a 3-channel image with values in `[0, 1]`.
/// Grayscale files are expanded to three equal channels.
pub fn load_image<R: Real>(path: &Path) -> Result<Image<R>> {
    let img = image::open(path)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = Vec::with_capacity(h * w * 3);
    for px in img.pixels() {
        for c in 0..3 {
            data.push(R::from_f64_lossy(px[c] as f64 / 255.0));
        }
    }
    Image::from_vec(h, w, 3, data)
}

/// Writes a raster as an 8-bit PNG, clamping to `[0, 1]`. One- and
/// three-channel rasters are supported.
pub fn save_image<R: Real>(path: &Path, img: &Image<R>) -> Result<()> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let to_u8 = |v: R| (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8;
    match c {
        1 => {
            let mut out = GrayImage::new(w as u32, h as u32);
            for y in 0..h {
                for x in 0..w {
                    out.put_pixel(x as u32, y as u32, Luma([to_u8(img.get(y, x, 0))]));
                }
            }
            out.save(path).map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))
        }
        3 => {
            let mut out = RgbImage::new(w as u32, h as u32);
            for y in 0..h {
                for x in 0..w {
                    let p = img.pixel(y, x);
                    out.put_pixel(
                        x as u32,
                        y as u32,
                        Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])]),
                    );
                }
            }
            out.save(path).map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))
        }
        _ => Err(Error::InvalidInput(format!(
            "{}: cannot encode {c}-channel raster as PNG",
            path.display()
        ))),
    }
}

/// Loads an 8-bit single-channel PNG of class indices.
pub fn load_label_map(path: &Path, classes: usize) -> Result<LabelMap> {
    let img = image::open(path)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    LabelMap::from_vec(h, w, classes, img.into_raw()).map_err(|e| {
        Error::Ingestion(format!("{}: {e}", path.display()))
    })
}

/// Writes class indices as an 8-bit single-channel PNG.
pub fn save_label_map(path: &Path, labels: &LabelMap) -> Result<()> {
    let img = GrayImage::from_raw(
        labels.width() as u32,
        labels.height() as u32,
        labels.data().to_vec(),
    )
    .expect("label buffer length");
    img.save(path).map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))
}

/// Fixed palette for colorized predictions: class 0 is dark gray, the rest
/// cycle through saturated hues so visual diffs stay stable across runs.
pub fn class_color(class: usize) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 12] = [
        [64, 64, 64],
        [230, 25, 75],
        [60, 180, 75],
        [0, 130, 200],
        [255, 225, 25],
        [145, 30, 180],
        [70, 240, 240],
        [245, 130, 48],
        [240, 50, 230],
        [0, 128, 128],
        [170, 110, 40],
        [128, 0, 0],
    ];
    PALETTE[class % PALETTE.len()]
}

/// Writes labels as a colorized RGB PNG using [`class_color`].
pub fn save_label_color(path: &Path, labels: &LabelMap) -> Result<()> {
    let (h, w) = (labels.height(), labels.width());
    let mut out = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            out.put_pixel(x as u32, y as u32, Rgb(class_color(labels.get(y, x))));
        }
    }
    out.save(path).map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))
}

/// Writes a `u16` raster (superpixel ids) as a 16-bit grayscale PNG.
pub fn save_gray16(path: &Path, h: usize, w: usize, values: &[u16]) -> Result<()> {
    if values.len() != h * w {
        return Err(Error::Shape(format!("gray16 buffer length {} != {h}x{w}", values.len())));
    }
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, values.to_vec()).expect("gray16 buffer length");
    img.save(path).map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))
}

/// Writes a boolean raster as a true 1-bit PNG (bit set = white).
pub fn save_bitmask(path: &Path, h: usize, w: usize, bits: &[bool]) -> Result<()> {
    if bits.len() != h * w {
        return Err(Error::Shape(format!("bitmask buffer length {} != {h}x{w}", bits.len())));
    }
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::One);
    let mut writer =
        encoder.write_header().map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    let row_bytes = w.div_ceil(8);
    let mut packed = vec![0u8; row_bytes * h];
    for y in 0..h {
        for x in 0..w {
            if bits[y * w + x] {
                packed[y * row_bytes + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    writer
        .write_image_data(&packed)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))
}

/// Reads a 1-bit (or any grayscale) PNG back as a boolean raster.
pub fn load_bitmask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let img = image::open(path)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((h, w, img.into_raw().into_iter().map(|v| v > 0).collect()))
}

/// PNG stems (file names without extension) in a directory, sorted.
pub fn png_stems(dir: &Path) -> Result<Vec<String>> {
    let mut stems = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let path = entry.path();
        if path.extension().map(|e| e == "png").unwrap_or(false) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

/// `<dir>/<stem>.png`
pub fn stem_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.png"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_round_trip_quantizes_to_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = Image::from_vec(2, 2, 3, (0..12).map(|i| i as f64 / 12.0).collect()).unwrap();
        save_image(&path, &img).unwrap();
        let back = load_image::<f64>(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-9);
        }
    }

    #[test]
    fn label_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.png");
        let labels = LabelMap::from_vec(2, 3, 4, vec![0, 1, 2, 3, 1, 0]).unwrap();
        save_label_map(&path, &labels).unwrap();
        assert_eq!(load_label_map(&path, 4).unwrap(), labels);
    }

    #[test]
    fn label_load_rejects_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.png");
        let labels = LabelMap::from_vec(1, 2, 6, vec![0, 5]).unwrap();
        save_label_map(&path, &labels).unwrap();
        assert!(load_label_map(&path, 3).is_err());
    }

    #[test]
    fn bitmask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let bits: Vec<bool> = (0..11 * 5).map(|i| i % 3 == 0).collect();
        save_bitmask(&path, 5, 11, &bits).unwrap();
        let (h, w, back) = load_bitmask(&path).unwrap();
        assert_eq!((h, w), (5, 11));
        assert_eq!(back, bits);
    }

    #[test]
    fn stems_are_sorted() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.png", "a.png", "c.txt"] {
            std::fs::write(dir.path().join(name), b"x").unwrap();
        }
        assert_eq!(png_stems(dir.path()).unwrap(), vec!["a".to_string(), "b".to_string()]);
    }
}
