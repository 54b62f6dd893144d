//! Image and mask file I/O.
//!
//! Masks travel as 8-bit single-channel PNG or ASCII PGM (P2). Writes emit
//! {0, 255}; reads treat values ≥ 128 as foreground, so write→read round
//! trips are exact. RGB tensors quantize to 8 bits per channel on write.
//!
//! The PGM layout written here: `P2\n<w> <h>\n255\n` then one line per row
//! with space-separated values.

use std::fs;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::Tensor;

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

// ── Masks ─────────────────────────────────────────────────────────────

pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let (h, w) = (mask.height() as u32, mask.width() as u32);
    let mut img = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = if mask.get(y as usize, x as usize) { 255 } else { 0 };
            img.put_pixel(x, y, Luma([v]));
        }
    }
    img.save(path)?;
    Ok(())
}

pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path)?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => other.to_luma8(),
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let mut mask = Mask::new(h, w);
    for y in 0..h {
        for x in 0..w {
            mask.set(y, x, gray.get_pixel(x as u32, y as u32)[0] >= 128);
        }
    }
    Ok(mask)
}

pub fn write_mask_pgm(path: &Path, mask: &Mask) -> Result<()> {
    let (h, w) = (mask.height(), mask.width());
    let mut out = format!("P2\n{w} {h}\n255\n");
    for y in 0..h {
        let row: Vec<&str> = (0..w)
            .map(|x| if mask.get(y, x) { "255" } else { "0" })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_mask_pgm(path: &Path) -> Result<Mask> {
    let text = fs::read_to_string(path)?;
    let mut tokens = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(|l| l.split_whitespace());
    let magic = tokens.next().ok_or_else(|| format_err(path, "empty file"))?;
    if magic != "P2" {
        return Err(format_err(path, format!("expected P2, got {magic}")));
    }
    let mut next_num = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| format_err(path, format!("missing {what}")))?
            .parse::<usize>()
            .map_err(|_| format_err(path, format!("bad {what}")))
    };
    let w = next_num("width")?;
    let h = next_num("height")?;
    let maxval = next_num("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(format_err(path, format!("unsupported maxval {maxval}")));
    }
    let mut data = Vec::with_capacity(h * w);
    for _ in 0..h * w {
        data.push(next_num("pixel")? >= 128);
    }
    Mask::from_bools(h, w, data)
}

// ── RGB / grayscale tensors ───────────────────────────────────────────

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a `[3, H, W]` tensor with values in [0, 1] as an 8-bit RGB PNG.
pub fn write_rgb_png(path: &Path, t: &Tensor) -> Result<()> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::InvalidShape {
            op: "write_rgb_png",
            shape: s,
            detail: "[3, H, W] required".into(),
        });
    }
    let (h, w) = (s[1], s[2]);
    let data = t.data();
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                quantize(data[y * w + x]),
                quantize(data[(h + y) * w + x]),
                quantize(data[(2 * h + y) * w + x]),
            ];
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    img.save(path)?;
    Ok(())
}

/// Read an RGB PNG back to a `[3, H, W]` tensor with values v/255.
pub fn read_rgb_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let px = img.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                data[(c * h + y) * w + x] = px[c] as f64 / 255.0;
            }
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

/// Write a probability map in [0, 1] (shape `[1, H, W]` or `[H, W]`) as an
/// 8-bit grayscale PNG.
pub fn write_gray_png(path: &Path, t: &Tensor) -> Result<()> {
    let s = t.shape();
    let (h, w) = match s.as_slice() {
        [1, h, w] => (*h, *w),
        [h, w] => (*h, *w),
        _ => {
            return Err(Error::InvalidShape {
                op: "write_gray_png",
                shape: s,
                detail: "[1, H, W] or [H, W] required".into(),
            })
        }
    };
    let data = t.data();
    let mut img = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            img.put_pixel(x as u32, y as u32, Luma([quantize(data[y * w + x])]));
        }
    }
    img.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn mask_png_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask = Mask::from_fn(9, 7, |y, x| (y * 7 + x) % 3 == 0);
        write_mask_png(&path, &mask).unwrap();
        let back = read_mask_png(&path).unwrap();
        assert_eq!(back, mask);
    }

    #[test]
    fn mask_pgm_round_trip_and_golden_bytes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mask = Mask::from_fn(3, 3, |y, x| (y + x) % 2 == 0);
        write_mask_pgm(&path, &mask).unwrap();
        let bytes = fs::read(&path).unwrap();
        let golden = b"P2\n3 3\n255\n255 0 255\n0 255 0\n255 0 255\n";
        assert_eq!(bytes, golden);
        let back = read_mask_pgm(&path).unwrap();
        assert_eq!(back, mask);
    }

    #[test]
    fn all_zero_mask_decodes_to_background() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("z.png");
        let mask = Mask::new(4, 4);
        write_mask_png(&path, &mask).unwrap();
        assert!(read_mask_png(&path).unwrap().is_empty());
    }

    #[test]
    fn rgb_round_trip_is_exact_on_quantized_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.png");
        // Values already on the 1/255 grid survive exactly.
        let data: Vec<f64> = (0..3 * 4 * 4).map(|i| (i % 256) as f64 / 255.0).collect();
        let t = Tensor::from_vec(&[3, 4, 4], data.clone()).unwrap();
        write_rgb_png(&path, &t).unwrap();
        let back = read_rgb_png(&path).unwrap();
        assert_eq!(back.data(), data);
    }

    #[test]
    fn pgm_rejects_garbage() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        fs::write(&path, "P5\n2 2\n255\n....").unwrap();
        assert!(read_mask_pgm(&path).is_err());
        fs::write(&path, "P2\n2 2\n255\n1 2 3").unwrap();
        assert!(read_mask_pgm(&path).is_err());
    }
}
