//! File IO: PNG images (8-bit, `round(255*v)`), background loading with
//! center-crop + nearest rescale, and small helpers shared by the commands.

use std::fs;
use std::io;
use std::path::Path;

use crate::error::CliError;

/// Write a row-major RGB image as an 8-bit PNG.
pub fn write_rgb_png(path: &Path, pixels: &[[f64; 3]], width: usize, height: usize) -> Result<(), CliError> {
    if pixels.len() != width * height {
        return Err(CliError::Config(format!(
            "png writer: {} pixels for {width}x{height}",
            pixels.len()
        )));
    }
    let mut raw = Vec::with_capacity(pixels.len() * 3);
    for px in pixels {
        for &ch in px {
            raw.push((ch.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let file = fs::File::create(path)?;
    let mut encoder = png::Encoder::new(io::BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(png_err)?;
    writer.write_image_data(&raw).map_err(png_err)?;
    Ok(())
}

/// Write a binary mask as an 8-bit grayscale PNG (255 inside, 0 outside).
pub fn write_mask_png(path: &Path, mask: &[bool], width: usize, height: usize) -> Result<(), CliError> {
    let raw: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    if raw.len() != width * height {
        return Err(CliError::Config(format!(
            "png writer: {} mask bits for {width}x{height}",
            raw.len()
        )));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let file = fs::File::create(path)?;
    let mut encoder = png::Encoder::new(io::BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(png_err)?;
    writer.write_image_data(&raw).map_err(png_err)?;
    Ok(())
}

/// Decode a PNG into row-major RGB in [0,1]; grayscale expands to RGB,
/// alpha is dropped.
pub fn read_rgb_png(path: &Path) -> Result<(usize, usize, Vec<[f64; 3]>), CliError> {
    let file = fs::File::open(path)?;
    let decoder = png::Decoder::new(io::BufReader::new(file));
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];

    let to_unit = |v: u8| v as f64 / 255.0;
    let mut pixels = Vec::with_capacity(w * h);
    match (info.color_type, info.bit_depth) {
        (png::ColorType::Rgb, png::BitDepth::Eight) => {
            for c in data.chunks_exact(3) {
                pixels.push([to_unit(c[0]), to_unit(c[1]), to_unit(c[2])]);
            }
        }
        (png::ColorType::Rgba, png::BitDepth::Eight) => {
            for c in data.chunks_exact(4) {
                pixels.push([to_unit(c[0]), to_unit(c[1]), to_unit(c[2])]);
            }
        }
        (png::ColorType::Grayscale, png::BitDepth::Eight) => {
            for &g in data {
                let v = to_unit(g);
                pixels.push([v, v, v]);
            }
        }
        (png::ColorType::GrayscaleAlpha, png::BitDepth::Eight) => {
            for c in data.chunks_exact(2) {
                let v = to_unit(c[0]);
                pixels.push([v, v, v]);
            }
        }
        (ct, bd) => {
            return Err(CliError::Parse(format!(
                "unsupported PNG format {ct:?}/{bd:?} in {}",
                path.display()
            )))
        }
    }
    Ok((w, h, pixels))
}

/// Grayscale view of a PNG (mean of RGB), for mask import.
pub fn read_gray_png(path: &Path) -> Result<(usize, usize, Vec<f64>), CliError> {
    let (w, h, pixels) = read_rgb_png(path)?;
    Ok((
        w,
        h,
        pixels
            .iter()
            .map(|p| (p[0] + p[1] + p[2]) / 3.0)
            .collect(),
    ))
}

/// Center-crop to square and nearest-rescale to `size`.
pub fn crop_rescale(
    pixels: &[[f64; 3]],
    width: usize,
    height: usize,
    size: usize,
) -> Vec<[f64; 3]> {
    let side = width.min(height);
    let x0 = (width - side) / 2;
    let y0 = (height - side) / 2;
    let mut out = Vec::with_capacity(size * size);
    for r in 0..size {
        let sy = y0 + ((r as f64 + 0.5) * side as f64 / size as f64) as usize;
        for c in 0..size {
            let sx = x0 + ((c as f64 + 0.5) * side as f64 / size as f64) as usize;
            out.push(pixels[sy.min(height - 1) * width + sx.min(width - 1)]);
        }
    }
    out
}

/// Load every PNG in a directory (lexicographic order for determinism),
/// center-cropped and rescaled to `size`.
pub fn load_background_dir(dir: &Path, size: usize) -> Result<Vec<Vec<[f64; 3]>>, CliError> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|e| e.eq_ignore_ascii_case("png"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Config(format!(
            "no PNG backgrounds in {}",
            dir.display()
        )));
    }
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let (w, h, pixels) = read_rgb_png(&p)?;
        out.push(crop_rescale(&pixels, w, h, size));
    }
    Ok(out)
}

fn png_err(e: png::EncodingError) -> CliError {
    CliError::Parse(format!("png: {e}"))
}

impl From<png::DecodingError> for CliError {
    fn from(e: png::DecodingError) -> Self {
        CliError::Parse(format!("png: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
