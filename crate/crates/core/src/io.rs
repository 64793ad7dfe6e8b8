//! Image files (PFM, PNG, mask sidecars) and ground-truth generation.

use std::fs;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{LinearImage, Mask};

/// Reflectance at or below this is treated as black when dividing for shading.
pub const REFLECTANCE_FLOOR: f64 = 1e-4;

/// Image, reflectance and shading on one grid with a shared mask.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthTriple {
    pub image: LinearImage,
    pub reflectance: LinearImage,
    pub shading: LinearImage,
}

/// `S = I / R` per channel. Pixels with `R <= REFLECTANCE_FLOOR` in any
/// channel, pixels set in `light_mask`, and pixels invalid in either input
/// are invalid in all three outputs.
pub fn make_ground_truth(
    image: &LinearImage,
    reflectance: &LinearImage,
    light_mask: Option<&Mask>,
) -> Result<GroundTruthTriple> {
    image.check_grid(reflectance, "image vs reflectance")?;
    let ch = image.channels();
    if reflectance.channels() != ch && reflectance.channels() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "image has {ch} channels, reflectance {}",
            reflectance.channels()
        )));
    }
    if let Some(m) = light_mask {
        if m.width() != image.width() || m.height() != image.height() {
            return Err(Error::DimensionMismatch("light mask grid".into()));
        }
    }
    let n = image.pixel_count();
    let mut mask = image.mask().and(reflectance.mask())?;
    let mut r_data = vec![0.0; n * ch];
    let mut s_data = vec![0.0; n * ch];
    for i in 0..n {
        let lit = light_mask.is_some_and(|m| m.at(i));
        let r = reflectance.pixel(i);
        let r_at = |c: usize| if r.len() == 1 { r[0] } else { r[c] };
        if lit || (0..ch).any(|c| r_at(c) <= REFLECTANCE_FLOOR) {
            mask.set_index(i, false);
        }
        if !mask.at(i) {
            continue;
        }
        for c in 0..ch {
            r_data[i * ch + c] = r_at(c);
            s_data[i * ch + c] = image.pixel(i)[c] / r_at(c);
        }
    }
    let (w, h) = (image.width(), image.height());
    Ok(GroundTruthTriple {
        image: image.clone().with_mask(mask.clone())?,
        reflectance: LinearImage::new(w, h, ch, r_data, mask.clone())?,
        shading: LinearImage::new(w, h, ch, s_data, mask)?,
    })
}

// ---------------------------------------------------------------------------
// PFM

/// Parses a Portable FloatMap. Rows are stored bottom to top; a negative
/// scale means little-endian samples. Non-finite or negative samples make
/// their pixel invalid.
pub fn parse_pfm(bytes: &[u8]) -> Result<LinearImage> {
    let mut pos = 0usize;
    let mut token = |what: &str| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Pfm(format!("missing {what}")));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token("magic")?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::Pfm(format!("bad magic {other:?}"))),
    };
    let width: usize = token("width")?
        .parse()
        .map_err(|_| Error::Pfm("bad width".into()))?;
    let height: usize = token("height")?
        .parse()
        .map_err(|_| Error::Pfm("bad height".into()))?;
    let scale: f64 = token("scale")?
        .parse()
        .map_err(|_| Error::Pfm("bad scale".into()))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Pfm("scale must be non-zero".into()));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Pfm("truncated header".into()));
    }
    pos += 1;
    let little = scale < 0.0;
    let count = width * height * channels;
    let payload = &bytes[pos..];
    if payload.len() < count * 4 {
        return Err(Error::Pfm(format!(
            "truncated payload: {} of {} bytes",
            payload.len(),
            count * 4
        )));
    }
    let mut data = vec![0.0; count];
    let mut mask = Mask::filled(width, height, true);
    for (k, chunk) in payload[..count * 4].chunks_exact(4).enumerate() {
        let raw: [u8; 4] = chunk.try_into().expect("chunk of 4");
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        } as f64;
        let file_row = k / (width * channels);
        let rest = k % (width * channels);
        let y = height - 1 - file_row;
        let idx = y * width * channels + rest;
        if v.is_finite() && v >= 0.0 {
            data[idx] = v;
        } else {
            mask.set_index(idx / channels, false);
        }
    }
    LinearImage::new(width, height, channels, data, mask)
}

/// Little-endian PFM. Only 1- and 3-channel images are representable;
/// invalid pixels are written as zeros.
pub fn encode_pfm(img: &LinearImage) -> Result<Vec<u8>> {
    let magic = match img.channels() {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::Pfm(format!("cannot store {c} channels"))),
    };
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut out = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * ch * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            for c in 0..ch {
                out.extend_from_slice(&(img.get(x, y, c) as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<LinearImage> {
    parse_pfm(&fs::read(path)?)
}

pub fn write_pfm(img: &LinearImage, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_pfm(img)?)
}

// ---------------------------------------------------------------------------
// PNG

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PngDepth {
    Eight,
    Sixteen,
}

/// Decodes 8- or 16-bit gray/RGB PNGs (alpha is dropped, palettes and
/// low bit depths are expanded) to samples in `[0, 1]`.
pub fn decode_png(bytes: &[u8]) -> Result<LinearImage> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Png(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (src_ch, keep) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(Error::Png("unexpanded palette".into())),
    };
    let sixteen = info.bit_depth == png::BitDepth::Sixteen;
    let mut data = Vec::with_capacity(w * h * keep);
    for y in 0..h {
        let row = &buf[y * info.line_size..(y + 1) * info.line_size];
        for x in 0..w {
            for c in 0..keep {
                let s = x * src_ch + c;
                let v = if sixteen {
                    u16::from_be_bytes([row[2 * s], row[2 * s + 1]]) as f64 / 65535.0
                } else {
                    row[s] as f64 / 255.0
                };
                data.push(v);
            }
        }
    }
    LinearImage::new(w, h, keep, data, Mask::filled(w, h, true))
}

/// Samples are clipped to `[0, 1]` and rounded to the nearest code value.
pub fn encode_png(img: &LinearImage, depth: PngDepth) -> Result<Vec<u8>> {
    let color = match img.channels() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::Png(format!("cannot store {c} channels"))),
    };
    let samples: Vec<f64> = img.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let raw: Vec<u8> = match depth {
        PngDepth::Eight => samples.iter().map(|v| (v * 255.0).round() as u8).collect(),
        PngDepth::Sixteen => samples
            .iter()
            .flat_map(|v| ((v * 65535.0).round() as u16).to_be_bytes())
            .collect(),
    };
    encode_raw_png(img.width(), img.height(), color, depth, &raw)
}

fn encode_raw_png(
    w: usize,
    h: usize,
    color: png::ColorType,
    depth: PngDepth,
    raw: &[u8],
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(match depth {
            PngDepth::Eight => png::BitDepth::Eight,
            PngDepth::Sixteen => png::BitDepth::Sixteen,
        });
        let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        writer
            .write_image_data(raw)
            .map_err(|e| Error::Png(e.to_string()))?;
        writer.finish().map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn read_png(path: impl AsRef<Path>) -> Result<LinearImage> {
    decode_png(&fs::read(path)?)
}

pub fn write_png(img: &LinearImage, path: impl AsRef<Path>, depth: PngDepth) -> Result<()> {
    write_atomic(path, &encode_png(img, depth)?)
}

/// 8-bit gray PNG, `0` = unset, `255` = set.
pub fn encode_mask_png(mask: &Mask) -> Result<Vec<u8>> {
    let raw: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_raw_png(
        mask.width(),
        mask.height(),
        png::ColorType::Grayscale,
        PngDepth::Eight,
        &raw,
    )
}

/// Any non-zero sample (first channel) marks a set pixel.
pub fn decode_mask_png(bytes: &[u8]) -> Result<Mask> {
    let img = decode_png(bytes)?;
    let bits = (0..img.pixel_count()).map(|i| img.pixel(i)[0] > 0.0).collect();
    Mask::new(img.width(), img.height(), bits)
}

pub fn read_mask_png(path: impl AsRef<Path>) -> Result<Mask> {
    decode_mask_png(&fs::read(path)?)
}

pub fn write_mask_png(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_mask_png(mask)?)
}

/// `dir/stem.png` -> `dir/stem.mask.png`.
pub fn mask_sidecar_path(path: impl AsRef<Path>) -> PathBuf {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.mask.png"))
}

/// Reads a PFM or PNG by extension and applies a `<stem>.mask.png` sidecar
/// when one exists.
pub fn read_image(path: impl AsRef<Path>) -> Result<LinearImage> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    let img = match ext.as_str() {
        "pfm" => read_pfm(path)?,
        "png" => read_png(path)?,
        other => {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!("unsupported image extension {other:?}"),
            )))
        }
    };
    let sidecar = mask_sidecar_path(path);
    if sidecar.exists() {
        let side = read_mask_png(&sidecar)?;
        let mask = img.mask().and(&side)?;
        return img.with_mask(mask);
    }
    Ok(img)
}

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
