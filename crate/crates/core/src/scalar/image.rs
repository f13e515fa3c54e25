//! Image input and the letterbox pre-processing pipeline:
//! normalize to planar fp32, bilinear resize, embed in a padded square.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Layout, Shape, Tensor};

/// Pixel values are divided by this to land in `[0, 1]`.
pub const PIXEL_DIVISOR: f32 = 255.0;
/// Canvas value outside the resized image.
pub const LETTERBOX_FILL: f32 = 0.5;

/// 8-bit RGB image, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::shape("image dimensions must be positive"));
        }
        if data.len() != width * height * Self::CHANNELS {
            return Err(Error::shape(format!(
                "{}x{} RGB image needs {} bytes, got {}",
                width,
                height,
                width * height * Self::CHANNELS,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, data)
    }
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format("truncated PPM header"));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = next_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(format!("bad PPM {what}")))
}

/// Parses a binary `P6` PPM with maxval 255.
pub fn parse_ppm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P6" {
        return Err(Error::format(format!(
            "unsupported PPM variant {:?}, only binary P6 is read",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::format(format!("maxval must be 255, got {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format("missing raster separator"));
    }
    pos += 1;
    let want = width * height * Image::CHANNELS;
    let raster = &bytes[pos..];
    if raster.len() < want {
        return Err(Error::format(format!(
            "truncated raster: {} of {want} bytes",
            raster.len()
        )));
    }
    Image::new(width, height, raster[..want].to_vec()).map_err(|e| Error::format(e.to_string()))
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Image> {
    parse_ppm(&fs::read(path)?)
}

pub fn write_ppm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_ppm(img))?;
    Ok(())
}

/// Stage one: interleaved `u8` to planar `f32` in `[0, 1]`.
pub fn normalize_planes(img: &Image) -> Vec<Vec<f32>> {
    (0..Image::CHANNELS)
        .map(|ch| {
            img.data
                .iter()
                .skip(ch)
                .step_by(Image::CHANNELS)
                .map(|&v| v as f32 / PIXEL_DIVISOR)
                .collect()
        })
        .collect()
}

/// Bilinear resize of one plane. Source coordinates are
/// `(dst + 0.5) * in / out - 0.5`, clamped to the edge.
pub fn resize_bilinear_plane(
    src: &[f32],
    in_w: usize,
    in_h: usize,
    out_w: usize,
    out_h: usize,
) -> Vec<f32> {
    debug_assert_eq!(src.len(), in_w * in_h);
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let ratio = n_in as f32 / n_out as f32;
        (0..n_out)
            .map(|d| {
                let s = ((d as f32 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f32);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, s - lo as f32)
            })
            .collect()
    };
    let xs = axis(in_w, out_w);
    let ys = axis(in_h, out_h);
    let lerp = |a: f32, b: f32, t: f32| (a + (b - a) * t).clamp(a.min(b), a.max(b));

    let mut out = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        let r0 = &src[y0 * in_w..][..in_w];
        let r1 = &src[y1 * in_w..][..in_w];
        for &(x0, x1, fx) in &xs {
            let top = lerp(r0[x0], r0[x1], fx);
            let bottom = lerp(r1[x0], r1[x1], fx);
            out.push(lerp(top, bottom, fy));
        }
    }
    out
}

/// Where the resized image sits inside the square canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LetterboxGeometry {
    pub new_w: usize,
    pub new_h: usize,
    pub offset_x: usize,
    pub offset_y: usize,
}

/// Longer side becomes `target`, the other is scaled and rounded to nearest.
pub fn letterbox_geometry(width: usize, height: usize, target: usize) -> Result<LetterboxGeometry> {
    if target == 0 {
        return Err(Error::domain("letterbox target must be > 0"));
    }
    if width == 0 || height == 0 {
        return Err(Error::shape("image dimensions must be positive"));
    }
    let longest = width.max(height);
    let scaled = |side: usize| ((2 * target * side + longest) / (2 * longest)).max(1);
    let new_w = scaled(width);
    let new_h = scaled(height);
    Ok(LetterboxGeometry {
        new_w,
        new_h,
        offset_x: (target - new_w) / 2,
        offset_y: (target - new_h) / 2,
    })
}

/// Full pre-processing pipeline to a `(1, 3, target, target)` tensor.
pub fn letterbox_preprocess(img: &Image, target: usize) -> Result<Tensor> {
    let geo = letterbox_geometry(img.width, img.height, target)?;
    let planes = normalize_planes(img);
    let mut out = vec![LETTERBOX_FILL; Image::CHANNELS * target * target];
    for (ch, plane) in planes.iter().enumerate() {
        let resized = resize_bilinear_plane(plane, img.width, img.height, geo.new_w, geo.new_h);
        let canvas = &mut out[ch * target * target..][..target * target];
        for (y, row) in resized.chunks_exact(geo.new_w).enumerate() {
            let at = (y + geo.offset_y) * target + geo.offset_x;
            canvas[at..at + geo.new_w].copy_from_slice(row);
        }
    }
    Tensor::from_f32(Shape::new(1, 3, target, target)?, Layout::Nchw, out)
}
