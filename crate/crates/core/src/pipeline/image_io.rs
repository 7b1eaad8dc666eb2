//! 8-bit PNG and binary PPM frames, mapped linearly between `[0,255]` and `[0,1]`.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ColorType, DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};
use crate::warp::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageKind {
    Png,
    Ppm,
}

impl ImageKind {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("png") => Ok(ImageKind::Png),
            Some("ppm") | Some("pnm") => Ok(ImageKind::Ppm),
            _ => Err(Error::invalid(format!(
                "{}: expected a .png or .ppm path",
                path.display()
            ))),
        }
    }
}

pub fn decode_image(bytes: &[u8]) -> Result<Frame> {
    let format = if bytes.starts_with(b"P") {
        ImageFormat::Pnm
    } else {
        ImageFormat::Png
    };
    let img = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| Error::Parse(e.to_string()))?;
    let rgb = match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => img.to_rgb8(),
        other => return Err(Error::UnsupportedDepth(format!("{other:?}"))),
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    Ok(Frame::from_fn(3, h, w, |c, y, x| {
        raw[(y * w + x) * 3 + c] as f64 / 255.0
    }))
}

/// Interleaved 8-bit RGB, rounding to nearest and clamping to `[0,255]`.
pub fn to_rgb8(frame: &Frame) -> Result<Vec<u8>> {
    if frame.channels() != 3 {
        return Err(Error::invalid(format!(
            "image output needs 3 channels, got {}",
            frame.channels()
        )));
    }
    let (h, w) = (frame.height(), frame.width());
    let mut out = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push((frame.get(c, y, x) * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(out)
}

pub fn encode_image(frame: &Frame, kind: ImageKind) -> Result<Vec<u8>> {
    let raw = to_rgb8(frame)?;
    let (w, h) = (frame.width() as u32, frame.height() as u32);
    let mut buf = Vec::new();
    let enc = |e: image::ImageError| Error::invalid(e.to_string());
    match kind {
        ImageKind::Png => {
            let img = image::RgbImage::from_raw(w, h, raw)
                .ok_or_else(|| Error::invalid("image buffer size"))?;
            DynamicImage::ImageRgb8(img)
                .write_to(&mut Cursor::new(&mut buf), ImageFormat::Png)
                .map_err(enc)?;
        }
        ImageKind::Ppm => {
            PnmEncoder::new(&mut buf)
                .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
                .write_image(&raw, w, h, ExtendedColorType::Rgb8)
                .map_err(enc)?;
        }
    }
    Ok(buf)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    decode_image(&fs::read(path).map_err(|e| Error::file(path, e))?)
}

/// Format follows the extension.
pub fn write_image(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_image(frame, ImageKind::from_path(path)?)?;
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}
