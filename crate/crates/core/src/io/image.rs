//! 8-bit PNG images as `1×3×H×W` tensors in [0, 1].

use std::path::Path;

use png::{BitDepth, ColorType};

use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

fn format_err(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("png: {e}"))
}

/// Decodes an 8-bit RGB or RGBA PNG; alpha is dropped.
pub fn decode_png(bytes: &[u8]) -> Result<Tensor<f32>> {
    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder.read_info().map_err(format_err)?;
    let info = reader.info();
    let channels = match (info.color_type, info.bit_depth) {
        (ColorType::Rgb, BitDepth::Eight) => 3,
        (ColorType::Rgba, BitDepth::Eight) => 4,
        (ct, bd) => return Err(Error::Format(format!("unsupported png {ct:?} at {bd:?} bit depth; need 8-bit RGB or RGBA"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(format_err)?;
    let buf = &buf[..frame.buffer_size()];
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        let row = &buf[y * frame.line_size..];
        for x in 0..w {
            for c in 0..3 {
                data[(c * h + y) * w + x] = row[x * channels + c] as f32 / 255.0;
            }
        }
    }
    Tensor::new(&[1, 3, h, w], data)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Encodes a `1×3×H×W` (or `3×H×W`) image as 8-bit RGB, rounding half up.
pub fn encode_png(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = match *image.shape() {
        [1, 3, h, w] | [3, h, w] => (h, w),
        _ => contract!("expected a 1×3×H×W image, got {:?}", image.shape()),
    };
    if image.data().iter().any(|v| v.is_nan()) {
        contract!("cannot encode an image containing NaN");
    }
    let mut rgb = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                rgb.push(quantize(image.data()[(c * h + y) * w + x]));
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(ColorType::Rgb);
        enc.set_depth(BitDepth::Eight);
        let mut writer = enc.write_header().map_err(format_err)?;
        writer.write_image_data(&rgb).map_err(format_err)?;
    }
    Ok(out)
}

pub fn load_png(path: &Path) -> Result<Tensor<f32>> {
    decode_png(&std::fs::read(path)?)
}

pub fn save_png(path: &Path, image: &Tensor<f32>) -> Result<()> {
    super::atomic_write(path, &encode_png(image)?)
}
