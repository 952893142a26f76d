//! PNG frame decoding and encoding.

use std::path::Path;

use image::{ColorType, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::Tensor;

/// Reads an 8-bit RGB image into a `(1, 3, h, w)` tensor with values `v/255`.
pub fn decode_image(path: &Path) -> Result<Tensor> {
    let img_err = |detail: String| Error::Image {
        path: path.to_path_buf(),
        detail,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| img_err(e.to_string()))?;
    if img.color() != ColorType::Rgb8 {
        return Err(img_err(format!("expected 8-bit RGB, found {:?}", img.color())));
    }
    let rgb = img.into_rgb8();
    Ok(rgb_to_tensor(&rgb))
}

pub(crate) fn rgb_to_tensor(rgb: &RgbImage) -> Tensor {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| raw[(y * w + x) * 3 + c] as f32 / 255.0)
}

/// Quantizes a `(1, 3, h, w)` tensor to 8 bits, rounding to nearest.
pub fn to_rgb8(t: &Tensor) -> Result<RgbImage> {
    let [n, c, h, w] = t.dims();
    if n != 1 || c != 3 {
        return Err(Error::shape("encode_image", format!("expected (1, 3, h, w), got {:?}", t.dims())));
    }
    let mut raw = vec![0u8; h * w * 3];
    for ch in 0..3 {
        for (i, &v) in t.plane(0, ch).iter().enumerate() {
            raw[i * 3 + ch] = (v * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer size"))
}

/// Writes a lossless PNG.
pub fn encode_image(t: &Tensor, path: &Path) -> Result<()> {
    let img = to_rgb8(t)?;
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Rounds values to the 8-bit grid a PNG round trip would produce.
pub fn quantize(t: &Tensor) -> Tensor {
    t.map(|v| (v * 255.0).round().clamp(0.0, 255.0) / 255.0)
}
