use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use lcr_tensor::Tensor;

use crate::error::{LcrError, Result};

/// Decodes a PNG or JPEG into a `1×3×H×W` tensor in `[0, 1]`.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| LcrError::Data(format!("{}: {e}", path.display())))?
        .to_rgb8();
    Ok(rgb_to_tensor(&img))
}

pub fn rgb_to_tensor(img: &ImageBuffer<Rgb<u8>, Vec<u8>>) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn(&[1, 3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f32 / 255.0
    })
}

/// Rounds a `1×3×H×W` (or `3×H×W`) tensor to 8 bits per channel.
pub fn tensor_to_rgb(t: &Tensor) -> Result<ImageBuffer<Rgb<u8>, Vec<u8>>> {
    let s = t.shape();
    let (h, w) = match s {
        [1, 3, h, w] | [3, h, w] => (*h, *w),
        _ => return Err(LcrError::Invalid(format!("expected an RGB tensor, got {s:?}"))),
    };
    let d = t.data();
    let mut raw = vec![0u8; h * w * 3];
    for c in 0..3 {
        for p in 0..h * w {
            raw[p * 3 + c] = (d[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    Ok(ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer size matches"))
}

/// Writes an RGB tensor as a lossless PNG.
pub fn save_rgb(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    tensor_to_rgb(t)?.save(path.as_ref())?;
    Ok(())
}

pub fn save_gray(path: impl AsRef<Path>, pixels: Vec<u8>, width: usize, height: usize) -> Result<()> {
    let img: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(width as u32, height as u32, pixels)
        .ok_or_else(|| LcrError::Invalid("grayscale buffer does not match its size".into()))?;
    img.save(path.as_ref())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_at_eight_bits() {
        let t = Tensor::from_fn(&[1, 3, 5, 7], |i| ((i * 37) % 256) as f32 / 255.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        save_rgb(&p, &t).unwrap();
        let back = load_rgb(&p).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn unreadable_file_is_a_data_error() {
        assert!(matches!(load_rgb("/nonexistent/x.png"), Err(LcrError::Data(_))));
    }
}
