//! PNG (8/16-bit) and binary PPM reading; 8-bit PNG writing.

use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader, RgbImage};

use super::{quantize8, Image, ImagingError, Result};

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|source| ImagingError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| ImagingError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        other => {
            return Err(ImagingError::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: other.map_or("unrecognized".to_string(), |f| format!("{f:?}")),
            })
        }
    }
    let decoded = reader.decode().map_err(|e| ImagingError::Decode {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let samples: Vec<f64> = match decoded {
        DynamicImage::ImageRgb8(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect(),
        DynamicImage::ImageRgb16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
        other @ (DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgba8(_)) => other
            .to_rgb8()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect(),
        other @ (DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgba16(_)) => other
            .to_rgb16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
        other => {
            return Err(ImagingError::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("pixel layout {:?}", other.color()),
            })
        }
    };
    Image::from_interleaved(w, h, &samples)
}

/// Writes an 8-bit RGB PNG. Values are clamped to `[0, 1]` and rounded
/// half away from zero.
pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = image.to_interleaved().into_iter().map(quantize8).collect();
    let buf = RgbImage::from_raw(image.width() as u32, image.height() as u32, bytes)
        .ok_or_else(|| ImagingError::Invalid("image buffer size mismatch".into()))?;
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| ImagingError::Encode {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn eight_bit_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ppm");
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(b"P6\n3 1\n255\n").unwrap();
        f.write_all(&[255, 255, 255, 0, 0, 0, 128, 128, 128])
            .unwrap();
        drop(f);
        let img = load_image(&p).unwrap();
        assert_eq!(img.pixel(0, 0), [1.0; 3]);
        assert_eq!(img.pixel(1, 0), [0.0; 3]);
        assert_eq!(img.pixel(2, 0), [128.0 / 255.0; 3]);
    }

    #[test]
    fn save_load_round_trip_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let img = Image::from_fn(7, 4, |x, y, c| {
            ((x * 37 + y * 11 + c * 5) % 97) as f64 / 96.0 * 1.2 - 0.1
        });
        save_image(&img, &p).unwrap();
        let loaded = load_image(&p).unwrap();
        assert_eq!(loaded, img.quantized8());
        save_image(&loaded, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), loaded);
    }

    #[test]
    fn sixteen_bit_png() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x16.png");
        let buf: image::ImageBuffer<image::Rgb<u16>, Vec<u16>> =
            image::ImageBuffer::from_raw(2, 1, vec![65535, 0, 32768, 0, 65535, 1]).unwrap();
        buf.save(&p).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.pixel(0, 0), [1.0, 0.0, 32768.0 / 65535.0]);
        assert_eq!(img.pixel(1, 0), [0.0, 1.0, 1.0 / 65535.0]);
    }

    #[test]
    fn corrupt_and_unsupported_files() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.ppm");
        std::fs::write(&bad, b"P6\nnot a header").unwrap();
        assert!(load_image(&bad).is_err());
        let txt = dir.path().join("notes.txt");
        std::fs::write(&txt, b"hello world").unwrap();
        assert!(matches!(
            load_image(&txt),
            Err(ImagingError::UnsupportedFormat { .. })
        ));
        assert!(matches!(
            load_image(dir.path().join("missing.png")),
            Err(ImagingError::Io { .. })
        ));
    }
}
