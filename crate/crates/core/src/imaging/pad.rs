use super::{Image, ImagingError, Mask, Result};

/// An image zero-padded into an `S x S` canvas, anchored at the top-left.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedImage {
    pub image: Image,
    pub mask: Mask,
    pub original_width: usize,
    pub original_height: usize,
}

impl PaddedImage {
    /// Recovers the original pixels.
    pub fn unpad(&self) -> Image {
        self.image
            .crop(self.original_width, self.original_height)
            .expect("valid region lies inside the canvas")
    }
}

pub fn pad_to_square(image: &Image, size: usize) -> Result<PaddedImage> {
    let (w, h) = (image.width(), image.height());
    if w > size || h > size {
        return Err(ImagingError::TooLarge {
            width: w,
            height: h,
            limit: size,
        });
    }
    let canvas = Image::from_fn(size, size, |x, y, c| {
        if x < w && y < h {
            image.get(x, y, c)
        } else {
            0.0
        }
    });
    Ok(PaddedImage {
        image: canvas,
        mask: Mask::top_left(size, size, w, h),
        original_width: w,
        original_height: h,
    })
}
