use super::{Image, ImagingError, Result};

/// Scales so the longer edge equals `target`, preserving aspect ratio.
///
/// Bilinear sampling with half-pixel centers; the shorter edge is rounded to
/// the nearest integer and never below 1.
pub fn resize_longer_edge(image: &Image, target: usize) -> Result<Image> {
    if target == 0 {
        return Err(ImagingError::Invalid(
            "resize target must be at least 1".into(),
        ));
    }
    let (w, h) = (image.width(), image.height());
    if w == 0 || h == 0 {
        return Err(ImagingError::Invalid("cannot resize an empty image".into()));
    }
    let longer = w.max(h);
    if longer == target {
        return Ok(image.clone());
    }
    let short = |s: usize| (((s * target) as f64 / longer as f64).round() as usize).max(1);
    let (nw, nh) = if w >= h {
        (target, short(h))
    } else {
        (short(w), target)
    };
    Ok(bilinear(image, nw, nh))
}

fn sample_axis(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, pos - i0 as f64)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

fn bilinear(image: &Image, nw: usize, nh: usize) -> Image {
    let xs: Vec<_> = (0..nw).map(|x| sample_axis(x, image.width(), nw)).collect();
    let ys: Vec<_> = (0..nh)
        .map(|y| sample_axis(y, image.height(), nh))
        .collect();
    Image::from_fn(nw, nh, |x, y, c| {
        let (x0, x1, tx) = xs[x];
        let (y0, y1, ty) = ys[y];
        let top = lerp(image.get(x0, y0, c), image.get(x1, y0, c), tx);
        let bottom = lerp(image.get(x0, y1, c), image.get(x1, y1, c), tx);
        lerp(top, bottom, ty)
    })
}
