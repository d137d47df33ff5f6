use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MIN_EXTENT: usize = 8;

fn check_target(image: &Tensor, size: (usize, usize)) -> Result<(usize, usize, usize)> {
    let shape = image.shape();
    if shape.len() != 3 {
        return Err(Error::shape(format!("expected [C, H, W], got {shape:?}")));
    }
    if size.0 < MIN_EXTENT || size.1 < MIN_EXTENT {
        return Err(Error::InvalidSpec(format!(
            "target size {}x{} is below {MIN_EXTENT}x{MIN_EXTENT}",
            size.0, size.1
        )));
    }
    Ok((shape[0], shape[1], shape[2]))
}

/// Source coordinate and interpolation weight for each target index
/// (pixel centers aligned).
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// Bilinear resampling of a `[C, H, W]` tensor.
pub fn resize_bilinear(image: &Tensor, size: (usize, usize)) -> Result<Tensor> {
    let (c, h, w) = check_target(image, size)?;
    let (th, tw) = size;
    if (h, w) == size {
        return Ok(image.clone());
    }
    let (ys, xs) = (taps(h, th), taps(w, tw));
    let src = image.data();
    let mut out = Vec::with_capacity(c * th * tw);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new([c, th, tw], out)
}

/// Bilinear resize followed by per-image min-max scaling to [0, 1].
/// Constant images map to zeros.
pub fn normalize_resize(image: &Tensor, size: (usize, usize)) -> Result<Tensor> {
    let resized = resize_bilinear(image, size)?;
    let (lo, hi) = resized
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range <= 0.0 || !range.is_finite() {
        return Ok(Tensor::zeros(resized.shape().to_vec()));
    }
    Ok(resized.map(|v| ((v - lo) / range).clamp(0.0, 1.0)))
}

/// Nearest-neighbor resampling followed by binarization at 0.5.
pub fn resize_mask(mask: &Tensor, size: (usize, usize)) -> Result<Tensor> {
    let (c, h, w) = check_target(mask, size)?;
    let (th, tw) = size;
    let nearest = |src: usize, dst: usize, d: usize| (((d as f64 + 0.5) * src as f64 / dst as f64) as usize).min(src - 1);
    let src = mask.data();
    let mut out = Vec::with_capacity(c * th * tw);
    for ch in 0..c {
        for y in 0..th {
            let sy = nearest(h, th, y);
            for x in 0..tw {
                out.push(src[(ch * h + sy) * w + nearest(w, tw, x)]);
            }
        }
    }
    Ok(binarize(&Tensor::new([c, th, tw], out)?, 0.5))
}

/// 1 where `value >= threshold`, else 0.
pub fn binarize(t: &Tensor, threshold: f64) -> Tensor {
    t.map(|v| if v >= threshold { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn halves_512_to_256() {
        let img = Tensor::uniform([1, 512, 512], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let out = normalize_resize(&img, (256, 256)).unwrap();
        assert_eq!(out.shape(), &[1, 256, 256]);
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        // pixel-center alignment at 2:1 averages 2x2 blocks
        let r = resize_bilinear(&img, (256, 256)).unwrap();
        let d = img.data();
        let expect = (d[0] + d[1] + d[512] + d[513]) / 4.0;
        assert!((r.data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn constant_image_maps_to_zero() {
        let out = normalize_resize(&Tensor::full([3, 10, 10], 0.7), (16, 16)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_when_normalized_at_target() {
        let mut img = Tensor::uniform([1, 12, 12], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        img.data_mut()[0] = 0.0;
        img.data_mut()[1] = 1.0;
        let out = normalize_resize(&img, (12, 12)).unwrap();
        assert!(out.max_abs_diff(&img).unwrap() < 1e-12);
    }

    #[test]
    fn masks_stay_binary() {
        let m = binarize(&Tensor::uniform([1, 20, 20], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(3)), 0.5);
        for size in [(8, 8), (33, 17), (64, 64)] {
            let r = resize_mask(&m, size).unwrap();
            assert!(r.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
        assert_eq!(resize_mask(&m, (20, 20)).unwrap(), m);
        assert!(resize_mask(&m, (4, 4)).is_err());
    }
}
