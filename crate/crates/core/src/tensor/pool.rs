use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 2x2 / stride-2 max pooling. Returns the pooled tensor and, for every
/// output element, the flat index of the chosen input element. Ties go to
/// the first element in row-major window order.
pub fn max_pool2d(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("max pool needs even extents, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let mut indices = Vec::with_capacity(n * c * ho * wo);
    let x = input.data();
    let o = out.data_mut();
    let mut k = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                o[k] = x[best];
                indices.push(best);
                k += 1;
            }
        }
    }
    Ok((out, indices))
}

/// Routes `grad_out` back to the recorded argmax positions.
pub fn max_pool2d_backward(input_shape: &[usize], indices: &[usize], grad_out: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros(input_shape.to_vec());
    let g = gx.data_mut();
    for (&idx, &v) in indices.iter().zip(grad_out.data()) {
        g[idx] += v;
    }
    gx
}

/// Mean over the spatial extents: `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let plane = h * w;
    let data = input
        .data()
        .chunks(plane)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor::new([n, c], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_extents() {
        let (out, idx) = max_pool2d(&Tensor::zeros([1, 2, 256, 256])).unwrap();
        assert_eq!(out.shape(), &[1, 2, 128, 128]);
        assert_eq!(idx.len(), 2 * 128 * 128);
    }

    #[test]
    fn picks_max_and_first_on_ties() {
        let t = Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, idx) = max_pool2d(&t).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(idx, vec![3]);

        let t = Tensor::full([1, 1, 2, 2], 7.0);
        let (out, idx) = max_pool2d(&t).unwrap();
        assert_eq!(out.data(), &[7.0]);
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn odd_extent_rejected() {
        assert!(max_pool2d(&Tensor::zeros([1, 1, 3, 4])).is_err());
    }

    #[test]
    fn average_pool_values() {
        let t = Tensor::new([1, 1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(global_avg_pool(&t).unwrap().data(), &[4.0]);
        let c = Tensor::full([2, 3, 4, 4], -1.5);
        assert!(global_avg_pool(&c).unwrap().data().iter().all(|&v| v == -1.5));
    }
}
