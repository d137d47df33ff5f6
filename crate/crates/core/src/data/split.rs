use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Seeded shuffle into train/validation/test. The first two sizes are the
/// rounded shares and the test split takes the remainder.
pub fn split(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if ratios.iter().any(|&r| !(r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSpec(format!(
            "split ratios {ratios:?} must be positive and sum to 1"
        )));
    }
    let n = dataset.len();
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = (ratios[1] * n as f64).round() as usize;
    let sizes = [n_train, n_val, n.saturating_sub(n_train + n_val)];
    if sizes.contains(&0) || n_train + n_val >= n {
        return Err(Error::Dataset(format!(
            "splitting {n} samples by {ratios:?} leaves an empty split"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: std::ops::Range<usize>| Dataset {
        samples: order[range].iter().map(|&i| dataset.samples[i].clone()).collect(),
        source: dataset.source.clone(),
    };
    Ok((
        take(0..n_train),
        take(n_train..n_train + n_val),
        take(n_train + n_val..n),
    ))
}
