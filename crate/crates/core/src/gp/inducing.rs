use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GpsmError, Result};
use crate::kernels::col;

/// How FITC inducing inputs are drawn from the training inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InducingSelection {
    /// Uniform random subset without replacement.
    #[default]
    Random,
    /// Greedy farthest-point sampling from a seeded random start.
    FarthestPoint,
}

/// Pick `count` columns of `inputs` as inducing inputs. When `count` is at
/// least the number of inputs, all inputs are returned in their original order.
pub fn select_inducing(
    inputs: &DMatrix<f64>,
    count: usize,
    method: InducingSelection,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let n = inputs.ncols();
    if count == 0 {
        return Err(GpsmError::input("at least one inducing point is required"));
    }
    if n == 0 {
        return Err(GpsmError::input(
            "cannot select inducing points from an empty set",
        ));
    }
    if count >= n {
        return Ok(inputs.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<usize> = match method {
        InducingSelection::Random => {
            let mut idx = index::sample(&mut rng, n, count).into_vec();
            idx.sort_unstable();
            idx
        }
        InducingSelection::FarthestPoint => {
            let start = index::sample(&mut rng, n, 1).index(0);
            let mut picked = vec![start];
            let mut dist: Vec<f64> = (0..n)
                .map(|i| sq_dist(col(inputs, i), col(inputs, start)))
                .collect();
            while picked.len() < count {
                let (next, _) =
                    dist.iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (i, &d)| {
                            if d > best.1 {
                                (i, d)
                            } else {
                                best
                            }
                        });
                picked.push(next);
                let c = col(inputs, next);
                for (i, d) in dist.iter_mut().enumerate() {
                    *d = d.min(sq_dist(col(inputs, i), c));
                }
            }
            picked
        }
    };
    Ok(inputs.select_columns(picked.iter()))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
