use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{distance, Arena, Point, SimError};
use crate::numerics::Tensor;

// Spread of the random projection, relative to 1/sqrt(raw_dim).
const PROJECTION_GAIN: f64 = 12.0;

/// Geometric state of one step: robot coordinates, per-robot displacement
/// since the previous step, and each robot's distance to lion, ball and
/// depot. The propositions themselves are deliberately absent.
pub fn raw_state(arena: &Arena, now: &[Point], prev: &[Point]) -> Vec<f64> {
    let mut out = Vec::with_capacity(7 * now.len());
    out.extend(now.iter().flat_map(|p| [p[0], p[1]]));
    out.extend(
        now.iter()
            .zip(prev)
            .flat_map(|(p, q)| [p[0] - q[0], p[1] - q[1]]),
    );
    out.extend(
        now.iter()
            .flat_map(|&p| arena.sites().map(|site| distance(p, site))),
    );
    out
}

/// Fixed random affine map followed by `tanh`, standing in for a pretrained
/// video backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureEncoder {
    weights: Tensor,
    bias: Vec<f64>,
}

impl FeatureEncoder {
    pub fn new(num_robots: usize, feature_dim: usize, encoder_seed: u64) -> Result<Self, SimError> {
        if feature_dim == 0 || num_robots == 0 {
            return Err(SimError::Config("feature_dim and num_robots must be positive".into()));
        }
        let raw_dim = 7 * num_robots;
        let mut rng = ChaCha8Rng::seed_from_u64(encoder_seed);
        let scale = PROJECTION_GAIN / (raw_dim as f64).sqrt();
        let weights = Tensor::from_fn(feature_dim, raw_dim, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        });
        // centre each unit near a random operating point of the raw state
        let bias = (0..feature_dim)
            .map(|f| {
                let centre: f64 = (0..raw_dim)
                    .map(|j| weights.get(f, j) * rng.random_range(0.0..1.0))
                    .sum();
                -centre
            })
            .collect();
        Ok(Self { weights, bias })
    }

    pub fn raw_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn encode_row(&self, raw: &[f64]) -> Result<Vec<f64>, SimError> {
        if raw.len() != self.raw_dim() {
            return Err(SimError::DimensionMismatch {
                expected: self.raw_dim(),
                actual: raw.len(),
            });
        }
        Ok((0..self.feature_dim())
            .map(|f| {
                let z: f64 = self
                    .weights
                    .row(f)
                    .iter()
                    .zip(raw)
                    .map(|(w, x)| w * x)
                    .sum();
                (z + self.bias[f]).tanh()
            })
            .collect())
    }
}

/// `T×D` feature matrix for a trajectory, with additive Gaussian noise.
///
/// Values are rounded to `f32` so that in-memory episodes match what is
/// written to and read back from disk.
pub fn encode_features(
    positions: &[Vec<Point>],
    arena: &Arena,
    encoder: &FeatureEncoder,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> Result<Tensor, SimError> {
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| SimError::Config(e.to_string()))?;
    let d = encoder.feature_dim();
    let mut data = Vec::with_capacity(positions.len() * d);
    for (t, now) in positions.iter().enumerate() {
        let prev = if t == 0 { now } else { &positions[t - 1] };
        if prev.len() != now.len() {
            return Err(SimError::DimensionMismatch {
                expected: 7 * prev.len(),
                actual: 7 * now.len(),
            });
        }
        let row = encoder.encode_row(&raw_state(arena, now, prev))?;
        data.extend(row.into_iter().map(|v| (v + noise.sample(rng)) as f32 as f64));
    }
    Ok(Tensor::new(positions.len(), d, data)?)
}
