//! Geometric initialization: the geometry MLP starts out approximating the
//! signed distance to a sphere of a given radius, so densities are sensible
//! from step zero. Hidden layers get He-style Gaussian weights; the final
//! distance layer gets mean sqrt(pi)/sqrt(fan_in), tiny spread, and bias
//! -radius. Fourier columns of any layer that consumes an encoding are
//! zeroed so the sphere structure is carried by the raw point alone.

use super::{FieldParams, FourierEncoding, Linear, FOURIER_LEVELS, HIDDEN};
use crate::ad::Tensor;
use crate::geom::Aabb;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Standard-normal sampler via Box-Muller on top of any RngCore, so the
/// stream is pinned by this crate rather than an external distribution
/// implementation.
pub struct NormalSampler<R: RngCore> {
    rng: R,
    spare: Option<f64>,
}

impl<R: RngCore> NormalSampler<R> {
    pub fn new(rng: R) -> NormalSampler<R> {
        NormalSampler { rng, spare: None }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite.
        let u1: f64 = 1.0 - self.rng.gen::<f64>();
        let u2: f64 = self.rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn rng_mut(&mut self) -> &mut R {
        &mut self.rng
    }
}

fn gaussian_linear(
    sampler: &mut NormalSampler<ChaCha8Rng>,
    input: usize,
    output: usize,
    mean: f64,
    std: f64,
    bias: f64,
) -> Linear {
    let mut w = Tensor::zeros(input, output);
    for v in w.data_mut() {
        *v = mean + std * sampler.sample();
    }
    let b = Tensor::filled(1, output, bias);
    Linear { w, b }
}

fn uniform_linear(sampler: &mut NormalSampler<ChaCha8Rng>, input: usize, output: usize) -> Linear {
    let bound = 1.0 / (input as f64).sqrt();
    let mut w = Tensor::zeros(input, output);
    for v in w.data_mut() {
        *v = sampler.rng_mut().gen_range(-bound..bound);
    }
    let mut b = Tensor::zeros(1, output);
    for v in b.data_mut() {
        *v = sampler.rng_mut().gen_range(-bound..bound);
    }
    Linear { w, b }
}

/// Zero every weight row that reads a sin/cos feature, leaving only the raw
/// xyz rows of the encoded segment (which starts at `offset` within the
/// layer input).
fn zero_fourier_rows(layer: &mut Linear, encoding: &FourierEncoding, offset: usize) {
    let raw = if encoding.include_input { 3 } else { 0 };
    let cols = layer.w.cols();
    for row in (offset + raw)..(offset + encoding.output_dim()) {
        for c in 0..cols {
            layer.w.set(row, c, 0.0);
        }
    }
}

impl FieldParams {
    /// Deterministic geometric initialization. After this, the geometry head
    /// approximates `|p| - radius` and the SRDF output starts near the same
    /// sphere; visibility and color heads get ordinary uniform fan-in init.
    pub fn init_geometric(bounds: Aabb, radius: f64, seed: u64) -> FieldParams {
        let mut params = FieldParams::empty(bounds);
        let mut sampler = NormalSampler::new(ChaCha8Rng::seed_from_u64(seed));
        let encoding = FourierEncoding::new(FOURIER_LEVELS);
        let enc_dim = encoding.output_dim();

        // Hidden trunk: W ~ N(0, sqrt(2/fan_out)), zero bias.
        let he = |out: usize| (2.0 / out as f64).sqrt();
        params.geo_layers[0] = gaussian_linear(&mut sampler, enc_dim, HIDDEN, 0.0, he(HIDDEN), 0.0);
        zero_fourier_rows(&mut params.geo_layers[0], &encoding, 0);
        for i in 1..7 {
            params.geo_layers[i] =
                gaussian_linear(&mut sampler, HIDDEN, HIDDEN, 0.0, he(HIDDEN), 0.0);
        }

        // Output layer of the trunk (distance and feature heads alike):
        // mean sqrt(pi)/sqrt(fan_in), tiny std, bias -radius.
        let mean = std::f64::consts::PI.sqrt() / (HIDDEN as f64).sqrt();
        params.geo_sdf = gaussian_linear(&mut sampler, HIDDEN, 1, mean, 1e-4, -radius);
        params.geo_feat = gaussian_linear(&mut sampler, HIDDEN, HIDDEN, mean, 1e-4, -radius);

        // SRDF hidden layer: He weights with the encoded-position sin/cos
        // rows zeroed (direction and feature rows stay Gaussian).
        let srdf_in = enc_dim + 3 + HIDDEN;
        params.srdf_hidden = gaussian_linear(&mut sampler, srdf_in, HIDDEN, 0.0, he(HIDDEN), 0.0);
        zero_fourier_rows(&mut params.srdf_hidden, &encoding, 0);
        // SRDF distance output mirrors the geometry head so both start out
        // as roughly the same sphere; the visibility logit is generic.
        params.srdf_out = gaussian_linear(&mut sampler, HIDDEN, 1, mean, 1e-4, -radius);
        params.srdf_vis = uniform_linear(&mut sampler, HIDDEN, 1);

        let color_in = enc_dim + 3 + 3 + HIDDEN;
        params.color_hidden = uniform_linear(&mut sampler, color_in, HIDDEN);
        params.color_out = uniform_linear(&mut sampler, HIDDEN, 3);
        params
    }
}
