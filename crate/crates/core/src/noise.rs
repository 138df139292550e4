//! Seeded Brownian and fractional Brownian driving noise on uniform grids.
//!
//! Fractional Gaussian noise is generated exactly by circulant embedding
//! (Davies–Harte); when the embedding has a negative eigenvalue the sampler
//! falls back to a Cholesky factor of the Toeplitz covariance. Every
//! trajectory draws from its own ChaCha stream selected by its index, so
//! batches can be generated in any order or in parallel with identical results.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseKind {
    Brownian,
    Fractional { hurst: f64 },
}

impl NoiseKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseKind::Brownian => Ok(()),
            NoiseKind::Fractional { hurst } if hurst > 0.0 && hurst < 1.0 => Ok(()),
            NoiseKind::Fractional { hurst } => Err(Error::InvalidArgument(format!(
                "Hurst exponent must lie in (0, 1), got {hurst}"
            ))),
        }
    }

    /// Exponent `H` with Brownian motion as `H = 1/2`.
    pub fn hurst(&self) -> f64 {
        match *self {
            NoiseKind::Brownian => 0.5,
            NoiseKind::Fractional { hurst } => hurst,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub dim: usize,
    pub horizon: f64,
    pub steps: usize,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        if self.steps == 0 || self.dim == 0 {
            return Err(Error::InvalidArgument(
                "noise needs at least one step and one channel".into(),
            ));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        Ok(())
    }
}

/// `E[W^H_s W^H_t] = (s^{2H} + t^{2H} - |t - s|^{2H}) / 2`.
pub fn fbm_covariance(s: f64, t: f64, hurst: f64) -> f64 {
    let e = 2.0 * hurst;
    0.5 * (s.powf(e) + t.powf(e) - (t - s).abs().powf(e))
}

/// Lag-`k` autocovariance of unit-step fractional Gaussian noise.
pub fn fgn_autocovariance(k: usize, hurst: f64) -> f64 {
    let e = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(e) + (k - 1.0).abs().powf(e) - 2.0 * k.powf(e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FgnMethod {
    CirculantEmbedding,
    Cholesky,
}

enum Generator {
    White,
    Embedding { sqrt_eig: Vec<f64>, fft: Arc<dyn Fft<f64>> },
    Cholesky(DMatrix<f64>),
}

/// Exact sampler of `n` consecutive unit-step fGN values.
pub struct FgnSampler {
    steps: usize,
    hurst: f64,
    generator: Generator,
}

impl std::fmt::Debug for FgnSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FgnSampler")
            .field("steps", &self.steps)
            .field("hurst", &self.hurst)
            .field("method", &self.method())
            .finish()
    }
}

impl FgnSampler {
    pub fn new(steps: usize, hurst: f64) -> Result<Self> {
        NoiseKind::Fractional { hurst }.validate()?;
        if hurst == 0.5 {
            return Ok(FgnSampler {
                steps,
                hurst,
                generator: Generator::White,
            });
        }
        match Self::embedding(steps, hurst) {
            Some(generator) => Ok(FgnSampler {
                steps,
                hurst,
                generator,
            }),
            None => Self::with_method(steps, hurst, FgnMethod::Cholesky),
        }
    }

    pub fn with_method(steps: usize, hurst: f64, method: FgnMethod) -> Result<Self> {
        NoiseKind::Fractional { hurst }.validate()?;
        let generator = match method {
            FgnMethod::CirculantEmbedding => {
                Self::embedding(steps, hurst).ok_or(Error::CovarianceNotPositive { hurst, steps })?
            }
            FgnMethod::Cholesky => {
                let cov = DMatrix::from_fn(steps, steps, |i, j| fgn_autocovariance(i.abs_diff(j), hurst));
                let chol = cov.cholesky().ok_or(Error::CovarianceNotPositive { hurst, steps })?;
                Generator::Cholesky(chol.unpack())
            }
        };
        Ok(FgnSampler {
            steps,
            hurst,
            generator,
        })
    }

    fn embedding(n: usize, hurst: f64) -> Option<Generator> {
        let m = 2 * n;
        let mut row: Vec<Complex<f64>> = (0..m)
            .map(|j| {
                let lag = if j <= n { j } else { m - j };
                Complex::new(fgn_autocovariance(lag, hurst), 0.0)
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(m);
        fft.process(&mut row);
        let scale = row.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
        if row.iter().any(|c| c.re < -1e-10 * scale) {
            return None;
        }
        let sqrt_eig = row.iter().map(|c| c.re.max(0.0).sqrt()).collect();
        Some(Generator::Embedding { sqrt_eig, fft })
    }

    pub fn method(&self) -> FgnMethod {
        match self.generator {
            Generator::Cholesky(_) => FgnMethod::Cholesky,
            _ => FgnMethod::CirculantEmbedding,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Fill `out` (length `steps`) with unit-step fGN.
    pub fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let n = self.steps;
        debug_assert_eq!(out.len(), n);
        match &self.generator {
            Generator::White => {
                for o in out.iter_mut() {
                    *o = StandardNormal.sample(rng);
                }
            }
            Generator::Cholesky(l) => {
                let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..=i).map(|j| l[(i, j)] * z[j]).sum();
                }
            }
            Generator::Embedding { sqrt_eig, fft } => {
                let m = 2 * n;
                let mf = m as f64;
                let mut w = vec![Complex::new(0.0, 0.0); m];
                let z0: f64 = StandardNormal.sample(rng);
                let zn: f64 = StandardNormal.sample(rng);
                w[0] = Complex::new(sqrt_eig[0] * z0 / mf.sqrt(), 0.0);
                w[n] = Complex::new(sqrt_eig[n] * zn / mf.sqrt(), 0.0);
                for k in 1..n {
                    let u: f64 = StandardNormal.sample(rng);
                    let v: f64 = StandardNormal.sample(rng);
                    let a = sqrt_eig[k] / (2.0 * mf).sqrt();
                    w[k] = Complex::new(a * u, a * v);
                    w[m - k] = Complex::new(a * u, -a * v);
                }
                fft.process(&mut w);
                for (o, c) in out.iter_mut().zip(&w) {
                    *o = c.re;
                }
            }
        }
    }
}

/// Noise stream for trajectory `index` of a batch seeded with `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Increments of a batch of independent noise paths on one uniform grid,
/// stored as `[trajectory][step][channel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBatch {
    pub kind: NoiseKind,
    pub dim: usize,
    pub horizon: f64,
    pub steps: usize,
    pub count: usize,
    increments: Vec<f64>,
}

impl NoiseBatch {
    /// Sample trajectories `first..first + count` of the stream family `seed`.
    pub fn sample(
        kind: NoiseKind,
        dim: usize,
        horizon: f64,
        steps: usize,
        seed: u64,
        first: u64,
        count: usize,
    ) -> Result<Self> {
        NoiseSpec {
            kind,
            dim,
            horizon,
            steps,
            seed,
        }
        .validate()?;
        let dt = horizon / steps as f64;
        let hurst = kind.hurst();
        let sampler = FgnSampler::new(steps, hurst)?;
        let scale = dt.powf(hurst);
        let mut increments = vec![0.0; count * steps * dim];
        let mut channel = vec![0.0; steps];
        for i in 0..count {
            let mut rng = trajectory_rng(seed, first + i as u64);
            let block = &mut increments[i * steps * dim..(i + 1) * steps * dim];
            for c in 0..dim {
                sampler.sample_into(&mut rng, &mut channel);
                for (k, v) in channel.iter().enumerate() {
                    block[k * dim + c] = scale * v;
                }
            }
        }
        Ok(NoiseBatch {
            kind,
            dim,
            horizon,
            steps,
            count,
            increments,
        })
    }

    /// Batch from explicit increments laid out `[trajectory][step][channel]`.
    pub fn from_increments(
        kind: NoiseKind,
        dim: usize,
        horizon: f64,
        steps: usize,
        count: usize,
        increments: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 || steps == 0 || count == 0 || !(horizon > 0.0) {
            return Err(Error::InvalidArgument("noise batch dimensions must be positive".into()));
        }
        if increments.len() != count * steps * dim {
            return Err(Error::InvalidArgument(format!(
                "expected {} increments, got {}",
                count * steps * dim,
                increments.len()
            )));
        }
        Ok(NoiseBatch {
            kind,
            dim,
            horizon,
            steps,
            count,
            increments,
        })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// The first `steps` increments of every trajectory, on `[0, steps * dt]`.
    pub fn truncate(&self, steps: usize) -> Result<Self> {
        if steps == 0 || steps > self.steps {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate {} steps to {steps}",
                self.steps
            )));
        }
        let mut increments = Vec::with_capacity(self.count * steps * self.dim);
        for i in 0..self.count {
            let o = i * self.steps * self.dim;
            increments.extend_from_slice(&self.increments[o..o + steps * self.dim]);
        }
        // keep the step size bit-identical so the truncated grid is a prefix
        let dt = self.dt();
        let mut horizon = dt * steps as f64;
        for _ in 0..4 {
            let d = horizon / steps as f64;
            if d == dt {
                break;
            }
            horizon = if d < dt { horizon.next_up() } else { horizon.next_down() };
        }
        Ok(NoiseBatch {
            horizon,
            steps,
            increments,
            ..self.clone()
        })
    }

    pub fn increment(&self, trajectory: usize, step: usize) -> &[f64] {
        let o = (trajectory * self.steps + step) * self.dim;
        &self.increments[o..o + self.dim]
    }

    /// `[count, dim]` increments of step `k` across the batch.
    pub fn step_tensor(&self, k: usize) -> Tensor {
        let mut data = Vec::with_capacity(self.count * self.dim);
        for i in 0..self.count {
            data.extend_from_slice(self.increment(i, k));
        }
        Tensor::new([self.count, self.dim], data).expect("positive dims")
    }

    /// Sum blocks of `factor` consecutive increments; the coarse path agrees
    /// with the fine path at every coarse grid point.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(Error::InvalidArgument(format!(
                "cannot coarsen {} steps by a factor of {factor}",
                self.steps
            )));
        }
        let steps = self.steps / factor;
        let mut increments = vec![0.0; self.count * steps * self.dim];
        for i in 0..self.count {
            for k in 0..self.steps {
                let dst = (i * steps + k / factor) * self.dim;
                for (c, v) in self.increment(i, k).iter().enumerate() {
                    increments[dst + c] += v;
                }
            }
        }
        Ok(NoiseBatch {
            steps,
            increments,
            ..self.clone()
        })
    }

    /// Rows `range` of the batch as a new batch.
    pub fn slice(&self, start: usize, len: usize) -> NoiseBatch {
        let w = self.steps * self.dim;
        NoiseBatch {
            count: len,
            increments: self.increments[start * w..(start + len) * w].to_vec(),
            ..self.clone()
        }
    }

    pub fn path(&self, trajectory: usize) -> NoisePath {
        let w = self.steps * self.dim;
        NoisePath {
            dim: self.dim,
            horizon: self.horizon,
            increments: self.increments[trajectory * w..(trajectory + 1) * w].to_vec(),
        }
    }
}

/// One sampled noise path.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    pub dim: usize,
    pub horizon: f64,
    /// `[step][channel]`.
    pub increments: Vec<f64>,
}

impl NoisePath {
    pub fn steps(&self) -> usize {
        self.increments.len() / self.dim
    }

    pub fn grid(&self) -> Vec<f64> {
        let k = self.steps();
        (0..=k).map(|i| self.horizon * i as f64 / k as f64).collect()
    }

    /// Cumulative values at every grid point, `[(steps + 1) * dim]`.
    pub fn values(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let mut acc = vec![0.0; self.dim];
        for inc in self.increments.chunks(self.dim) {
            for (a, v) in acc.iter_mut().zip(inc) {
                *a += v;
            }
            out.extend_from_slice(&acc);
        }
        out
    }

    /// CSV with columns `t, channel_0, …`, one row per grid point.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for c in 0..self.dim {
            let _ = write!(s, ",channel_{c}");
        }
        s.push('\n');
        let values = self.values();
        for (t, row) in self.grid().iter().zip(values.chunks(self.dim)) {
            let _ = write!(s, "{t}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

pub fn sample_brownian(spec: &NoiseSpec) -> Result<NoisePath> {
    if spec.kind != NoiseKind::Brownian {
        return Err(Error::InvalidArgument("sample_brownian needs kind = brownian".into()));
    }
    Ok(NoiseBatch::sample(spec.kind, spec.dim, spec.horizon, spec.steps, spec.seed, 0, 1)?.path(0))
}

pub fn sample_fgn(spec: &NoiseSpec) -> Result<NoisePath> {
    if !matches!(spec.kind, NoiseKind::Fractional { .. }) {
        return Err(Error::InvalidArgument("sample_fgn needs kind = fractional".into()));
    }
    Ok(NoiseBatch::sample(spec.kind, spec.dim, spec.horizon, spec.steps, spec.seed, 0, 1)?.path(0))
}
