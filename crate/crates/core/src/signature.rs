//! Truncated signatures of piecewise-linear paths, the shuffle product and
//! a regression experiment showing linear functionals on the signature
//! approximating a nonlinear path functional.
//!
//! Letters of a [`Word`] are 0-based path coordinates. For the
//! time-augmented paths used here, letter 0 is time.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_LEVEL: usize = 5;
pub const MAX_DIM: usize = 4;

fn check_shape(dim: usize, level: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::InvalidArgument(format!(
            "signature dimension must be in 1..={MAX_DIM}, got {dim}"
        )));
    }
    if level > MAX_LEVEL {
        return Err(Error::InvalidArgument(format!(
            "signature level must be at most {MAX_LEVEL}, got {level}"
        )));
    }
    Ok(())
}

/// Levels `0..=N` of the signature, level `n` stored densely with
/// `dim^n` entries in lexicographic word order.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedSignature {
    dim: usize,
    levels: Vec<Vec<f64>>,
}

impl TruncatedSignature {
    /// The signature of a constant path: `(1, 0, 0, ...)`.
    pub fn trivial(dim: usize, level: usize) -> Result<Self> {
        check_shape(dim, level)?;
        let mut levels: Vec<Vec<f64>> = (0..=level).map(|n| vec![0.0; dim.pow(n as u32)]).collect();
        levels[0][0] = 1.0;
        Ok(TruncatedSignature { dim, levels })
    }

    /// Tensor exponential of one linear segment: level `n` is `v^{⊗n}/n!`.
    pub fn of_segment(v: &[f64], level: usize) -> Result<Self> {
        let mut sig = Self::trivial(v.len(), level)?;
        for n in 1..=level {
            let (lo, hi) = sig.levels.split_at_mut(n);
            let prev = &lo[n - 1];
            let cur = &mut hi[0];
            for (i, p) in prev.iter().enumerate() {
                for (j, x) in v.iter().enumerate() {
                    cur[i * v.len() + j] = p * x / n as f64;
                }
            }
        }
        Ok(sig)
    }

    /// Chen's identity: the signature of `self` followed by `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim || self.level() != other.level() {
            return Err(Error::InvalidArgument(format!(
                "cannot concatenate signatures of shape ({}, {}) and ({}, {})",
                self.dim,
                self.level(),
                other.dim,
                other.level()
            )));
        }
        let mut out = Self::trivial(self.dim, self.level())?;
        for n in 1..=self.level() {
            let dst = &mut out.levels[n];
            for i in 0..=n {
                let (a, b) = (&self.levels[i], &other.levels[n - i]);
                for (ia, x) in a.iter().enumerate() {
                    if *x == 0.0 {
                        continue;
                    }
                    let base = ia * b.len();
                    for (ib, y) in b.iter().enumerate() {
                        dst[base + ib] += x * y;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Signature of the piecewise-linear interpolation of `points`.
    pub fn of_path(points: &[Vec<f64>], level: usize) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument("a path needs at least two points".into()));
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidArgument("path points have inconsistent dimension".into()));
        }
        let mut sig = Self::trivial(dim, level)?;
        for w in points.windows(2) {
            let v: Vec<f64> = w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect();
            sig = sig.concat(&Self::of_segment(&v, level)?)?;
        }
        Ok(sig)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level_values(&self, n: usize) -> &[f64] {
        &self.levels[n]
    }

    /// `⟨word, S⟩`; zero for words longer than the truncation level.
    pub fn coeff(&self, word: &Word) -> Result<f64> {
        let n = word.len();
        if n > self.level() {
            return Ok(0.0);
        }
        let mut idx = 0;
        for &l in &word.0 {
            if l >= self.dim {
                return Err(Error::InvalidArgument(format!(
                    "letter {l} outside the alphabet 0..{}",
                    self.dim
                )));
            }
            idx = idx * self.dim + l;
        }
        Ok(self.levels[n][idx])
    }

    /// `⟨Σ c_w w, S⟩`.
    pub fn pair(&self, combination: &BTreeMap<Word, u64>) -> Result<f64> {
        let mut s = 0.0;
        for (w, &c) in combination {
            s += c as f64 * self.coeff(w)?;
        }
        Ok(s)
    }

    /// All levels concatenated, level 0 first.
    pub fn flatten(&self) -> Vec<f64> {
        self.levels.concat()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Word(pub Vec<usize>);

impl Word {
    pub fn new(letters: impl Into<Vec<usize>>) -> Self {
        Word(letters.into())
    }

    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// All interleavings of `u` and `v` that keep each word's internal order,
/// with multiplicities.
pub fn shuffle(u: &Word, v: &Word) -> BTreeMap<Word, u64> {
    let mut out = BTreeMap::new();
    let mut buf = Vec::with_capacity(u.len() + v.len());
    fn rec(u: &[usize], v: &[usize], buf: &mut Vec<usize>, out: &mut BTreeMap<Word, u64>) {
        if u.is_empty() && v.is_empty() {
            *out.entry(Word(buf.clone())).or_insert(0) += 1;
            return;
        }
        if let Some((&a, rest)) = u.split_first() {
            buf.push(a);
            rec(rest, v, buf, out);
            buf.pop();
        }
        if let Some((&b, rest)) = v.split_first() {
            buf.push(b);
            rec(u, rest, buf, out);
            buf.pop();
        }
    }
    rec(&u.0, &v.0, &mut buf, &mut out);
    out
}

/// Path functionals used as regression targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Target {
    /// A single signature coordinate.
    Word { letters: Vec<usize> },
    /// `∫ X^i dX^j` along the piecewise-linear path.
    IteratedIntegral { i: usize, j: usize },
    /// Terminal value of `dZ = -Z dt + cos(Z) dX¹ + ½ sin(Z) dX²`, `Z_0 = 0`,
    /// solved along the piecewise-linear path.
    NonlinearRde,
}

impl Target {
    pub fn eval(&self, path: &[Vec<f64>]) -> Result<f64> {
        match self {
            Target::Word { letters } => {
                let w = Word::new(letters.clone());
                TruncatedSignature::of_path(path, w.len())?.coeff(&w)
            }
            Target::IteratedIntegral { i, j } => {
                // exact on linear segments: midpoint rule for ∫ X^i dX^j
                let mut s = 0.0;
                for w in path.windows(2) {
                    s += 0.5 * (w[0][*i] + w[1][*i]) * (w[1][*j] - w[0][*j]);
                }
                Ok(s - path[0][*i] * (path[path.len() - 1][*j] - path[0][*j]))
            }
            Target::NonlinearRde => Ok(nonlinear_rde(path, 8)),
        }
    }
}

/// RK4 with `substeps` per linear segment of the 3-channel path `(t, X¹, X²)`.
fn nonlinear_rde(path: &[Vec<f64>], substeps: usize) -> f64 {
    let f = |z: f64, v: &[f64]| -z * v[0] + z.cos() * v[1] + 0.5 * z.sin() * v[2];
    let mut z = 0.0;
    for w in path.windows(2) {
        let v: Vec<f64> = (0..3).map(|c| (w[1][c] - w[0][c]) / substeps as f64).collect();
        for _ in 0..substeps {
            let k1 = f(z, &v);
            let k2 = f(z + 0.5 * k1, &v);
            let k3 = f(z + 0.5 * k2, &v);
            let k4 = f(z + k3, &v);
            z += (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
        }
    }
    z
}

/// Time-augmented two-channel Brownian path `(t, W¹, W²)` on `[0, horizon]`.
pub fn brownian_path(rng: &mut ChaCha8Rng, steps: usize, horizon: f64) -> Vec<Vec<f64>> {
    let dt = horizon / steps as f64;
    let sd = dt.sqrt();
    let mut p = vec![vec![0.0, 0.0, 0.0]];
    for k in 0..steps {
        let last = &p[k];
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        p.push(vec![(k + 1) as f64 * dt, last[1] + sd * a, last[2] + sd * b]);
    }
    p
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniversalityConfig {
    pub target: Target,
    pub max_level: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub steps: usize,
    pub horizon: f64,
    pub ridge: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for UniversalityConfig {
    fn default() -> Self {
        UniversalityConfig {
            target: Target::NonlinearRde,
            max_level: 4,
            train_samples: 2000,
            test_samples: 1000,
            steps: 50,
            horizon: 1.0,
            ridge: 1e-8,
            epsilon: 0.05,
            seed: 0,
        }
    }
}

/// Fitted linear functional and its held-out accuracy at one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniversalityFit {
    pub level: usize,
    /// Coefficients on the flattened signature, level 0 first.
    pub coefficients: Vec<f64>,
    pub train_rmse: f64,
    pub test_rmse: f64,
    /// Fraction of held-out paths with `|F - ⟨ℓ, S⟩| >= ε`.
    pub failure_rate: f64,
}

/// Samples `(path, F(path))` for the experiment.
pub fn universality_samples(config: &UniversalityConfig) -> Result<Vec<(Vec<Vec<f64>>, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.train_samples + config.test_samples)
        .map(|_| {
            let p = brownian_path(&mut rng, config.steps, config.horizon);
            let y = config.target.eval(&p)?;
            Ok((p, y))
        })
        .collect()
}

/// Ridge regression of the target onto level-`≤ level` signature features;
/// the first `train` samples are used for fitting, the rest for testing.
pub fn universality_fit(
    samples: &[(Vec<Vec<f64>>, f64)],
    train: usize,
    level: usize,
    ridge: f64,
    epsilon: f64,
) -> Result<UniversalityFit> {
    if train == 0 || train >= samples.len() {
        return Err(Error::InvalidArgument("need both training and held-out samples".into()));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument("ridge must be nonnegative".into()));
    }
    let feats: Vec<Vec<f64>> = samples
        .iter()
        .map(|(p, _)| TruncatedSignature::of_path(p, level).map(|s| s.flatten()))
        .collect::<Result<_>>()?;
    let m = feats[0].len();
    let x = DMatrix::from_fn(train, m, |i, j| feats[i][j]);
    let y = DVector::from_fn(train, |i, _| samples[i].1);
    let mut gram = x.transpose() * &x;
    for i in 0..m {
        gram[(i, i)] += ridge * train as f64;
    }
    let singular = || {
        Error::InvalidArgument(format!(
            "signature regression at level {level} is singular; use a positive ridge (got {ridge})"
        ))
    };
    let chol = gram.clone().cholesky().ok_or_else(singular)?;
    let diag_max = (0..m).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    let l_min = (0..m).map(|i| chol.l_dirty()[(i, i)]).fold(f64::INFINITY, f64::min);
    if l_min * l_min < 1e-14 * diag_max {
        return Err(singular());
    }
    let coef = chol.solve(&(x.transpose() * &y));
    let predict = |f: &[f64]| f.iter().zip(coef.iter()).map(|(a, b)| a * b).sum::<f64>();
    let rmse = |range: std::ops::Range<usize>| {
        let n = range.len() as f64;
        (range.map(|i| (predict(&feats[i]) - samples[i].1).powi(2)).sum::<f64>() / n).sqrt()
    };
    let test = train..samples.len();
    let failures = test
        .clone()
        .filter(|&i| (predict(&feats[i]) - samples[i].1).abs() >= epsilon)
        .count();
    Ok(UniversalityFit {
        level,
        coefficients: coef.iter().copied().collect(),
        train_rmse: rmse(0..train),
        test_rmse: rmse(test.clone()),
        failure_rate: failures as f64 / test.len() as f64,
    })
}

/// Fits at levels `1..=max_level` on one shared sample.
pub fn universality_sweep(config: &UniversalityConfig) -> Result<Vec<UniversalityFit>> {
    check_shape(3, config.max_level)?;
    if config.max_level == 0 {
        return Err(Error::InvalidArgument("max_level must be at least 1".into()));
    }
    let samples = universality_samples(config)?;
    (1..=config.max_level)
        .map(|n| universality_fit(&samples, config.train_samples, n, config.ridge, config.epsilon))
        .collect()
}

/// `level,test_rmse,train_rmse,failure_rate` rows.
pub fn sweep_csv(fits: &[UniversalityFit]) -> String {
    let mut s = String::from("level,test_rmse,train_rmse,failure_rate\n");
    for f in fits {
        s += &format!("{},{},{},{}\n", f.level, f.test_rmse, f.train_rmse, f.failure_rate);
    }
    s
}
