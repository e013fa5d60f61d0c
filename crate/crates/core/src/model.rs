//! Affine-mean Gaussian families `y ~ N(Aθ + b, Σ)`, response patterns and
//! the observed/missing split of a response vector.
//!
//! Marginals and conditionals are computed in closed form, so the
//! factorization `f(y;θ) = f(y_obs;θ) · f(y_mis | y_obs;θ)` holds exactly
//! and both factors keep the original parameter θ.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{draw_gaussian, seeded_rng};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const SYMMETRY_TOL: f64 = 1e-12;
/// Relative singular-value cutoff used for rank and null-space decisions.
const RANK_TOL: f64 = 1e-10;

/// A multivariate normal distribution with an explicit mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `y ~ N(Aθ + b, Σ)` with `A` of shape `k × d`.
#[derive(Debug, Clone)]
pub struct AffineGaussianFamily {
    a: DMatrix<f64>,
    b: DVector<f64>,
    sigma: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl PartialEq for AffineGaussianFamily {
    fn eq(&self, other: &Self) -> bool {
        self.a == other.a && self.b == other.b && self.sigma == other.sigma
    }
}

impl AffineGaussianFamily {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let k = a.nrows();
        if k == 0 {
            return Err(Error::InvalidParameter("family dimension k must be >= 1".into()));
        }
        if a.ncols() == 0 {
            return Err(Error::InvalidParameter("parameter dimension d must be >= 1".into()));
        }
        if b.len() != k {
            return Err(Error::dim("mean offset b", k, b.len()));
        }
        if sigma.nrows() != k || sigma.ncols() != k {
            return Err(Error::dim("covariance Sigma", k, sigma.nrows()));
        }
        if a.iter().chain(b.iter()).chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("family entries must be finite".into()));
        }
        for i in 0..k {
            for j in 0..i {
                let scale = 1.0 + sigma[(i, j)].abs();
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        let chol = sigma.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let l = chol.l();
        if (0..k).any(|i| !(l[(i, i)] > 0.0)) {
            return Err(Error::NotPositiveDefinite);
        }
        let log_det = 2.0 * (0..k).map(|i| l[(i, i)].ln()).sum::<f64>();
        Ok(Self {
            a,
            b,
            sigma,
            chol,
            log_det,
        })
    }

    /// Build from row-major slices.
    pub fn from_row_major(k: usize, d: usize, a: &[f64], b: &[f64], sigma: &[f64]) -> Result<Self> {
        if a.len() != k * d {
            return Err(Error::dim("A (row-major)", k * d, a.len()));
        }
        if sigma.len() != k * k {
            return Err(Error::dim("Sigma (row-major)", k * k, sigma.len()));
        }
        Self::new(
            DMatrix::from_row_slice(k, d, a),
            DVector::from_column_slice(b),
            DMatrix::from_row_slice(k, k, sigma),
        )
    }

    /// Bivariate normal with mean `(θ, θ/2)` and covariance
    /// `[[1, 1/2], [1/2, 1]]`. Not complete: `E[Y₁ − 2Y₂] = 0` for every θ.
    pub fn example_3_1() -> Self {
        Self::from_row_major(2, 1, &[1.0, 0.5], &[0.0, 0.0], &[1.0, 0.5, 0.5, 1.0]).expect("valid family")
    }

    /// `k` i.i.d. `N(θ, 1)` coordinates.
    pub fn iid_normal(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        Self::new(
            DMatrix::from_element(k, 1, 1.0),
            DVector::zeros(k),
            DMatrix::identity(k, k),
        )
    }

    /// Same covariance as [`example_3_1`](Self::example_3_1) but `A = I₂`,
    /// so the mean ranges over all of ℝ² and the family is complete.
    pub fn complete_control() -> Self {
        Self::from_row_major(2, 2, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], &[1.0, 0.5, 0.5, 1.0]).expect("valid family")
    }

    /// Scalar `N(θ, 1)`.
    pub fn scalar_normal() -> Self {
        Self::from_row_major(1, 1, &[1.0], &[0.0], &[1.0]).expect("valid family")
    }

    pub fn k(&self) -> usize {
        self.a.nrows()
    }

    pub fn d(&self) -> usize {
        self.a.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Lower Cholesky factor of Σ.
    pub fn sigma_chol(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.d() {
            return Err(Error::dim("theta", self.d(), theta.len()));
        }
        Ok(())
    }

    pub fn mean(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        Ok(&self.a * theta + &self.b)
    }

    pub fn log_density(&self, theta: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        if y.len() != self.k() {
            return Err(Error::dim("y", self.k(), y.len()));
        }
        let resid = y - self.mean(theta)?;
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&resid)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        Ok(-0.5 * (self.k() as f64 * LN_2PI + self.log_det + z.norm_squared()))
    }

    pub fn density(&self, theta: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        Ok(self.log_density(theta, y)?.exp())
    }

    /// Family of the observed coordinates: rows of `A`, `b` and the
    /// rows/columns of `Σ` selected by `pattern`.
    pub fn marginal(&self, pattern: &ResponsePattern) -> Result<Self> {
        self.check_pattern(pattern)?;
        let obs = pattern.observed_indices();
        if obs.is_empty() {
            return Err(Error::EmptyMarginal);
        }
        Self::new(
            self.a.select_rows(&obs),
            self.b.select_rows(&obs),
            self.sigma.select_rows(&obs).select_columns(&obs),
        )
    }

    /// Log density of the observed subvector, with the all-missing pattern
    /// contributing `ln 1 = 0`.
    pub fn marginal_log_density(
        &self,
        pattern: &ResponsePattern,
        observed: &[f64],
        theta: &DVector<f64>,
    ) -> Result<f64> {
        let cond = self.conditioner(pattern)?;
        if observed.len() != cond.observed.len() {
            return Err(Error::dim("observed values", cond.observed.len(), observed.len()));
        }
        Ok(cond.marginal_log_density(&self.mean(theta)?, observed))
    }

    /// Distribution of the missing coordinates given the observed ones:
    /// mean `μ_m + Σ_mo Σ_oo⁻¹ (y_o − μ_o)`, covariance
    /// `Σ_mm − Σ_mo Σ_oo⁻¹ Σ_om`.
    pub fn conditional(&self, pattern: &ResponsePattern, observed: &[f64], theta: &DVector<f64>) -> Result<Gaussian> {
        let cond = self.conditioner(pattern)?;
        if cond.missing.is_empty() {
            return Err(Error::NoMissingCoordinates);
        }
        if observed.len() != cond.observed.len() {
            return Err(Error::dim("observed values", cond.observed.len(), observed.len()));
        }
        let mu = self.mean(theta)?;
        Ok(Gaussian {
            mean: cond.conditional_mean(&mu, observed),
            cov: cond.cond_cov.clone(),
        })
    }

    /// Precompute the θ-free parts of marginalizing and conditioning on
    /// `pattern`.
    pub fn conditioner(&self, pattern: &ResponsePattern) -> Result<Conditioner> {
        self.check_pattern(pattern)?;
        let obs = pattern.observed_indices();
        let mis = pattern.missing_indices();
        let s_mm = self.sigma.select_rows(&mis).select_columns(&mis);
        let (gain, cond_cov, marg_l, marg_log_det) = if obs.is_empty() {
            (DMatrix::zeros(mis.len(), 0), s_mm, DMatrix::zeros(0, 0), 0.0)
        } else {
            let s_oo = self.sigma.select_rows(&obs).select_columns(&obs);
            let s_mo = self.sigma.select_rows(&mis).select_columns(&obs);
            let chol_oo = s_oo
                .cholesky()
                .ok_or_else(|| Error::Numerical("observed-block covariance is singular".into()))?;
            // gain = Σ_mo Σ_oo⁻¹, computed as (Σ_oo⁻¹ Σ_om)ᵀ.
            let gain = chol_oo.solve(&s_mo.transpose()).transpose();
            let mut cov = s_mm - &gain * s_mo.transpose();
            cov = 0.5 * (&cov + cov.transpose());
            let l = chol_oo.l();
            let log_det = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
            (gain, cov, l, log_det)
        };
        let cond_l = if mis.is_empty() {
            DMatrix::zeros(0, 0)
        } else {
            cond_cov
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Numerical("conditional covariance is singular".into()))?
                .l()
        };
        Ok(Conditioner {
            pattern: pattern.clone(),
            observed: obs,
            missing: mis,
            gain,
            cond_cov,
            cond_l,
            marg_l,
            marg_log_det,
        })
    }

    fn check_pattern(&self, pattern: &ResponsePattern) -> Result<()> {
        if pattern.len() != self.k() {
            return Err(Error::dim("response pattern", self.k(), pattern.len()));
        }
        Ok(())
    }

    /// Numerical rank of `A`.
    pub fn mean_map_rank(&self) -> usize {
        let sv = self.a.clone().svd(false, false).singular_values;
        let max = sv.iter().copied().fold(0.0, f64::max);
        sv.iter().filter(|&&s| s > RANK_TOL * max.max(1.0)).count()
    }

    /// A nonzero `c` with `Aᵀc = 0`, if one exists. Then `t(y) = cᵀ(y − b)`
    /// has zero expectation for every θ, so the family is not complete.
    ///
    /// The vector is the longest column of the projector `I − A A⁺` onto
    /// the null space of `Aᵀ`, scaled so its largest entry has magnitude 1
    /// and its first nonzero entry is positive.
    pub fn find_linear_witness(&self) -> Option<DVector<f64>> {
        let k = self.k();
        let pinv = self.a.clone().pseudo_inverse(RANK_TOL).ok()?;
        let proj = DMatrix::<f64>::identity(k, k) - &self.a * pinv;
        let (best, norm) = (0..k)
            .map(|j| (j, proj.column(j).norm()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        if norm <= 1e-8 {
            return None;
        }
        let mut c: DVector<f64> = proj.column(best).into_owned();
        let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        c /= scale;
        if let Some(first) = c.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                c = -c;
            }
        }
        for v in c.iter_mut() {
            if v.abs() < 1e-14 {
                *v = 0.0;
            }
        }
        Some(c)
    }

    /// Completeness within the linear-witness class: no nonzero `c` with
    /// `Aᵀc = 0` and `rank A = k`. A `false` is constructive (a witness
    /// exists); a `true` only rules out linear witnesses.
    pub fn is_complete_linear(&self) -> bool {
        self.find_linear_witness().is_none() && self.mean_map_rank() == self.k()
    }

    /// `n` i.i.d. draws from `N(Aθ + b, Σ)`.
    pub fn sample(&self, theta: &DVector<f64>, n: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        if n == 0 {
            return Err(Error::InvalidParameter("sample size must be >= 1".into()));
        }
        let mu = self.mean(theta)?;
        let l = self.chol.l();
        let mut rng = seeded_rng(seed);
        Ok((0..n).map(|_| draw_gaussian(&mut rng, &mu, &l)).collect())
    }
}

/// θ-free pieces of the factorization `f(y) = f(y_obs) f(y_mis | y_obs)`
/// for one pattern; combine with a mean vector `μ = Aθ + b` per θ.
#[derive(Debug, Clone)]
pub struct Conditioner {
    pattern: ResponsePattern,
    observed: Vec<usize>,
    missing: Vec<usize>,
    gain: DMatrix<f64>,
    cond_cov: DMatrix<f64>,
    cond_l: DMatrix<f64>,
    marg_l: DMatrix<f64>,
    marg_log_det: f64,
}

impl Conditioner {
    pub fn pattern(&self) -> &ResponsePattern {
        &self.pattern
    }

    pub fn n_missing(&self) -> usize {
        self.missing.len()
    }

    /// Covariance of `y_mis | y_obs`.
    pub fn cond_cov(&self) -> &DMatrix<f64> {
        &self.cond_cov
    }

    /// Lower Cholesky factor of [`cond_cov`](Self::cond_cov).
    pub fn cond_chol(&self) -> &DMatrix<f64> {
        &self.cond_l
    }

    /// `μ_m + Σ_mo Σ_oo⁻¹ (y_o − μ_o)` for a full mean vector `mu`.
    pub fn conditional_mean(&self, mu: &DVector<f64>, observed: &[f64]) -> DVector<f64> {
        let mut mean = mu.select_rows(&self.missing);
        for (i, &oi) in self.observed.iter().enumerate() {
            let resid = observed[i] - mu[oi];
            for r in 0..self.missing.len() {
                mean[r] += self.gain[(r, i)] * resid;
            }
        }
        mean
    }

    /// Log density of the observed subvector; zero when nothing is observed.
    pub fn marginal_log_density(&self, mu: &DVector<f64>, observed: &[f64]) -> f64 {
        let o = self.observed.len();
        if o == 0 {
            return 0.0;
        }
        // forward substitution L z = y_o − μ_o
        let mut z = vec![0.0; o];
        for i in 0..o {
            let dot: f64 = (0..i).map(|j| self.marg_l[(i, j)] * z[j]).sum();
            z[i] = (observed[i] - mu[self.observed[i]] - dot) / self.marg_l[(i, i)];
        }
        let q: f64 = z.iter().map(|v| v * v).sum();
        -0.5 * (o as f64 * LN_2PI + self.marg_log_det + q)
    }
}

/// Indicator vector `r ∈ {0,1}ᵏ`; `true` means observed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResponsePattern {
    bits: Vec<bool>,
}

impl ResponsePattern {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        bits.iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::InvalidParameter(format!(
                    "pattern entries must be 0 or 1, got {other}"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }

    pub fn all_observed(k: usize) -> Self {
        Self::new(vec![true; k])
    }

    pub fn all_missing(k: usize) -> Self {
        Self::new(vec![false; k])
    }

    /// All `2ᵏ` patterns, ordered by their binary index (coordinate 1 is
    /// the most significant bit).
    pub fn enumerate(k: usize) -> Vec<Self> {
        (0..1usize << k).map(|i| Self::from_index(k, i)).collect()
    }

    pub fn from_index(k: usize, index: usize) -> Self {
        Self::new((0..k).map(|j| (index >> (k - 1 - j)) & 1 == 1).collect())
    }

    pub fn index(&self) -> usize {
        self.bits.iter().fold(0, |acc, &b| (acc << 1) | usize::from(b))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_observed(&self, j: usize) -> bool {
        self.bits[j]
    }

    pub fn n_observed(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn n_missing(&self) -> usize {
        self.len() - self.n_observed()
    }

    pub fn is_complete(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.bits[j]).collect()
    }

    pub fn missing_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| !self.bits[j]).collect()
    }

    /// Intersection of the observed sets.
    pub fn intersect(&self, other: &Self) -> Self {
        Self::new(self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && b).collect())
    }

    /// Inverse of [`split`]: interleave observed and missing values.
    pub fn merge(&self, observed: &[f64], missing: &[f64]) -> Result<DVector<f64>> {
        if observed.len() != self.n_observed() {
            return Err(Error::dim("observed values", self.n_observed(), observed.len()));
        }
        if missing.len() != self.n_missing() {
            return Err(Error::dim("missing values", self.n_missing(), missing.len()));
        }
        let (mut o, mut m) = (observed.iter(), missing.iter());
        Ok(DVector::from_iterator(
            self.len(),
            self.bits
                .iter()
                .map(|&b| if b { *o.next().unwrap() } else { *m.next().unwrap() }),
        ))
    }

    /// Same as [`merge`](Self::merge) into a caller buffer, without checks.
    pub(crate) fn merge_into(&self, observed: &[f64], missing: &[f64], out: &mut [f64]) {
        let (mut o, mut m) = (0, 0);
        for (j, &b) in self.bits.iter().enumerate() {
            if b {
                out[j] = observed[o];
                o += 1;
            } else {
                out[j] = missing[m];
                m += 1;
            }
        }
    }
}

impl fmt::Display for ResponsePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (j, &b) in self.bits.iter().enumerate() {
            if j > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", u8::from(b))?;
        }
        write!(f, ")")
    }
}

impl Serialize for ResponsePattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<u8> = self.bits.iter().map(|&b| u8::from(b)).collect();
        v.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ResponsePattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<u8>::deserialize(d)?;
        Self::from_bits(&v).map_err(serde::de::Error::custom)
    }
}

/// Split `y` into `(observed, missing)` subvectors, each in increasing
/// coordinate order.
pub fn split(y: &[f64], pattern: &ResponsePattern) -> Result<(Vec<f64>, Vec<f64>)> {
    if y.len() != pattern.len() {
        return Err(Error::dim("y", pattern.len(), y.len()));
    }
    let mut observed = Vec::with_capacity(pattern.n_observed());
    let mut missing = Vec::with_capacity(pattern.n_missing());
    for (&v, &b) in y.iter().zip(pattern.bits()) {
        if b {
            observed.push(v);
        } else {
            missing.push(v);
        }
    }
    Ok((observed, missing))
}

/// The observable `z(y, r)`: a pattern with the values of its observed
/// coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pattern: ResponsePattern,
    observed: Vec<f64>,
}

impl Observation {
    pub fn new(pattern: ResponsePattern, observed: Vec<f64>) -> Result<Self> {
        if observed.len() != pattern.n_observed() {
            return Err(Error::dim("observed values", pattern.n_observed(), observed.len()));
        }
        Ok(Self { pattern, observed })
    }

    pub fn from_complete(y: &[f64], pattern: ResponsePattern) -> Result<Self> {
        let (observed, _) = split(y, &pattern)?;
        Ok(Self { pattern, observed })
    }

    pub fn pattern(&self) -> &ResponsePattern {
        &self.pattern
    }

    pub fn observed(&self) -> &[f64] {
        &self.observed
    }
}

/// Finite set of parameter values standing in for "all θ ∈ Θ".
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaGrid {
    points: Vec<DVector<f64>>,
}

impl ThetaGrid {
    pub fn new(points: Vec<DVector<f64>>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::InvalidParameter("theta grid must be nonempty".into()))?;
        let d = first.len();
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(Error::dim("theta grid point", d, p.len()));
        }
        for (i, p) in points.iter().enumerate() {
            if points[..i].iter().any(|q| q == p) {
                return Err(Error::InvalidParameter(format!("theta grid point {i} is a duplicate")));
            }
        }
        Ok(Self { points })
    }

    /// Tensor grid with `per_axis` evenly spaced values on `[lo, hi]` for
    /// each of the `d` coordinates.
    pub fn uniform(d: usize, lo: f64, hi: f64, per_axis: usize) -> Result<Self> {
        if d == 0 || per_axis == 0 {
            return Err(Error::InvalidParameter("grid needs d >= 1 and per_axis >= 1".into()));
        }
        if per_axis > 1 && !(lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "grid bounds must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        let axis: Vec<f64> = if per_axis == 1 {
            vec![lo]
        } else {
            (0..per_axis)
                .map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
                .collect()
        };
        let total = per_axis.pow(d as u32);
        let points = (0..total)
            .map(|mut idx| {
                let mut p = DVector::zeros(d);
                for j in (0..d).rev() {
                    p[j] = axis[idx % per_axis];
                    idx /= per_axis;
                }
                p
            })
            .collect();
        Self::new(points)
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}
