//! Quadrature rules, normal distribution functions, Monte Carlo
//! estimation and a bracketed scalar maximizer.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Generator used for every seeded draw in the crate.
pub type SimRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent child seed from `seed` and a stream index
/// (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const DEFAULT_GH_ORDER: usize = 40;
pub const DEFAULT_MC_N: usize = 200_000;
pub const DEFAULT_MC_SEED: u64 = 20_040_401;

/// Gauss–Hermite order, Monte Carlo sample size and seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    #[serde(default = "default_gh_order")]
    pub gh_order: usize,
    #[serde(default = "default_mc_n")]
    pub mc_n: usize,
    #[serde(default = "default_mc_seed")]
    pub mc_seed: u64,
}

fn default_gh_order() -> usize {
    DEFAULT_GH_ORDER
}
fn default_mc_n() -> usize {
    DEFAULT_MC_N
}
fn default_mc_seed() -> u64 {
    DEFAULT_MC_SEED
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            gh_order: DEFAULT_GH_ORDER,
            mc_n: DEFAULT_MC_N,
            mc_seed: DEFAULT_MC_SEED,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.gh_order < 2 {
            return Err(Error::InvalidParameter(format!(
                "gh_order must be >= 2, got {}",
                self.gh_order
            )));
        }
        if self.mc_n < 1000 {
            return Err(Error::InvalidParameter(format!(
                "mc_n must be >= 1000, got {}",
                self.mc_n
            )));
        }
        Ok(())
    }

    pub fn rule(&self) -> Result<GaussHermite> {
        self.validate()?;
        GaussHermite::new(self.gh_order)
    }
}

/// Nodes of a Jacobi matrix with zero diagonal and the given off-diagonal,
/// sorted ascending. Used as starting points for Newton refinement.
fn jacobi_eigenvalues(off_diagonal: impl Fn(usize) -> f64, order: usize) -> Vec<f64> {
    let mut jacobi = DMatrix::<f64>::zeros(order, order);
    for i in 0..order - 1 {
        let beta = off_diagonal(i);
        jacobi[(i, i + 1)] = beta;
        jacobi[(i + 1, i)] = beta;
    }
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    nodes
}

/// Gauss–Hermite rule in the probabilists' convention: `Σ wᵢ p(xᵢ) = E[p(X)]`
/// for `X ~ N(0, 1)`, exact for polynomials of degree `≤ 2·order − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch starting nodes, then Newton polishing on the
    /// orthonormal Hermite recurrence. Weights come from the Christoffel
    /// formula `w = 1 / (n p_{n-1}(x)²)`, which keeps tail weights
    /// relatively accurate.
    pub fn new(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::InvalidParameter(format!(
                "Gauss-Hermite order must be >= 2, got {order}"
            )));
        }
        let n = order as f64;
        let mut nodes = jacobi_eigenvalues(|i| ((i + 1) as f64).sqrt(), order);
        let mut weights = Vec::with_capacity(order);
        for x in nodes.iter_mut() {
            for _ in 0..8 {
                let (pn, pn1) = orthonormal_hermite(order, *x);
                let step = pn / (n.sqrt() * pn1);
                *x -= step;
                if step.abs() <= 1e-15 * x.abs().max(1.0) {
                    break;
                }
            }
            let (_, pn1) = orthonormal_hermite(order, *x);
            weights.push(1.0 / (n * pn1 * pn1));
        }
        // Symmetrize: the rule is exactly symmetric about zero.
        for i in 0..order / 2 {
            let j = order - 1 - i;
            let x = 0.5 * (nodes[j] - nodes[i]);
            let w = 0.5 * (weights[i] + weights[j]);
            nodes[i] = -x;
            nodes[j] = x;
            weights[i] = w;
            weights[j] = w;
        }
        if order % 2 == 1 {
            nodes[order / 2] = 0.0;
        }
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(X)]`, `X ~ N(0, 1)`.
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// `(p_n(x), p_{n-1}(x))` with `p_k = He_k / √(k!)`.
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..n {
        let kf = k as f64;
        let next = (x * cur - kf.sqrt() * prev) / (kf + 1.0).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Gauss–Legendre rule on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::InvalidParameter(format!(
                "Gauss-Legendre order must be >= 2, got {order}"
            )));
        }
        let starts = jacobi_eigenvalues(
            |i| {
                let k = (i + 1) as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            },
            order,
        );
        let mut nodes = Vec::with_capacity(order);
        let mut weights = Vec::with_capacity(order);
        for mut x in starts {
            let mut deriv = 1.0;
            for _ in 0..8 {
                let (p, dp) = legendre(order, x);
                deriv = dp;
                let step = p / dp;
                x -= step;
                if step.abs() <= 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre(order, x);
            if dp.is_finite() {
                deriv = dp;
            }
            nodes.push(0.5 * (x + 1.0));
            weights.push(1.0 / ((1.0 - x * x) * deriv * deriv));
        }
        Ok(Self { nodes, weights })
    }

    /// `∫₀¹ f(u) du`.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&u, &w)| w * f(u)).sum()
    }
}

/// `(P_n(x), P_n'(x))`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 1.0;
    let mut cur = x;
    for k in 2..=n {
        let kf = k as f64;
        let next = ((2.0 * kf - 1.0) * x * cur - (kf - 1.0) * prev) / kf;
        prev = cur;
        cur = next;
    }
    let nf = n as f64;
    let deriv = nf * (x * cur - prev) / (x * x - 1.0);
    (cur, deriv)
}

/// `E[g(X)]` for `X ~ N(mean, cov)` of dimension at most 3, by a tensor
/// Gauss–Hermite grid mapped through the Cholesky factor of `cov`.
/// A zero-dimensional distribution evaluates `g` once at the empty point.
pub fn gaussian_expectation(
    mut g: impl FnMut(&[f64]) -> f64,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rule: &GaussHermite,
) -> Result<f64> {
    let m = mean.len();
    if cov.nrows() != m || cov.ncols() != m {
        return Err(Error::dim("covariance", m, cov.nrows()));
    }
    if m == 0 {
        return Ok(g(&[]));
    }
    if m > 3 {
        return Err(Error::InvalidParameter(format!(
            "tensor quadrature supports at most 3 dimensions, got {m}"
        )));
    }
    let l = cov.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.l();
    Ok(gaussian_expectation_chol(g, mean, &l, rule))
}

/// [`gaussian_expectation`] with a precomputed lower Cholesky factor `l`
/// of the covariance. Dimension is not limited here; the grid has
/// `orderᵐ` points.
pub fn gaussian_expectation_chol(
    mut g: impl FnMut(&[f64]) -> f64,
    mean: &DVector<f64>,
    l: &DMatrix<f64>,
    rule: &GaussHermite,
) -> f64 {
    let m = mean.len();
    if m == 0 {
        return g(&[]);
    }
    let order = rule.order();
    let mut idx = vec![0usize; m];
    let mut z = vec![0.0; m];
    let mut x = vec![0.0; m];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for (j, &i) in idx.iter().enumerate() {
            z[j] = rule.nodes[i];
            w *= rule.weights[i];
        }
        for r in 0..m {
            let mut v = mean[r];
            for c in 0..=r {
                v += l[(r, c)] * z[c];
            }
            x[r] = v;
        }
        total += w * g(&x);

        let mut axis = 0;
        loop {
            idx[axis] += 1;
            if idx[axis] < order {
                break;
            }
            idx[axis] = 0;
            axis += 1;
            if axis == m {
                return total;
            }
        }
    }
}

/// Both quadrature rules at the configured order.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub hermite: GaussHermite,
    pub legendre: GaussLegendre,
}

impl Quadrature {
    pub fn new(spec: &QuadratureSpec) -> Result<Self> {
        Ok(Self {
            hermite: spec.rule()?,
            legendre: GaussLegendre::new(spec.gh_order)?,
        })
    }
}

pub fn normal_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail `1 − Φ(x)` without cancellation.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse of [`normal_cdf`] on `(0, 1)`: Acklam's rational approximation
/// polished with one Halley step.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        let t = (-2.0 * q.ln()).sqrt();
        (((((C[0] * t + C[1]) * t + C[2]) * t + C[3]) * t + C[4]) * t + C[5])
            / ((((D[0] * t + D[1]) * t + D[2]) * t + D[3]) * t + 1.0)
    };
    let mut x = if p < P_LOW {
        tail(p)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail(1.0 - p)
    };
    // Halley step, measuring the residual on the smaller tail.
    let e = if x < 0.0 {
        normal_cdf(x) - p
    } else {
        (1.0 - p) - normal_sf(x)
    };
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x -= u / (1.0 + 0.5 * x * u);
    x
}

/// Logistic function `1 / (1 + e^{-x})`, evaluated without overflow.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Monte Carlo mean of `g` over `n` draws from `sampler`, with its
/// standard error. Deterministic given `seed`.
pub fn mc_expectation<T>(
    g: impl Fn(&T) -> f64,
    mut sampler: impl FnMut(&mut SimRng) -> T,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n < 1000 {
        return Err(Error::InvalidParameter(format!(
            "Monte Carlo sample size must be >= 1000, got {n}"
        )));
    }
    let mut rng = seeded_rng(seed);
    // Welford
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n {
        let v = g(&sampler(&mut rng));
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = m2 / (n - 1) as f64;
    Ok(McEstimate {
        estimate: mean,
        std_error: (var / n as f64).sqrt(),
    })
}

/// Draw from `N(mean, L Lᵀ)` given the lower Cholesky factor `l`.
pub fn draw_gaussian(rng: &mut SimRng, mean: &DVector<f64>, l: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| draw_standard(rng)));
    mean + l * z
}

pub fn draw_standard(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Outcome of [`maximize_scalar`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarMax {
    pub argmax: f64,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

const GOLDEN: f64 = 0.381_966_011_250_105_1;
const MAX_ITER: usize = 500;

/// Maximize `f` on `[lo, hi]` by Brent's golden-section/parabolic search,
/// stopping once the bracket is narrower than `tol`.
pub fn maximize_scalar(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<ScalarMax> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "search interval must satisfy lo < hi, got [{lo}, {hi}]"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be > 0, got {tol}")));
    }
    let mut evaluations = 0usize;
    let mut cost = |x: f64| -> Result<f64> {
        evaluations += 1;
        let v = f(x);
        if v.is_finite() {
            Ok(-v)
        } else {
            Err(Error::Numerical(format!("objective is {v} at {x}")))
        }
    };

    let (mut a, mut b) = (lo, hi);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = cost(x)?;
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let mut converged = false;

    for _ in 0..MAX_ITER {
        let m = 0.5 * (a + b);
        let tol1 = 0.25 * tol + f64::EPSILON * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            converged = true;
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            let e_prev = e;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = cost(u)?;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Ok(ScalarMax {
        argmax: x,
        value: -fx,
        evaluations,
        converged,
    })
}
