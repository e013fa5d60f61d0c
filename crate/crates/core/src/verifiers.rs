//! Executable MAR, LIG, CAR and coarse-data LIG checks.
//!
//! Every check is a falsifier over finite probe sets: "for all θ" becomes a
//! θ grid, "almost all realizations" becomes seeded random probes of the
//! observed data. A [`Status::Fails`] verdict always carries a [`Witness`]
//! that reproduces the violation when re-evaluated with the public
//! primitives; a [`Status::Holds`] verdict is corroboration on the probe
//! set only.
//!
//! The invariance statistic for a set of values is the relative spread
//! `(max − min) / (1 + |mid|)` with `mid = (max + min) / 2`. The CAR check
//! uses the purely multiplicative spread `(max − min) / |mid|` so that
//! variation deep in a tail, where κ is tiny, is still detected.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::{CdmSpec, CoarseRegion, MdmSpec, RegionCoord};
use crate::model::{split, AffineGaussianFamily, Conditioner, ResponsePattern, ThetaGrid};
use crate::numerics::{
    derive_seed, gaussian_expectation, gaussian_expectation_chol, normal_quantile, normal_sf, seeded_rng, GaussHermite,
    GaussLegendre, QuadratureSpec,
};

pub const DEFAULT_REL_TOL: f64 = 1e-6;
/// Deviation above which a failing verdict counts as a clear detection.
pub const DETECTION_THRESHOLD: f64 = 1e-3;
pub const DEFAULT_ABS_TOL: f64 = 1e-10;
pub const DEFAULT_PROBE_POINTS: usize = 20;
pub const DEFAULT_CHECK_SEED: u64 = 1976;
pub const DEFAULT_THETA_LO: f64 = -2.0;
pub const DEFAULT_THETA_HI: f64 = 2.0;
pub const DEFAULT_THETA_PER_AXIS: usize = 21;

/// Probability levels for the per-axis probe grids.
pub fn probe_quantiles() -> [f64; 9] {
    std::array::from_fn(|i| 0.05 + 0.1125 * i as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckConfig {
    pub theta_grid: ThetaGrid,
    /// ψ probes; `None` uses the mechanism's defaults.
    pub psi_values: Option<Vec<Vec<f64>>>,
    pub probe_points: usize,
    pub rel_tol: f64,
    /// Absolute tolerance of the completeness-witness check.
    pub abs_tol: f64,
    pub seed: u64,
    pub quad: QuadratureSpec,
}

impl CheckConfig {
    /// Defaults for a family with `d`-dimensional θ: 21 points per axis on
    /// `[−2, 2]`, 20 probes, `rel_tol = 1e−6`.
    pub fn for_dim(d: usize) -> Self {
        Self {
            theta_grid: ThetaGrid::uniform(d, DEFAULT_THETA_LO, DEFAULT_THETA_HI, DEFAULT_THETA_PER_AXIS)
                .expect("default grid is valid"),
            psi_values: None,
            probe_points: DEFAULT_PROBE_POINTS,
            rel_tol: DEFAULT_REL_TOL,
            abs_tol: DEFAULT_ABS_TOL,
            seed: DEFAULT_CHECK_SEED,
            quad: QuadratureSpec::default(),
        }
    }

    pub fn for_family(family: &AffineGaussianFamily) -> Self {
        Self::for_dim(family.d())
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_grid.len() < 3 {
            return Err(Error::Config(format!(
                "theta grid needs at least 3 points, got {}",
                self.theta_grid.len()
            )));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config(format!("rel_tol must be > 0, got {}", self.rel_tol)));
        }
        if !(self.abs_tol > 0.0) {
            return Err(Error::Config(format!("abs_tol must be > 0, got {}", self.abs_tol)));
        }
        if self.probe_points == 0 {
            return Err(Error::Config("probe_points must be >= 1".into()));
        }
        self.quad.validate()
    }

    fn check_theta_dim(&self, family: &AffineGaussianFamily) -> Result<()> {
        if self.theta_grid.dim() != family.d() {
            return Err(Error::dim("theta grid", family.d(), self.theta_grid.dim()));
        }
        Ok(())
    }

    fn psi_for_mdm(&self, mdm: &MdmSpec) -> Result<Vec<Vec<f64>>> {
        let psis = self.psi_values.clone().unwrap_or_else(|| mdm.default_psi_probes());
        if psis.is_empty() {
            return Err(Error::Config("psi_values must be nonempty".into()));
        }
        for psi in &psis {
            mdm.validate_psi(psi)?;
        }
        Ok(psis)
    }

    fn psi_for_cdm(&self, cdm: &CdmSpec) -> Result<Vec<f64>> {
        let psis = self.psi_values.clone().unwrap_or_else(|| cdm.default_psi_probes());
        if psis.is_empty() {
            return Err(Error::Config("psi_values must be nonempty".into()));
        }
        psis.into_iter()
            .map(|p| {
                if p.len() != 1 {
                    Err(Error::dim("psi", 1, p.len()))
                } else if !p[0].is_finite() {
                    Err(Error::InvalidParameter("psi must be finite".into()))
                } else {
                    Ok(p[0])
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Holds,
    Fails,
}

/// A falsifying probe: the two evaluations with the largest spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// `f(r | y; ψ)` at two values of the missing coordinates.
    MissingValues {
        pattern: ResponsePattern,
        psi: Vec<f64>,
        observed: Vec<f64>,
        missing_a: Vec<f64>,
        missing_b: Vec<f64>,
        value_a: f64,
        value_b: f64,
    },
    /// The ignorability integral at two values of θ.
    Theta {
        pattern: ResponsePattern,
        psi: Vec<f64>,
        observed: Vec<f64>,
        theta_a: Vec<f64>,
        theta_b: Vec<f64>,
        value_a: f64,
        value_b: f64,
    },
    /// `κ(z, y; ψ)` at two points `y ∈ z`.
    RegionPoints {
        region: CoarseRegion,
        psi: f64,
        y_a: Vec<f64>,
        y_b: Vec<f64>,
        value_a: f64,
        value_b: f64,
    },
    /// The ratio `∫_z f κ / ∫_z f` at two values of θ.
    RegionTheta {
        region: CoarseRegion,
        psi: f64,
        theta_a: Vec<f64>,
        theta_b: Vec<f64>,
        value_a: f64,
        value_b: f64,
    },
    /// `E_θ[cᵀ(Y − b)]` away from zero.
    Expectation {
        c: Vec<f64>,
        theta: Vec<f64>,
        expectation: f64,
    },
    /// MAR and MCAR verdicts disagree at this ψ.
    Disagreement { psi: Vec<f64>, mar: Status, mcar: Status },
}

impl Witness {
    /// Deviation implied by the witness alone, in the same statistic the
    /// check used.
    pub fn deviation(&self) -> f64 {
        match self {
            Witness::MissingValues { value_a, value_b, .. }
            | Witness::Theta { value_a, value_b, .. }
            | Witness::RegionTheta { value_a, value_b, .. } => relative_spread(*value_a, *value_b),
            Witness::RegionPoints { value_a, value_b, .. } => multiplicative_spread(*value_a, *value_b),
            Witness::Expectation { expectation, .. } => expectation.abs(),
            Witness::Disagreement { .. } => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: Status,
    /// Largest invariance statistic observed over all probes.
    pub deviation: f64,
    pub tolerance: f64,
    pub witness: Option<Witness>,
    /// Number of (pattern or region, ψ, probe) combinations evaluated.
    pub probes: usize,
    /// Probes skipped because a normalizing integral underflowed.
    pub skipped: usize,
}

impl Verdict {
    pub fn holds(&self) -> bool {
        self.status == Status::Holds
    }
}

fn relative_spread(a: f64, b: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    (hi - lo) / (1.0 + (0.5 * (hi + lo)).abs())
}

fn multiplicative_spread(a: f64, b: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let mid = (0.5 * (hi + lo)).abs();
    if hi == lo {
        0.0
    } else {
        (hi - lo) / mid.max(f64::MIN_POSITIVE)
    }
}

/// Indices of the minimum and maximum of `values`.
fn extremes(values: &[f64]) -> (usize, usize) {
    let mut imin = 0;
    let mut imax = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[imin] {
            imin = i;
        }
        if v > values[imax] {
            imax = i;
        }
    }
    (imin, imax)
}

/// Running maximum of probe deviations together with the witness of the
/// worst probe.
struct Tracker {
    deviation: f64,
    witness: Option<Witness>,
    probes: usize,
    skipped: usize,
}

impl Tracker {
    fn new() -> Self {
        Self {
            deviation: 0.0,
            witness: None,
            probes: 0,
            skipped: 0,
        }
    }

    fn record(&mut self, deviation: f64, witness: impl FnOnce() -> Witness) -> Result<()> {
        if !deviation.is_finite() {
            return Err(Error::Numerical("non-finite invariance statistic".into()));
        }
        self.probes += 1;
        if deviation > self.deviation || self.witness.is_none() {
            self.deviation = self.deviation.max(deviation);
            self.witness = Some(witness());
        }
        Ok(())
    }

    fn finish(self, tolerance: f64) -> Verdict {
        let status = if self.deviation <= tolerance {
            Status::Holds
        } else {
            Status::Fails
        };
        Verdict {
            status,
            deviation: self.deviation,
            tolerance,
            witness: if status == Status::Fails { self.witness } else { None },
            probes: self.probes,
            skipped: self.skipped,
        }
    }
}

/// Observed-data probes for each support pattern with a missing
/// coordinate, drawn from the family at θ = 0.
fn observed_probes(
    family: &AffineGaussianFamily,
    mdm: &MdmSpec,
    config: &CheckConfig,
) -> Result<Vec<(ResponsePattern, Vec<f64>)>> {
    if mdm.k() != family.k() {
        return Err(Error::dim("mechanism dimension", family.k(), mdm.k()));
    }
    let theta0 = DVector::zeros(family.d());
    let draws = family.sample(&theta0, config.probe_points, config.seed)?;
    let mut probes = Vec::new();
    for r in mdm.support() {
        if r.is_complete() {
            continue;
        }
        if r.n_observed() == 0 {
            probes.push((r, Vec::new()));
            continue;
        }
        for y in &draws {
            let (obs, _) = split(y.as_slice(), &r)?;
            probes.push((r.clone(), obs));
        }
    }
    Ok(probes)
}

/// Values of the missing coordinates at which MAR is probed: per-axis
/// quantiles of the conditional law at θ = 0, combined as a tensor grid
/// for up to three missing coordinates and axis by axis beyond that.
fn missing_value_grid(
    family: &AffineGaussianFamily,
    pattern: &ResponsePattern,
    observed: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let cond = family.conditional(pattern, observed, &DVector::zeros(family.d()))?;
    let m = cond.dim();
    let axes: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let sd = cond.cov[(j, j)].sqrt();
            probe_quantiles()
                .iter()
                .map(|&q| cond.mean[j] + sd * normal_quantile(q))
                .collect()
        })
        .collect();
    let q = axes[0].len();
    if m <= 3 {
        let total = q.pow(m as u32);
        Ok((0..total)
            .map(|mut idx| {
                let mut point = vec![0.0; m];
                for j in (0..m).rev() {
                    point[j] = axes[j][idx % q];
                    idx /= q;
                }
                point
            })
            .collect())
    } else {
        let center: Vec<f64> = cond.mean.iter().copied().collect();
        let mut points = Vec::with_capacity(m * q);
        for (j, axis) in axes.iter().enumerate() {
            for &v in axis {
                let mut p = center.clone();
                p[j] = v;
                points.push(p);
            }
        }
        Ok(points)
    }
}

/// MAR: for every support pattern, ψ and observed-data probe, the
/// mechanism must not vary as the missing coordinates move over their
/// probe grid.
pub fn check_mar(mdm: &MdmSpec, family: &AffineGaussianFamily, config: &CheckConfig) -> Result<Verdict> {
    check_mar_where(mdm, family, config, |_| true)
}

/// [`check_mar`] restricted to a single response pattern.
pub fn check_mar_at(
    mdm: &MdmSpec,
    family: &AffineGaussianFamily,
    pattern: &ResponsePattern,
    config: &CheckConfig,
) -> Result<Verdict> {
    if pattern.len() != mdm.k() {
        return Err(Error::dim("pattern", mdm.k(), pattern.len()));
    }
    check_mar_where(mdm, family, config, |r| r == pattern)
}

fn check_mar_where(
    mdm: &MdmSpec,
    family: &AffineGaussianFamily,
    config: &CheckConfig,
    keep: impl Fn(&ResponsePattern) -> bool,
) -> Result<Verdict> {
    config.validate()?;
    let psis = config.psi_for_mdm(mdm)?;
    let probes = observed_probes(family, mdm, config)?;
    let mut tracker = Tracker::new();
    let mut y = vec![0.0; mdm.k()];
    for (r, obs) in probes.iter().filter(|(r, _)| keep(r)) {
        let grid = missing_value_grid(family, r, obs)?;
        for psi in &psis {
            let values: Vec<f64> = grid
                .iter()
                .map(|mis| {
                    r.merge_into(obs, mis, &mut y);
                    mdm.prob_unchecked(r, &y, psi)
                })
                .collect();
            let (imin, imax) = extremes(&values);
            let dev = relative_spread(values[imin], values[imax]);
            tracker.record(dev, || Witness::MissingValues {
                pattern: r.clone(),
                psi: psi.clone(),
                observed: obs.clone(),
                missing_a: grid[imax].clone(),
                missing_b: grid[imin].clone(),
                value_a: values[imax],
                value_b: values[imin],
            })?;
        }
    }
    Ok(tracker.finish(config.rel_tol))
}

/// `∫ f(y_mis | y_obs; θ) f(r | y; ψ) dy_mis`, by Gauss–Hermite quadrature
/// over the conditional law. For a fully observed pattern this is
/// `f(r | y; ψ)` itself.
pub fn lig_integral(
    family: &AffineGaussianFamily,
    mdm: &MdmSpec,
    pattern: &ResponsePattern,
    observed: &[f64],
    theta: &DVector<f64>,
    psi: &[f64],
    rule: &GaussHermite,
) -> Result<f64> {
    if mdm.k() != family.k() {
        return Err(Error::dim("mechanism dimension", family.k(), mdm.k()));
    }
    mdm.validate_psi(psi)?;
    if pattern.is_complete() {
        return mdm.prob(pattern, observed, psi);
    }
    let cond = family.conditioner(pattern)?;
    if observed.len() != pattern.n_observed() {
        return Err(Error::dim("observed values", pattern.n_observed(), observed.len()));
    }
    if cond.n_missing() > 3 {
        return Err(Error::InvalidParameter(format!(
            "tensor quadrature supports at most 3 missing coordinates, got {}",
            cond.n_missing()
        )));
    }
    let value = lig_integral_with(&cond, &family.mean(theta)?, mdm, observed, psi, rule);
    if !value.is_finite() {
        return Err(Error::Numerical(format!("ignorability integral is {value}")));
    }
    Ok(value)
}

/// Inner form of [`lig_integral`] on a precomputed [`Conditioner`] and
/// mean vector `mu = Aθ + b`; arguments are assumed validated.
pub(crate) fn lig_integral_with(
    cond: &Conditioner,
    mu: &DVector<f64>,
    mdm: &MdmSpec,
    observed: &[f64],
    psi: &[f64],
    rule: &GaussHermite,
) -> f64 {
    let pattern = cond.pattern();
    let mut y = vec![0.0; pattern.len()];
    if pattern.is_complete() {
        pattern.merge_into(observed, &[], &mut y);
        return mdm.prob_unchecked(pattern, &y, psi);
    }
    let mean = cond.conditional_mean(mu, observed);
    gaussian_expectation_chol(
        |mis| {
            pattern.merge_into(observed, mis, &mut y);
            mdm.prob_unchecked(pattern, &y, psi)
        },
        &mean,
        cond.cond_chol(),
        rule,
    )
}

/// LIG: for every support pattern with a missing coordinate, ψ and
/// observed-data probe, the ignorability integral must be constant over
/// the θ grid. Fully observed patterns carry no integral and are skipped.
pub fn check_lig(family: &AffineGaussianFamily, mdm: &MdmSpec, config: &CheckConfig) -> Result<Verdict> {
    config.validate()?;
    config.check_theta_dim(family)?;
    let psis = config.psi_for_mdm(mdm)?;
    let rule = config.quad.rule()?;
    let probes = observed_probes(family, mdm, config)?;
    let thetas = config.theta_grid.points();

    let jobs: Vec<(&ResponsePattern, &Vec<f64>, &Vec<f64>)> = probes
        .iter()
        .flat_map(|(r, obs)| psis.iter().map(move |psi| (r, obs, psi)))
        .collect();
    let rows: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|(r, obs, psi)| {
            thetas
                .iter()
                .map(|t| lig_integral(family, mdm, r, obs, t, psi, &rule))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let mut tracker = Tracker::new();
    for ((r, obs, psi), values) in jobs.iter().zip(&rows) {
        let (imin, imax) = extremes(values);
        let dev = relative_spread(values[imin], values[imax]);
        tracker.record(dev, || Witness::Theta {
            pattern: (*r).clone(),
            psi: (*psi).clone(),
            observed: (*obs).clone(),
            theta_a: thetas[imax].iter().copied().collect(),
            theta_b: thetas[imin].iter().copied().collect(),
            value_a: values[imax],
            value_b: values[imin],
        })?;
    }
    Ok(tracker.finish(config.rel_tol))
}

/// A censored observation `{y₁} × (g, ∞)` used as a CAR probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoredProbe {
    pub y1: f64,
    pub g: f64,
}

impl CensoredProbe {
    pub fn region(&self) -> CoarseRegion {
        CoarseRegion::new(vec![RegionCoord::Point(self.y1), RegionCoord::HalfLineAbove(self.g)])
            .expect("two coordinates")
    }
}

fn default_censored_probes(config: &CheckConfig, family: Option<&AffineGaussianFamily>) -> Result<Vec<CensoredProbe>> {
    let n = config.probe_points;
    match family {
        Some(fam) => {
            let theta0 = DVector::zeros(fam.d());
            let ys = fam.sample(&theta0, n, config.seed)?;
            let gs = fam.sample(&theta0, n, derive_seed(config.seed, 1))?;
            Ok(ys
                .iter()
                .zip(&gs)
                .map(|(y, g)| CensoredProbe { y1: y[0], g: g[1] })
                .collect())
        }
        None => {
            let mut rng = seeded_rng(config.seed);
            Ok((0..n)
                .map(|_| CensoredProbe {
                    y1: crate::numerics::draw_standard(&mut rng),
                    g: crate::numerics::draw_standard(&mut rng),
                })
                .collect())
        }
    }
}

/// CAR on the default probe set: standard-normal `y₁` and `g`.
pub fn check_car(cdm: &CdmSpec, config: &CheckConfig) -> Result<Verdict> {
    config.validate()?;
    let probes = default_censored_probes(config, None)?;
    check_car_on(cdm, &probes, config)
}

/// CAR on explicit censored regions. For each region and ψ, κ is evaluated
/// at `y₂ = g + q` for half-normal quantiles `q`, i.e. at points inside the
/// region. Exact regions are singletons and pass vacuously, so only
/// censored regions are probed.
pub fn check_car_on(cdm: &CdmSpec, probes: &[CensoredProbe], config: &CheckConfig) -> Result<Verdict> {
    let psis = config.psi_for_cdm(cdm)?;
    let offsets: Vec<f64> = probe_quantiles()
        .iter()
        .map(|&q| normal_quantile(0.5 + 0.5 * q))
        .collect();
    let mut tracker = Tracker::new();
    for probe in probes {
        let region = probe.region();
        for &psi in &psis {
            let points: Vec<[f64; 2]> = offsets.iter().map(|o| [probe.y1, probe.g + o]).collect();
            let values = points
                .iter()
                .map(|y| cdm.kappa(&region, y, psi))
                .collect::<Result<Vec<f64>>>()?;
            let (imin, imax) = extremes(&values);
            let dev = multiplicative_spread(values[imin], values[imax]);
            tracker.record(dev, || Witness::RegionPoints {
                region: region.clone(),
                psi,
                y_a: points[imax].to_vec(),
                y_b: points[imin].to_vec(),
                value_a: values[imax],
                value_b: values[imin],
            })?;
        }
    }
    Ok(tracker.finish(config.rel_tol))
}

const RATIO_PANELS: usize = 8;

/// Below this, `∫_z f dy` is treated as underflowed and the probe skipped.
const UNDERFLOW_FLOOR: f64 = 1e-280;

/// `R(θ) = ∫_z f(y;θ) κ(z,y;ψ) dy / ∫_z f(y;θ) dy` for a censored region
/// `z = {y₁} × (g, ∞)`, i.e. `E[κ | Y₂ > g, y₁; θ]`.
///
/// Integrated by composite Gauss–Legendre over the standardized
/// truncation range of `Y₂ | y₁`. Returns `None` when the normalizer
/// underflows.
pub fn cdm_lig_ratio(
    family: &AffineGaussianFamily,
    cdm: &CdmSpec,
    probe: &CensoredProbe,
    theta: &DVector<f64>,
    psi: f64,
    rule: &GaussLegendre,
) -> Result<Option<f64>> {
    if family.k() != 2 {
        return Err(Error::dim("family dimension for censoring", 2, family.k()));
    }
    let first = ResponsePattern::new(vec![true, false]);
    let cond = family.conditional(&first, &[probe.y1], theta)?;
    let (mu, tau) = (cond.mean[0], cond.cov[(0, 0)].sqrt());
    let a = (probe.g - mu) / tau;
    let tail = normal_sf(a);
    let log_marginal = family.marginal_log_density(&first, &[probe.y1], theta)?;
    if !(tail > 0.0) || log_marginal + tail.ln() < UNDERFLOW_FLOOR.ln() {
        return Ok(None);
    }
    // E[κ | Y₂ > g] = ∫_{x>a} κ(μ + τx) φ(x) dx / tail, on standardized x.
    // Beyond `hi` the truncated density is below e⁻⁵⁰ of its peak.
    let lo = a.max(-10.0);
    let hi = (a.max(0.0).powi(2) + 100.0).sqrt();
    let ln_tail = tail.ln();
    let h = (hi - lo) / RATIO_PANELS as f64;
    let mut integral = 0.0;
    for p in 0..RATIO_PANELS {
        let left = lo + h * p as f64;
        integral += h * rule.integrate(|t| {
            let x = left + h * t;
            let ln_w = -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln() - ln_tail;
            cdm.density_unchecked(probe.g, &[probe.y1, mu + tau * x], psi) * ln_w.exp()
        });
    }
    if !integral.is_finite() {
        return Err(Error::Numerical(format!("coarse-data ratio is {integral}")));
    }
    Ok(Some(integral))
}

/// Coarse-data LIG: for each censored probe region and ψ, the ratio
/// [`cdm_lig_ratio`] must be constant over the θ grid, i.e.
/// `∫_z f κ ∝ ∫_z f` as functions of θ.
pub fn check_cdm_lig(family: &AffineGaussianFamily, cdm: &CdmSpec, config: &CheckConfig) -> Result<Verdict> {
    config.validate()?;
    config.check_theta_dim(family)?;
    if family.k() != 2 {
        return Err(Error::dim("family dimension for censoring", 2, family.k()));
    }
    let probes = default_censored_probes(config, Some(family))?;
    check_cdm_lig_on(family, cdm, &probes, config)
}

pub fn check_cdm_lig_on(
    family: &AffineGaussianFamily,
    cdm: &CdmSpec,
    probes: &[CensoredProbe],
    config: &CheckConfig,
) -> Result<Verdict> {
    config.check_theta_dim(family)?;
    let psis = config.psi_for_cdm(cdm)?;
    let rule = GaussLegendre::new(config.quad.gh_order)?;
    let thetas = config.theta_grid.points();
    let jobs: Vec<(&CensoredProbe, f64)> = probes
        .iter()
        .flat_map(|p| psis.iter().map(move |&psi| (p, psi)))
        .collect();
    let rows: Vec<Vec<Option<f64>>> = jobs
        .par_iter()
        .map(|(p, psi)| {
            thetas
                .iter()
                .map(|t| cdm_lig_ratio(family, cdm, p, t, *psi, &rule))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut tracker = Tracker::new();
    for ((probe, psi), row) in jobs.iter().zip(&rows) {
        let kept: Vec<(usize, f64)> = row.iter().enumerate().filter_map(|(i, v)| v.map(|x| (i, x))).collect();
        tracker.skipped += row.len() - kept.len();
        if kept.len() < 2 {
            continue;
        }
        let values: Vec<f64> = kept.iter().map(|&(_, v)| v).collect();
        let (imin, imax) = extremes(&values);
        let dev = relative_spread(values[imin], values[imax]);
        tracker.record(dev, || Witness::RegionTheta {
            region: probe.region(),
            psi: *psi,
            theta_a: thetas[kept[imax].0].iter().copied().collect(),
            theta_b: thetas[kept[imin].0].iter().copied().collect(),
            value_a: values[imax],
            value_b: values[imin],
        })?;
    }
    if tracker.probes == 0 {
        return Err(Error::Numerical("every coarse-data probe underflowed".into()));
    }
    Ok(tracker.finish(config.rel_tol))
}

/// Certify `t(y) = cᵀ(y − b)` as a non-completeness witness:
/// `|E_θ[t(Y)]| ≤ abs_tol` at every grid θ. The expectation is computed by
/// quadrature for `k ≤ 3` and in closed form (`cᵀAθ`) beyond.
pub fn check_witness(family: &AffineGaussianFamily, c: &[f64], config: &CheckConfig) -> Result<Verdict> {
    config.validate()?;
    config.check_theta_dim(family)?;
    if c.len() != family.k() {
        return Err(Error::dim("witness vector", family.k(), c.len()));
    }
    if c.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidParameter("witness vector must be nonzero".into()));
    }
    let rule = config.quad.rule()?;
    let cv = DVector::from_column_slice(c);
    let b = family.b();
    let mut tracker = Tracker::new();
    for theta in config.theta_grid.points() {
        let mean = family.mean(theta)?;
        let e = if family.k() <= 3 {
            gaussian_expectation(
                |y| {
                    y.iter()
                        .zip(cv.iter())
                        .zip(b.iter())
                        .map(|((yi, ci), bi)| ci * (yi - bi))
                        .sum()
                },
                &mean,
                family.sigma(),
                &rule,
            )?
        } else {
            cv.dot(&(mean - b))
        };
        tracker.record(e.abs(), || Witness::Expectation {
            c: c.to_vec(),
            theta: theta.iter().copied().collect(),
            expectation: e,
        })?;
    }
    Ok(tracker.finish(config.abs_tol))
}

/// Scalar response: MAR and MCAR (the mechanism is constant in `y` for
/// both `r = 0` and `r = 1`) must agree at every ψ probe.
pub fn check_scalar_mcar_equiv(family: &AffineGaussianFamily, mdm: &MdmSpec, config: &CheckConfig) -> Result<Verdict> {
    config.validate()?;
    if family.k() != 1 {
        return Err(Error::dim("scalar family dimension", 1, family.k()));
    }
    if mdm.k() != 1 {
        return Err(Error::dim("mechanism dimension", 1, mdm.k()));
    }
    let psis = config.psi_for_mdm(mdm)?;
    let theta0 = DVector::zeros(family.d());
    let mean = family.mean(&theta0)?[0];
    let sd = family.sigma()[(0, 0)].sqrt();
    let mut ys: Vec<f64> = probe_quantiles()
        .iter()
        .map(|&q| mean + sd * normal_quantile(q))
        .collect();
    ys.extend(
        family
            .sample(&theta0, config.probe_points, config.seed)?
            .iter()
            .map(|y| y[0]),
    );

    let mut tracker = Tracker::new();
    for psi in &psis {
        let single = CheckConfig {
            psi_values: Some(vec![psi.clone()]),
            ..config.clone()
        };
        let mar = check_mar(mdm, family, &single)?.status;
        let mut mcar_dev: f64 = 0.0;
        for r in ResponsePattern::enumerate(1) {
            let values = ys
                .iter()
                .map(|&y| mdm.prob(&r, &[y], psi))
                .collect::<Result<Vec<f64>>>()?;
            let (imin, imax) = extremes(&values);
            mcar_dev = mcar_dev.max(relative_spread(values[imin], values[imax]));
        }
        let mcar = if mcar_dev <= config.rel_tol {
            Status::Holds
        } else {
            Status::Fails
        };
        let disagree = if mar == mcar { 0.0 } else { 1.0 };
        tracker.record(disagree, || Witness::Disagreement {
            psi: psi.clone(),
            mar,
            mcar,
        })?;
    }
    Ok(tracker.finish(0.0))
}
