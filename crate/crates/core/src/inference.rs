//! Simulation of incomplete and censored datasets, ignorable and full
//! log-likelihoods, maximum-likelihood fits and replication experiments.
//!
//! The full log-likelihood of a missing-data record is
//! `ln f(y_obs; θ) + ln ∫ f(y_mis | y_obs; θ) f(r | y; ψ) dy_mis`; the
//! ignorable one keeps only the first term. For censored records the
//! second term is `ln E[κ | Y₂ > g, y₁; θ]`. ψ is treated as known.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::{coarsen, CdmSpec, CoarseRegion, MdmSpec, Mechanism, RegionCoord};
use crate::model::{AffineGaussianFamily, Conditioner, Observation, ResponsePattern};
use crate::numerics::{derive_seed, draw_gaussian, maximize_scalar, normal_sf, seeded_rng, Quadrature, QuadratureSpec};
use crate::verifiers::{cdm_lig_ratio, lig_integral_with, CensoredProbe};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    Missing,
    Coarse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub theta: Vec<f64>,
    pub psi: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Records {
    Missing(Vec<Observation>),
    Coarse(Vec<CoarseRegion>),
}

/// Homogeneous collection of incomplete observations of a `k`-dimensional
/// response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    k: usize,
    records: Records,
    provenance: Option<Provenance>,
}

impl Dataset {
    pub fn missing(k: usize, records: Vec<Observation>) -> Result<Self> {
        if let Some(bad) = records.iter().find(|o| o.pattern().len() != k) {
            return Err(Error::dim("record pattern", k, bad.pattern().len()));
        }
        Ok(Self {
            k,
            records: Records::Missing(records),
            provenance: None,
        })
    }

    /// Censored data: every region is an exact point or `{y₁} × (g, ∞)`.
    pub fn coarse(records: Vec<CoarseRegion>) -> Result<Self> {
        for z in &records {
            match z.coords() {
                [RegionCoord::Point(_), RegionCoord::Point(_)]
                | [RegionCoord::Point(_), RegionCoord::HalfLineAbove(_)] => {}
                _ => return Err(Error::InvalidRegion(z.to_string())),
            }
        }
        Ok(Self {
            k: 2,
            records: Records::Coarse(records),
            provenance: None,
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mode(&self) -> DataMode {
        match self.records {
            Records::Missing(_) => DataMode::Missing,
            Records::Coarse(_) => DataMode::Coarse,
        }
    }

    pub fn records(&self) -> &Records {
        &self.records
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn len(&self) -> usize {
        match &self.records {
            Records::Missing(r) => r.len(),
            Records::Coarse(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of records per response pattern (missing mode) or per
    /// exact/censored status (coarse mode, keyed `(1,1)` and `(1,0)`).
    pub fn pattern_counts(&self) -> BTreeMap<ResponsePattern, usize> {
        let mut counts = BTreeMap::new();
        match &self.records {
            Records::Missing(obs) => {
                for o in obs {
                    *counts.entry(o.pattern().clone()).or_insert(0) += 1;
                }
            }
            Records::Coarse(zs) => {
                for z in zs {
                    let key = ResponsePattern::new(vec![true, z.is_exact()]);
                    *counts.entry(key).or_insert(0) += 1;
                }
            }
        }
        counts
    }

    fn check_family(&self, family: &AffineGaussianFamily) -> Result<()> {
        if family.k() != self.k {
            return Err(Error::dim("dataset dimension", family.k(), self.k));
        }
        Ok(())
    }
}

fn as_theta(family: &AffineGaussianFamily, theta: &[f64]) -> Result<DVector<f64>> {
    if theta.len() != family.d() {
        return Err(Error::dim("theta", family.d(), theta.len()));
    }
    Ok(DVector::from_column_slice(theta))
}

/// Draw `y ~ f(·; θ)` then `r ~ f(· | y; ψ)` for each of `n` records.
pub fn simulate_missing(
    family: &AffineGaussianFamily,
    mdm: &MdmSpec,
    theta: &[f64],
    psi: &[f64],
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be >= 1".into()));
    }
    if mdm.k() != family.k() {
        return Err(Error::dim("mechanism dimension", family.k(), mdm.k()));
    }
    mdm.validate_psi(psi)?;
    let mu = family.mean(&as_theta(family, theta)?)?;
    let l = family.sigma_chol();
    let mut rng = seeded_rng(seed);
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let y = draw_gaussian(&mut rng, &mu, &l);
        let r = mdm.sample_pattern_with(y.as_slice(), psi, &mut rng)?;
        records.push(Observation::from_complete(y.as_slice(), r)?);
    }
    Ok(Dataset::missing(family.k(), records)?.with_provenance(Provenance {
        theta: theta.to_vec(),
        psi: psi.to_vec(),
        seed,
    }))
}

/// Draw `y ~ f(·; θ)` and a censoring time `g ~ h(· | y; ψ)`, and record
/// the coarsened observation of `y₂`.
pub fn simulate_censored(
    family: &AffineGaussianFamily,
    cdm: &CdmSpec,
    theta: &[f64],
    psi: f64,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be >= 1".into()));
    }
    if family.k() != 2 {
        return Err(Error::dim("family dimension for censoring", 2, family.k()));
    }
    let mu = family.mean(&as_theta(family, theta)?)?;
    let l = family.sigma_chol();
    let mut rng = seeded_rng(seed);
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let y = draw_gaussian(&mut rng, &mu, &l);
        let g = cdm.sample_censor(y.as_slice(), psi, &mut rng)?;
        records.push(coarsen(y.as_slice(), g)?);
    }
    Ok(Dataset::coarse(records)?.with_provenance(Provenance {
        theta: theta.to_vec(),
        psi: vec![psi],
        seed,
    }))
}

/// θ-free pattern factorizations for the patterns present in a dataset.
struct Conditioners {
    by_pattern: BTreeMap<ResponsePattern, Conditioner>,
}

impl Conditioners {
    fn new(family: &AffineGaussianFamily, dataset: &Dataset) -> Result<Self> {
        let mut by_pattern = BTreeMap::new();
        match &dataset.records {
            Records::Missing(obs) => {
                for o in obs {
                    if !by_pattern.contains_key(o.pattern()) {
                        by_pattern.insert(o.pattern().clone(), family.conditioner(o.pattern())?);
                    }
                }
            }
            Records::Coarse(_) => {
                for bits in [vec![true, true], vec![true, false]] {
                    let r = ResponsePattern::new(bits);
                    by_pattern.insert(r.clone(), family.conditioner(&r)?);
                }
            }
        }
        Ok(Self { by_pattern })
    }

    fn get(&self, r: &ResponsePattern) -> &Conditioner {
        &self.by_pattern[r]
    }
}

/// Reusable evaluator of both log-likelihoods for one (family, dataset)
/// pair.
pub struct Likelihood<'a> {
    family: &'a AffineGaussianFamily,
    dataset: &'a Dataset,
    conditioners: Conditioners,
    quad: Quadrature,
}

impl<'a> Likelihood<'a> {
    pub fn new(family: &'a AffineGaussianFamily, dataset: &'a Dataset, quad: &QuadratureSpec) -> Result<Self> {
        dataset.check_family(family)?;
        Ok(Self {
            family,
            dataset,
            conditioners: Conditioners::new(family, dataset)?,
            quad: Quadrature::new(quad)?,
        })
    }

    /// Per-record ignorable log-likelihood terms.
    pub fn ignorable_terms(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mu = self.family.mean(&as_theta(self.family, theta)?)?;
        match &self.dataset.records {
            Records::Missing(obs) => Ok(obs
                .iter()
                .map(|o| {
                    self.conditioners
                        .get(o.pattern())
                        .marginal_log_density(&mu, o.observed())
                })
                .collect()),
            Records::Coarse(zs) => zs
                .iter()
                .enumerate()
                .map(|(i, z)| self.coarse_ignorable(i, z, &mu))
                .collect(),
        }
    }

    fn coarse_ignorable(&self, index: usize, z: &CoarseRegion, mu: &DVector<f64>) -> Result<f64> {
        match z.coords() {
            [RegionCoord::Point(y1), RegionCoord::Point(y2)] => {
                let both = self.conditioners.get(&ResponsePattern::new(vec![true, true]));
                Ok(both.marginal_log_density(mu, &[*y1, *y2]))
            }
            [RegionCoord::Point(y1), RegionCoord::HalfLineAbove(g)] => {
                let first = self.conditioners.get(&ResponsePattern::new(vec![true, false]));
                let m = first.conditional_mean(mu, &[*y1])[0];
                let tau = first.cond_cov()[(0, 0)].sqrt();
                let tail = normal_sf((g - m) / tau);
                if !(tail > 0.0) {
                    return Err(Error::Underflow { record: index });
                }
                Ok(first.marginal_log_density(mu, &[*y1]) + tail.ln())
            }
            _ => Err(Error::InvalidRegion(z.to_string())),
        }
    }

    pub fn ignorable(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.ignorable_terms(theta)?.iter().sum())
    }

    /// Per-record `ln` of the mechanism factor: `ln ∫ f(y_mis|y_obs;θ) f(r|y;ψ)`
    /// for missing data, `ln κ` (exact) or `ln E[κ | Y₂ > g, y₁]`
    /// (censored) for coarse data.
    pub fn mechanism_terms(&self, mechanism: &Mechanism, theta: &[f64], psi: &[f64]) -> Result<Vec<f64>> {
        let theta_v = as_theta(self.family, theta)?;
        let mu = self.family.mean(&theta_v)?;
        let terms: Vec<f64> = match (&self.dataset.records, mechanism) {
            (Records::Missing(obs), Mechanism::Missing(mdm)) => {
                if mdm.k() != self.family.k() {
                    return Err(Error::dim("mechanism dimension", self.family.k(), mdm.k()));
                }
                mdm.validate_psi(psi)?;
                obs.iter()
                    .map(|o| {
                        let cond = self.conditioners.get(o.pattern());
                        if cond.n_missing() > 3 {
                            return Err(Error::InvalidParameter(
                                "tensor quadrature supports at most 3 missing coordinates".into(),
                            ));
                        }
                        Ok(lig_integral_with(cond, &mu, mdm, o.observed(), psi, &self.quad.hermite).ln())
                    })
                    .collect::<Result<_>>()?
            }
            (Records::Coarse(zs), Mechanism::Coarsening(cdm)) => {
                if psi.len() != 1 {
                    return Err(Error::dim("psi", 1, psi.len()));
                }
                let psi = psi[0];
                zs.iter()
                    .enumerate()
                    .map(|(i, z)| match z.coords() {
                        [RegionCoord::Point(y1), RegionCoord::Point(y2)] => Ok(cdm.kappa(z, &[*y1, *y2], psi)?.ln()),
                        [RegionCoord::Point(y1), RegionCoord::HalfLineAbove(g)] => {
                            let probe = CensoredProbe { y1: *y1, g: *g };
                            cdm_lig_ratio(self.family, cdm, &probe, &theta_v, psi, &self.quad.legendre)?
                                .map(f64::ln)
                                .ok_or(Error::Underflow { record: i })
                        }
                        _ => Err(Error::InvalidRegion(z.to_string())),
                    })
                    .collect::<Result<_>>()?
            }
            _ => return Err(Error::Config("mechanism kind does not match the dataset mode".into())),
        };
        if let Some(i) = terms.iter().position(|t| !t.is_finite()) {
            return Err(Error::Underflow { record: i });
        }
        Ok(terms)
    }

    pub fn full(&self, mechanism: &Mechanism, theta: &[f64], psi: &[f64]) -> Result<f64> {
        let ign = self.ignorable(theta)?;
        let mech: f64 = self.mechanism_terms(mechanism, theta, psi)?.iter().sum();
        Ok(ign + mech)
    }

    pub fn evaluate(
        &self,
        mode: LikelihoodMode,
        mechanism: Option<&Mechanism>,
        theta: &[f64],
        psi: &[f64],
    ) -> Result<f64> {
        match mode {
            LikelihoodMode::Ignorable => self.ignorable(theta),
            LikelihoodMode::Full => {
                let mech = mechanism.ok_or_else(|| Error::Config("full likelihood requires a mechanism".into()))?;
                self.full(mech, theta, psi)
            }
        }
    }
}

/// Sum of log marginal densities of the observed parts (missing mode) or
/// of `ln ∫_z f(y; θ) dy` (coarse mode). All-missing records contribute 0.
pub fn ignorable_loglik(family: &AffineGaussianFamily, dataset: &Dataset, theta: &[f64]) -> Result<f64> {
    Likelihood::new(family, dataset, &QuadratureSpec::default())?.ignorable(theta)
}

/// Ignorable log-likelihood plus the log mechanism factor of every record.
pub fn full_loglik(
    family: &AffineGaussianFamily,
    mechanism: &Mechanism,
    dataset: &Dataset,
    theta: &[f64],
    psi: &[f64],
    quad: &QuadratureSpec,
) -> Result<f64> {
    Likelihood::new(family, dataset, quad)?.full(mechanism, theta, psi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodMode {
    Ignorable,
    Full,
}

impl std::str::FromStr for LikelihoodMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ignorable" => Ok(Self::Ignorable),
            "full" => Ok(Self::Full),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

pub const DEFAULT_SEARCH_LO: f64 = -5.0;
pub const DEFAULT_SEARCH_HI: f64 = 5.0;
pub const DEFAULT_FIT_TOL: f64 = 1e-6;
const MAX_SWEEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub search_lo: f64,
    pub search_hi: f64,
    pub tol: f64,
    pub quad: QuadratureSpec,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            search_lo: DEFAULT_SEARCH_LO,
            search_hi: DEFAULT_SEARCH_HI,
            tol: DEFAULT_FIT_TOL,
            quad: QuadratureSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    pub loglik_at_max: f64,
    pub mode: LikelihoodMode,
    pub converged: bool,
    pub evaluations: usize,
}

/// Maximize the selected log-likelihood over θ in the search box.
///
/// Scalar θ uses one Brent search. For `d > 1` the search is coordinatewise:
/// cyclic one-dimensional Brent searches until a full sweep moves no
/// coordinate by more than `tol`.
pub fn fit(
    family: &AffineGaussianFamily,
    dataset: &Dataset,
    mode: LikelihoodMode,
    mechanism: Option<&Mechanism>,
    psi: Option<&[f64]>,
    options: &FitOptions,
) -> Result<FitResult> {
    if dataset.is_empty() {
        return Err(Error::InvalidParameter("dataset has no records".into()));
    }
    let lik = Likelihood::new(family, dataset, &options.quad)?;
    let psi: Vec<f64> = match (mode, psi) {
        (LikelihoodMode::Full, None) => return Err(Error::Config("full likelihood requires psi".into())),
        (_, p) => p.map(<[f64]>::to_vec).unwrap_or_default(),
    };
    let (lo, hi, tol) = (options.search_lo, options.search_hi, options.tol);
    let d = family.d();
    let mut theta = vec![0.0f64.clamp(lo, hi); d];
    let mut evaluations = 0usize;
    let mut all_converged = true;
    let mut first_error: Option<Error> = None;

    let mut sweeps_converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut max_move: f64 = 0.0;
        for j in 0..d {
            let mut trial = theta.clone();
            let res = maximize_scalar(
                |t| {
                    trial[j] = t;
                    match lik.evaluate(mode, mechanism, &trial, &psi) {
                        Ok(v) => v,
                        Err(e) => {
                            first_error.get_or_insert(e);
                            f64::NAN
                        }
                    }
                },
                lo,
                hi,
                tol,
            );
            if let Some(e) = first_error.take() {
                return Err(e);
            }
            let res = res?;
            evaluations += res.evaluations;
            all_converged &= res.converged;
            max_move = max_move.max((res.argmax - theta[j]).abs());
            theta[j] = res.argmax;
        }
        if d == 1 || max_move <= tol {
            sweeps_converged = true;
            break;
        }
    }
    let loglik_at_max = lik.evaluate(mode, mechanism, &theta, &psi)?;
    evaluations += 1;
    let interior = theta.iter().all(|&t| t - lo > tol && hi - t > tol);
    Ok(FitResult {
        theta_hat: theta,
        loglik_at_max,
        mode,
        converged: all_converged && sweeps_converged && interior,
        evaluations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    /// Mean of `θ̂ − θ_true`, per coordinate.
    pub mean_bias: Vec<f64>,
    pub sd: Vec<f64>,
    /// Monte Carlo standard error of the mean bias, `sd / √reps`.
    pub mcse: Vec<f64>,
    /// Whether `|mean_bias| > 3 · mcse`, per coordinate.
    pub significant: Vec<bool>,
}

impl EstimatorSummary {
    fn from_estimates(estimates: &[Vec<f64>], truth: &[f64]) -> Self {
        let reps = estimates.len() as f64;
        let d = truth.len();
        let mut mean_bias = vec![0.0; d];
        let mut sd = vec![0.0; d];
        let mut mcse = vec![0.0; d];
        for j in 0..d {
            let mean = estimates.iter().map(|e| e[j]).sum::<f64>() / reps;
            let var = estimates.iter().map(|e| (e[j] - mean).powi(2)).sum::<f64>() / (reps - 1.0);
            mean_bias[j] = mean - truth[j];
            sd[j] = var.sqrt();
            mcse[j] = sd[j] / reps.sqrt();
        }
        let significant = mean_bias
            .iter()
            .zip(&mcse)
            .map(|(b, s)| b.abs() > BIAS_SIGNIFICANCE * s)
            .collect();
        Self {
            mean_bias,
            sd,
            mcse,
            significant,
        }
    }

    pub fn any_significant(&self) -> bool {
        self.significant.iter().any(|&s| s)
    }
}

/// Bias counts as significant beyond this many Monte Carlo standard errors.
pub const BIAS_SIGNIFICANCE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    pub theta_ignorable: Vec<f64>,
    pub theta_full: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub mechanism: String,
    pub theta_true: Vec<f64>,
    pub psi_true: Vec<f64>,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub ignorable: EstimatorSummary,
    pub full: EstimatorSummary,
    pub per_replication: Vec<Replication>,
}

/// Simulate `replications` datasets, fit both estimators on each and
/// summarize their bias. Replication `i` uses seed `derive_seed(seed, i)`.
#[allow(clippy::too_many_arguments)]
pub fn bias_experiment(
    family: &AffineGaussianFamily,
    mechanism: &Mechanism,
    theta_true: &[f64],
    psi_true: &[f64],
    n: usize,
    replications: usize,
    seed: u64,
    options: &FitOptions,
) -> Result<BiasSummary> {
    if replications < 50 {
        return Err(Error::InvalidParameter(format!(
            "bias experiment needs at least 50 replications, got {replications}"
        )));
    }
    as_theta(family, theta_true)?;
    let per_replication: Vec<Replication> = (0..replications)
        .into_par_iter()
        .map(|i| {
            let rep_seed = derive_seed(seed, i as u64);
            let data = match mechanism {
                Mechanism::Missing(mdm) => simulate_missing(family, mdm, theta_true, psi_true, n, rep_seed)?,
                Mechanism::Coarsening(cdm) => {
                    let psi = *psi_true.first().ok_or_else(|| Error::dim("psi", 1, 0))?;
                    simulate_censored(family, cdm, theta_true, psi, n, rep_seed)?
                }
            };
            let run = |mode| fit(family, &data, mode, Some(mechanism), Some(psi_true), options);
            let ign = run(LikelihoodMode::Ignorable);
            let full = run(LikelihoodMode::Full);
            match (ign, full) {
                (Ok(a), Ok(b)) => Ok(Replication {
                    index: i,
                    seed: rep_seed,
                    theta_ignorable: a.theta_hat,
                    theta_full: b.theta_hat,
                }),
                (Err(e), _) | (_, Err(e)) => Err(Error::Numerical(format!("replication {i}: {e}"))),
            }
        })
        .collect::<Result<_>>()?;
    let ign: Vec<Vec<f64>> = per_replication.iter().map(|r| r.theta_ignorable.clone()).collect();
    let full: Vec<Vec<f64>> = per_replication.iter().map(|r| r.theta_full.clone()).collect();
    Ok(BiasSummary {
        mechanism: mechanism.name().to_string(),
        theta_true: theta_true.to_vec(),
        psi_true: psi_true.to_vec(),
        n,
        replications,
        seed,
        ignorable: EstimatorSummary::from_estimates(&ign, theta_true),
        full: EstimatorSummary::from_estimates(&full, theta_true),
        per_replication,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{CdmKind, MdmKind};
    use crate::numerics::normal_pdf;

    fn scalar_data(values: &[f64]) -> Dataset {
        let obs = values
            .iter()
            .map(|&v| Observation::new(ResponsePattern::all_observed(1), vec![v]).unwrap())
            .collect();
        Dataset::missing(1, obs).unwrap()
    }

    #[test]
    fn scalar_mle_is_sample_mean() {
        let fam = AffineGaussianFamily::scalar_normal();
        let data = scalar_data(&[1.0, 2.0, 3.0]);
        let r = fit(
            &fam,
            &data,
            LikelihoodMode::Ignorable,
            None,
            None,
            &FitOptions::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert!((r.theta_hat[0] - 2.0).abs() < 1e-6);
        let want: f64 = [1.0, 2.0, 3.0].iter().map(|y: &f64| normal_pdf(y - 2.0).ln()).sum();
        assert!((r.loglik_at_max - want).abs() < 1e-9);
    }

    #[test]
    fn all_missing_record_contributes_zero() {
        let fam = AffineGaussianFamily::example_3_1();
        let rec = Observation::new(ResponsePattern::all_missing(2), vec![]).unwrap();
        let data = Dataset::missing(2, vec![rec]).unwrap();
        for t in [-3.0, 0.0, 1.5] {
            assert_eq!(ignorable_loglik(&fam, &data, &[t]).unwrap(), 0.0);
        }
    }

    #[test]
    fn censored_record_ignorable_value() {
        let fam = AffineGaussianFamily::example_3_1();
        let z = CoarseRegion::new(vec![RegionCoord::Point(0.0), RegionCoord::HalfLineAbove(0.0)]).unwrap();
        let data = Dataset::coarse(vec![z]).unwrap();
        let got = ignorable_loglik(&fam, &data, &[0.0]).unwrap();
        // f(y1 = 0; θ = 0) = φ(0); Y2 | y1 = 0 ~ N(0, 3/4), so P(Y2 > 0) = 1/2.
        assert!((got - (0.398_942_280_401_432_7f64 * 0.5).ln()).abs() < 1e-14);
    }

    #[test]
    fn empty_dataset_rejected() {
        let fam = AffineGaussianFamily::scalar_normal();
        let data = Dataset::missing(1, vec![]).unwrap();
        assert!(fit(
            &fam,
            &data,
            LikelihoodMode::Ignorable,
            None,
            None,
            &FitOptions::default()
        )
        .is_err());
    }

    #[test]
    fn always_observed_has_no_missingness() {
        let fam = AffineGaussianFamily::example_3_1();
        let table = MdmSpec::new(MdmKind::Table, 2).unwrap();
        let data = simulate_missing(&fam, &table, &[0.3], &[0.0, 0.0, 0.0, 1.0], 200, 4).unwrap();
        assert_eq!(data.pattern_counts().len(), 1);
        assert_eq!(data.pattern_counts()[&ResponsePattern::all_observed(2)], 200);
    }

    #[test]
    fn simulation_is_repeatable() {
        let fam = AffineGaussianFamily::example_3_1();
        let mdm = MdmSpec::new(MdmKind::Ex32, 2).unwrap();
        let a = simulate_missing(&fam, &mdm, &[1.0], &[0.5], 50, 8).unwrap();
        let b = simulate_missing(&fam, &mdm, &[1.0], &[0.5], 50, 8).unwrap();
        assert_eq!(a, b);
        let cdm = CdmSpec::new(CdmKind::Ex41);
        let a = simulate_censored(&fam, &cdm, &[0.0], 0.0, 50, 8).unwrap();
        let b = simulate_censored(&fam, &cdm, &[0.0], 0.0, 50, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn censoring_fraction_is_one_half() {
        // P(G < Y2) = Φ((θ/2 − ψ)/√var(Y2 − G)) with var(Y2 − G) = 1 + 1 − 2·½ = 1.
        let fam = AffineGaussianFamily::example_3_1();
        let n = 20_000;
        let data = simulate_censored(&fam, &CdmSpec::new(CdmKind::Ex41), &[0.0], 0.0, n, 12).unwrap();
        let censored = data.pattern_counts()[&ResponsePattern::new(vec![true, false])] as f64 / n as f64;
        assert!((censored - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn mar_difference_is_constant_in_theta() {
        let fam = AffineGaussianFamily::complete_control();
        let mdm = MdmSpec::new(MdmKind::MarLogistic, 2).unwrap();
        let mech = Mechanism::Missing(mdm.clone());
        let psi = [0.2, 1.0];
        let data = simulate_missing(&fam, &mdm, &[0.5, -0.5], &psi, 100, 2).unwrap();
        let lik = Likelihood::new(&fam, &data, &QuadratureSpec::default()).unwrap();
        let diffs: Vec<f64> = [[0.0, 0.0], [1.0, -1.0], [-2.0, 2.0]]
            .iter()
            .map(|t| lik.full(&mech, t, &psi).unwrap() - lik.ignorable(t).unwrap())
            .collect();
        for d in &diffs {
            assert!((d - diffs[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn mnar_difference_varies_on_complete_family() {
        let fam = AffineGaussianFamily::complete_control();
        let mdm = MdmSpec::new(MdmKind::MnarLogistic, 2).unwrap();
        let mech = Mechanism::Missing(mdm.clone());
        let psi = [0.0, 2.0];
        let data = simulate_missing(&fam, &mdm, &[0.0, 0.0], &psi, 100, 2).unwrap();
        let lik = Likelihood::new(&fam, &data, &QuadratureSpec::default()).unwrap();
        let d0 = lik.full(&mech, &[0.0, 0.0], &psi).unwrap() - lik.ignorable(&[0.0, 0.0]).unwrap();
        let d1 = lik.full(&mech, &[0.0, 1.0], &psi).unwrap() - lik.ignorable(&[0.0, 1.0]).unwrap();
        assert!((d0 - d1).abs() > 1e-3);
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let fam = AffineGaussianFamily::example_3_1();
        let data = scalar_data(&[1.0]);
        let mech = Mechanism::Coarsening(CdmSpec::new(CdmKind::Ex41));
        assert!(full_loglik(&fam, &mech, &data, &[0.0], &[0.0], &QuadratureSpec::default()).is_err());
        let fam1 = AffineGaussianFamily::scalar_normal();
        assert!(full_loglik(&fam1, &mech, &data, &[0.0], &[0.0], &QuadratureSpec::default()).is_err());
    }

    #[test]
    fn too_few_replications() {
        let fam = AffineGaussianFamily::example_3_1();
        let mech = Mechanism::Missing(MdmSpec::new(MdmKind::Ex32, 2).unwrap());
        assert!(bias_experiment(&fam, &mech, &[0.0], &[0.5], 10, 49, 1, &FitOptions::default()).is_err());
    }
}
