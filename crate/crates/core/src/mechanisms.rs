//! Missing-data mechanisms `f(r | y; ψ)` and coarsening mechanisms
//! `h(g | y; ψ)` with the induced `κ(z, y; ψ)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ResponsePattern;
use crate::numerics::{logistic, normal_pdf, normal_sf, seeded_rng, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MdmKind {
    /// Support `{𝟙, 𝟙 − e_k}`; `P(r = 𝟙 − e_k | y) = σ(ψ₀ + ψ₁ y₁)` for
    /// `k ≥ 2` and `σ(ψ₀)` for `k = 1`. MAR by construction.
    MarLogistic,
    /// Support `{𝟙, 𝟙 − e_k}`; `P(r = 𝟙 − e_k | y) = σ(ψ₀ + ψ₁ y_k)`.
    /// Depends on the coordinate it hides.
    MnarLogistic,
    /// `k = 2`: `P(r = (1,0) | y) = ½ σ(ψ(y₁ + y₂))`,
    /// `P(r = (0,1) | y) = ½ σ(ψ y₂)`, `(1,1)` takes the rest and `(0,0)`
    /// never occurs. Only the `(1,0)` branch depends on a missing value.
    Ex32,
    /// `k = 3`, support `{(1,0,0), (1,1,1)}` with
    /// `P(r = (1,0,0) | y) = ½ σ(ψ (y₂ − y₃))`.
    Ex33,
    /// Constant probabilities, one per pattern in binary-index order, given
    /// as the parameter vector itself.
    Table,
}

impl MdmKind {
    pub const ALL: [MdmKind; 5] = [
        MdmKind::MarLogistic,
        MdmKind::MnarLogistic,
        MdmKind::Ex32,
        MdmKind::Ex33,
        MdmKind::Table,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MdmKind::MarLogistic => "mar_logistic",
            MdmKind::MnarLogistic => "mnar_logistic",
            MdmKind::Ex32 => "ex32",
            MdmKind::Ex33 => "ex33",
            MdmKind::Table => "table",
        }
    }
}

impl fmt::Display for MdmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MdmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MdmKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

/// A missing-data mechanism of a given kind for `k`-dimensional responses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MdmSpec {
    kind: MdmKind,
    k: usize,
}

impl MdmSpec {
    pub fn new(kind: MdmKind, k: usize) -> Result<Self> {
        let ok = match kind {
            MdmKind::MarLogistic | MdmKind::MnarLogistic | MdmKind::Table => (1..=16).contains(&k),
            MdmKind::Ex32 => k == 2,
            MdmKind::Ex33 => k == 3,
        };
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "mechanism {kind} is not defined for k = {k}"
            )));
        }
        Ok(Self { kind, k })
    }

    pub fn kind(&self) -> MdmKind {
        self.kind
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn psi_dim(&self) -> usize {
        match self.kind {
            MdmKind::MarLogistic | MdmKind::MnarLogistic => 2,
            MdmKind::Ex32 | MdmKind::Ex33 => 1,
            MdmKind::Table => 1 << self.k,
        }
    }

    /// True when the mechanism depends on `y` only through `z(y, r)`.
    pub fn is_mar_by_construction(&self) -> bool {
        matches!(self.kind, MdmKind::MarLogistic | MdmKind::Table)
    }

    /// Patterns that can have nonzero probability. For `table`, every
    /// pattern is listed since support depends on ψ.
    pub fn support(&self) -> Vec<ResponsePattern> {
        let k = self.k;
        match self.kind {
            MdmKind::MarLogistic | MdmKind::MnarLogistic => {
                let mut last_missing = vec![true; k];
                last_missing[k - 1] = false;
                vec![ResponsePattern::all_observed(k), ResponsePattern::new(last_missing)]
            }
            MdmKind::Ex32 => vec![
                ResponsePattern::new(vec![true, true]),
                ResponsePattern::new(vec![true, false]),
                ResponsePattern::new(vec![false, true]),
            ],
            MdmKind::Ex33 => vec![
                ResponsePattern::new(vec![true, false, false]),
                ResponsePattern::all_observed(3),
            ],
            MdmKind::Table => ResponsePattern::enumerate(k),
        }
    }

    /// Default ψ probe set used by the checks.
    pub fn default_psi_probes(&self) -> Vec<Vec<f64>> {
        match self.kind {
            MdmKind::MarLogistic | MdmKind::MnarLogistic => [-1.0, 0.5, 2.0].iter().map(|&s| vec![0.0, s]).collect(),
            MdmKind::Ex32 | MdmKind::Ex33 => [-1.0, 0.5, 2.0].iter().map(|&s| vec![s]).collect(),
            MdmKind::Table => vec![vec![1.0 / (1u64 << self.k) as f64; 1 << self.k]],
        }
    }

    /// Reject ψ of the wrong length, and for `table` probabilities that are
    /// out of range or do not sum to one.
    pub fn validate_psi(&self, psi: &[f64]) -> Result<()> {
        if psi.len() != self.psi_dim() {
            return Err(Error::dim("psi", self.psi_dim(), psi.len()));
        }
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("psi entries must be finite".into()));
        }
        if self.kind == MdmKind::Table {
            if psi.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::InvalidParameter("table probabilities must lie in [0, 1]".into()));
            }
            let total: f64 = psi.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "table probabilities sum to {total}, expected 1"
                )));
            }
        }
        Ok(())
    }

    /// `f(r | y; ψ)`.
    pub fn prob(&self, r: &ResponsePattern, y: &[f64], psi: &[f64]) -> Result<f64> {
        if r.len() != self.k {
            return Err(Error::dim("response pattern", self.k, r.len()));
        }
        if y.len() != self.k {
            return Err(Error::dim("y", self.k, y.len()));
        }
        self.validate_psi(psi)?;
        Ok(self.prob_unchecked(r, y, psi))
    }

    /// [`prob`](Self::prob) without argument validation; used in quadrature
    /// inner loops after the caller has validated once.
    pub(crate) fn prob_unchecked(&self, r: &ResponsePattern, y: &[f64], psi: &[f64]) -> f64 {
        let k = self.k;
        let bits = r.bits();
        let complete = r.is_complete();
        let last_only_missing = bits[..k - 1].iter().all(|&b| b) && !bits[k - 1];
        match self.kind {
            MdmKind::MarLogistic | MdmKind::MnarLogistic => {
                let driver = match (self.kind, k) {
                    (MdmKind::MarLogistic, 1) => 0.0,
                    (MdmKind::MarLogistic, _) => y[0],
                    _ => y[k - 1],
                };
                let p_drop = logistic(psi[0] + psi[1] * driver);
                if complete {
                    1.0 - p_drop
                } else if last_only_missing {
                    p_drop
                } else {
                    0.0
                }
            }
            MdmKind::Ex32 => {
                let drop_second = 0.5 * logistic(psi[0] * (y[0] + y[1]));
                let drop_first = 0.5 * logistic(psi[0] * y[1]);
                match (bits[0], bits[1]) {
                    (true, true) => 1.0 - drop_second - drop_first,
                    (true, false) => drop_second,
                    (false, true) => drop_first,
                    (false, false) => 0.0,
                }
            }
            MdmKind::Ex33 => {
                let p_drop = 0.5 * logistic(psi[0] * (y[1] - y[2]));
                match (bits[0], bits[1], bits[2]) {
                    (true, false, false) => p_drop,
                    (true, true, true) => 1.0 - p_drop,
                    _ => 0.0,
                }
            }
            MdmKind::Table => psi[r.index()],
        }
    }

    /// Draw `r ~ f(· | y; ψ)` over `{0,1}ᵏ`.
    pub fn sample_pattern(&self, y: &[f64], psi: &[f64], seed: u64) -> Result<ResponsePattern> {
        self.sample_pattern_with(y, psi, &mut seeded_rng(seed))
    }

    pub fn sample_pattern_with(&self, y: &[f64], psi: &[f64], rng: &mut SimRng) -> Result<ResponsePattern> {
        if y.len() != self.k {
            return Err(Error::dim("y", self.k, y.len()));
        }
        self.validate_psi(psi)?;
        let patterns = ResponsePattern::enumerate(self.k);
        let probs: Vec<f64> = patterns.iter().map(|r| self.prob_unchecked(r, y, psi)).collect();
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Numerical(format!(
                "pattern probabilities sum to {total} at y = {y:?}"
            )));
        }
        let u: f64 = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                last_positive = i;
            }
            acc += p;
            if u < acc {
                return Ok(patterns[i].clone());
            }
        }
        Ok(patterns[last_positive].clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdmKind {
    /// Censoring time jointly Gaussian with the response:
    /// `G | y ~ N(ψ − y₁/3 + 2y₂/3, 2/3)`.
    Ex41,
    /// Censoring time independent of the response: `G ~ N(ψ, 1)`.
    CarCensor,
}

impl CdmKind {
    pub const ALL: [CdmKind; 2] = [CdmKind::Ex41, CdmKind::CarCensor];

    pub fn name(self) -> &'static str {
        match self {
            CdmKind::Ex41 => "ex41",
            CdmKind::CarCensor => "car_censor",
        }
    }
}

impl fmt::Display for CdmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CdmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CdmKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

const EX41_VAR: f64 = 2.0 / 3.0;

/// Right-censoring of the second coordinate of a bivariate response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CdmSpec {
    kind: CdmKind,
}

impl CdmSpec {
    pub fn new(kind: CdmKind) -> Self {
        Self { kind }
    }

    pub fn kind(&self) -> CdmKind {
        self.kind
    }

    pub fn psi_dim(&self) -> usize {
        1
    }

    pub fn default_psi_probes(&self) -> Vec<Vec<f64>> {
        [-1.0, 0.5, 2.0].iter().map(|&s| vec![s]).collect()
    }

    /// Mean and standard deviation of `G | y`.
    pub fn censor_law(&self, y: &[f64], psi: f64) -> (f64, f64) {
        match self.kind {
            CdmKind::Ex41 => (psi - y[0] / 3.0 + 2.0 * y[1] / 3.0, EX41_VAR.sqrt()),
            CdmKind::CarCensor => (psi, 1.0),
        }
    }

    fn check_y(y: &[f64]) -> Result<()> {
        if y.len() != 2 {
            return Err(Error::dim("y", 2, y.len()));
        }
        Ok(())
    }

    /// Normalized conditional density `h(g | y; ψ)`.
    pub fn density(&self, g: f64, y: &[f64], psi: f64) -> Result<f64> {
        Self::check_y(y)?;
        Ok(self.density_unchecked(g, y, psi))
    }

    pub(crate) fn density_unchecked(&self, g: f64, y: &[f64], psi: f64) -> f64 {
        let (m, s) = self.censor_law(y, psi);
        normal_pdf((g - m) / s) / s
    }

    /// `κ(z, y; ψ)`: `P(G ≥ y₂ | y)` for an exact region and `h(g | y; ψ)`
    /// for the censored region `{y₁} × (g, ∞)`.
    pub fn kappa(&self, z: &CoarseRegion, y: &[f64], psi: f64) -> Result<f64> {
        Self::check_y(y)?;
        match z.coords() {
            [RegionCoord::Point(_), RegionCoord::Point(_)] => {
                let (m, s) = self.censor_law(y, psi);
                Ok(normal_sf((y[1] - m) / s))
            }
            [RegionCoord::Point(_), RegionCoord::HalfLineAbove(g)] => Ok(self.density_unchecked(*g, y, psi)),
            _ => Err(Error::InvalidRegion(z.to_string())),
        }
    }

    /// Draw a censoring time `G ~ h(· | y; ψ)`.
    pub fn sample_censor(&self, y: &[f64], psi: f64, rng: &mut SimRng) -> Result<f64> {
        Self::check_y(y)?;
        let (m, s) = self.censor_law(y, psi);
        Ok(m + s * crate::numerics::draw_standard(rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum RegionCoord {
    Point(f64),
    /// The open half-line `(t, ∞)`.
    HalfLineAbove(f64),
}

impl RegionCoord {
    pub fn contains(&self, v: f64) -> bool {
        match *self {
            RegionCoord::Point(p) => v == p,
            RegionCoord::HalfLineAbove(t) => v > t,
        }
    }
}

/// An observable set `z`: a product of points and half-lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseRegion {
    coords: Vec<RegionCoord>,
}

impl CoarseRegion {
    pub fn new(coords: Vec<RegionCoord>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidParameter("a region needs at least one coordinate".into()));
        }
        Ok(Self { coords })
    }

    pub fn exact(y: &[f64]) -> Result<Self> {
        Self::new(y.iter().map(|&v| RegionCoord::Point(v)).collect())
    }

    pub fn coords(&self) -> &[RegionCoord] {
        &self.coords
    }

    pub fn is_exact(&self) -> bool {
        self.coords.iter().all(|c| matches!(c, RegionCoord::Point(_)))
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        y.len() == self.coords.len() && self.coords.iter().zip(y).all(|(c, &v)| c.contains(v))
    }
}

impl fmt::Display for CoarseRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (j, c) in self.coords.iter().enumerate() {
            if j > 0 {
                write!(f, " x ")?;
            }
            match c {
                RegionCoord::Point(v) => write!(f, "{{{v}}}")?,
                RegionCoord::HalfLineAbove(t) => write!(f, "({t}, inf)")?,
            }
        }
        Ok(())
    }
}

/// Right-censoring of `y₂` at `g`: the exact point when `g ≥ y₂`, otherwise
/// `{y₁} × (g, ∞)`.
pub fn coarsen(y: &[f64], g: f64) -> Result<CoarseRegion> {
    if y.len() != 2 {
        return Err(Error::dim("y", 2, y.len()));
    }
    let second = if g >= y[1] {
        RegionCoord::Point(y[1])
    } else {
        RegionCoord::HalfLineAbove(g)
    };
    CoarseRegion::new(vec![RegionCoord::Point(y[0]), second])
}

/// Either kind of mechanism.
#[derive(Debug, Clone, PartialEq)]
pub enum Mechanism {
    Missing(MdmSpec),
    Coarsening(CdmSpec),
}

impl Mechanism {
    pub fn psi_dim(&self) -> usize {
        match self {
            Mechanism::Missing(m) => m.psi_dim(),
            Mechanism::Coarsening(c) => c.psi_dim(),
        }
    }

    pub fn default_psi_probes(&self) -> Vec<Vec<f64>> {
        match self {
            Mechanism::Missing(m) => m.default_psi_probes(),
            Mechanism::Coarsening(c) => c.default_psi_probes(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::Missing(m) => m.kind().name(),
            Mechanism::Coarsening(c) => c.kind().name(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AffineGaussianFamily;
    use crate::numerics::{normal_cdf, GaussLegendre};
    use nalgebra::DVector;
    use rand::SeedableRng;

    fn pat(bits: &[u8]) -> ResponsePattern {
        ResponsePattern::from_bits(bits).unwrap()
    }

    fn all_builtins() -> Vec<(MdmSpec, Vec<f64>)> {
        let mut v = Vec::new();
        for k in 1..=3 {
            v.push((MdmSpec::new(MdmKind::MarLogistic, k).unwrap(), vec![0.3, -1.2]));
            v.push((MdmSpec::new(MdmKind::MnarLogistic, k).unwrap(), vec![-0.4, 2.0]));
        }
        v.push((MdmSpec::new(MdmKind::Ex32, 2).unwrap(), vec![0.5]));
        v.push((MdmSpec::new(MdmKind::Ex33, 3).unwrap(), vec![2.0]));
        v.push((MdmSpec::new(MdmKind::Table, 2).unwrap(), vec![0.1, 0.2, 0.3, 0.4]));
        v
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = SimRng::seed_from_u64(5);
        for (mdm, psi0) in all_builtins() {
            let patterns = ResponsePattern::enumerate(mdm.k());
            for _ in 0..100 {
                let y: Vec<f64> = (0..mdm.k()).map(|_| rng.gen_range(-4.0..4.0)).collect();
                let psi: Vec<f64> = if mdm.kind() == MdmKind::Table {
                    psi0.clone()
                } else {
                    psi0.iter().map(|p| p * rng.gen_range(-2.0..2.0)).collect()
                };
                let total: f64 = patterns
                    .iter()
                    .map(|r| {
                        let p = mdm.prob(r, &y, &psi).unwrap();
                        assert!((0.0..=1.0).contains(&p));
                        p
                    })
                    .sum();
                assert!((total - 1.0).abs() < 1e-9, "{} at {y:?}", mdm.kind());
            }
        }
    }

    #[test]
    fn ex32_never_all_missing() {
        let mdm = MdmSpec::new(MdmKind::Ex32, 2).unwrap();
        for psi in [-3.0, 0.0, 0.5, 7.0] {
            assert_eq!(mdm.prob(&pat(&[0, 0]), &[1.0, -2.0], &[psi]).unwrap(), 0.0);
        }
    }

    #[test]
    fn zero_coefficients_are_uniform_on_support() {
        let mdm = MdmSpec::new(MdmKind::MarLogistic, 2).unwrap();
        for r in mdm.support() {
            assert_eq!(mdm.prob(&r, &[3.0, -1.0], &[0.0, 0.0]).unwrap(), 0.5);
        }
        let ex32 = MdmSpec::new(MdmKind::Ex32, 2).unwrap();
        let want = [(pat(&[1, 1]), 0.5), (pat(&[1, 0]), 0.25), (pat(&[0, 1]), 0.25)];
        for (r, p) in want {
            assert_eq!(ex32.prob(&r, &[3.0, -1.0], &[0.0]).unwrap(), p);
        }
    }

    #[test]
    fn ex32_first_missing_branch_ignores_y1() {
        let ex32 = MdmSpec::new(MdmKind::Ex32, 2).unwrap();
        let base = ex32.prob(&pat(&[0, 1]), &[0.0, 0.7], &[1.5]).unwrap();
        for y1 in [-4.0, -0.3, 2.2, 9.0] {
            assert_eq!(ex32.prob(&pat(&[0, 1]), &[y1, 0.7], &[1.5]).unwrap(), base);
        }
        assert_ne!(
            ex32.prob(&pat(&[1, 0]), &[0.0, 0.7], &[1.5]).unwrap(),
            ex32.prob(&pat(&[1, 0]), &[0.0, -0.7], &[1.5]).unwrap()
        );
    }

    #[test]
    fn ex33_value() {
        let mdm = MdmSpec::new(MdmKind::Ex33, 3).unwrap();
        for psi in [-1.0, 0.5, 2.0] {
            let p = mdm.prob(&pat(&[1, 0, 0]), &[0.7, 2.0, 2.0], &[psi]).unwrap();
            assert_eq!(p, 0.25);
        }
    }

    #[test]
    fn ex33_depends_on_missing_part_only_through_differences() {
        let mdm = MdmSpec::new(MdmKind::Ex33, 3).unwrap();
        let r = pat(&[1, 0, 0]);
        let mut rng = SimRng::seed_from_u64(17);
        for _ in 0..200 {
            // dyadic values keep y + c exact in binary floating point
            let d = |rng: &mut SimRng| f64::from(rng.gen_range(-64i32..64)) / 8.0;
            let y = [d(&mut rng), d(&mut rng), d(&mut rng)];
            let c = d(&mut rng);
            let psi = [d(&mut rng)];
            let shifted = [y[0], y[1] + c, y[2] + c];
            assert_eq!(mdm.prob(&r, &y, &psi).unwrap(), mdm.prob(&r, &shifted, &psi).unwrap());
        }
    }

    #[test]
    fn mar_logistic_ignores_missing_coordinates() {
        let mdm = MdmSpec::new(MdmKind::MarLogistic, 3).unwrap();
        let psi = [0.2, 1.5];
        for r in mdm.support() {
            let base = mdm.prob(&r, &[0.4, 1.0, -2.0], &psi).unwrap();
            for mis in r.missing_indices() {
                let mut y = [0.4, 1.0, -2.0];
                y[mis] += 3.7;
                assert_eq!(mdm.prob(&r, &y, &psi).unwrap(), base);
            }
        }
    }

    #[test]
    fn argument_errors() {
        let mdm = MdmSpec::new(MdmKind::Ex32, 2).unwrap();
        assert!(mdm.prob(&pat(&[1, 0]), &[0.0, 0.0], &[1.0, 2.0]).is_err());
        assert!(mdm.prob(&pat(&[1, 0, 1]), &[0.0, 0.0], &[1.0]).is_err());
        assert!(MdmSpec::new(MdmKind::Ex33, 2).is_err());
        assert!(matches!("nope".parse::<MdmKind>(), Err(Error::UnknownKind(_))));
        let table = MdmSpec::new(MdmKind::Table, 1).unwrap();
        assert!(table.validate_psi(&[0.5, 0.6]).is_err());
        assert!(table.validate_psi(&[-0.1, 1.1]).is_err());
    }

    #[test]
    fn sample_pattern_degenerate_and_repeatable() {
        let table = MdmSpec::new(MdmKind::Table, 2).unwrap();
        let psi = [0.0, 0.0, 0.0, 1.0];
        for seed in 0..50 {
            assert_eq!(table.sample_pattern(&[0.0, 0.0], &psi, seed).unwrap(), pat(&[1, 1]));
        }
        let ex32 = MdmSpec::new(MdmKind::Ex32, 2).unwrap();
        let a = ex32.sample_pattern(&[0.3, -0.2], &[1.0], 9).unwrap();
        let b = ex32.sample_pattern(&[0.3, -0.2], &[1.0], 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_pattern_frequencies() {
        let mdm = MdmSpec::new(MdmKind::Ex32, 2).unwrap();
        let (y, psi) = ([0.4, -0.3], [1.3]);
        let n = 100_000;
        let mut rng = SimRng::seed_from_u64(3);
        let mut counts = std::collections::HashMap::new();
        for _ in 0..n {
            *counts
                .entry(mdm.sample_pattern_with(&y, &psi, &mut rng).unwrap())
                .or_insert(0usize) += 1;
        }
        for r in ResponsePattern::enumerate(2) {
            let p = mdm.prob(&r, &y, &psi).unwrap();
            let freq = *counts.get(&r).unwrap_or(&0) as f64 / n as f64;
            let band = 4.0 * (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() <= band.max(1e-12), "{r}: {freq} vs {p}");
        }
    }

    #[test]
    fn cdm_density_values() {
        let ex41 = CdmSpec::new(CdmKind::Ex41);
        let v = ex41.density(0.0, &[0.0, 0.0], 0.0).unwrap();
        assert!((v - 0.488_602_511_902_919_9).abs() < 1e-12);
        let car = CdmSpec::new(CdmKind::CarCensor);
        assert!((car.density(1.5, &[9.0, -3.0], 1.5).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!(ex41.density(0.0, &[0.0], 0.0).is_err());
    }

    #[test]
    fn ex41_matches_trivariate_conditioning() {
        // Condition (Y1, Y2, G) ~ N((θ, θ/2, ψ), Σ₃) on y by the general
        // Gaussian formula and compare with the closed form.
        let a = nalgebra::DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 0.0, 0.0, 1.0]);
        let sigma = nalgebra::DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.5, 1.0, 0.5, 0.0, 0.5, 1.0]);
        let joint = AffineGaussianFamily::new(a, DVector::zeros(3), sigma).unwrap();
        let ex41 = CdmSpec::new(CdmKind::Ex41);
        for &(t, psi, y1, y2) in &[(0.0, 0.0, 0.0, 0.0), (1.0, -0.5, 0.3, 1.2), (-2.0, 2.0, -1.0, 0.4)] {
            let c = joint
                .conditional(&pat(&[1, 1, 0]), &[y1, y2], &DVector::from_vec(vec![t, psi]))
                .unwrap();
            let (m, s) = ex41.censor_law(&[y1, y2], psi);
            assert!((c.mean[0] - m).abs() < 1e-12);
            assert!((c.cov[(0, 0)] - s * s).abs() < 1e-12);
        }
    }

    #[test]
    fn cdm_density_normalized() {
        let rule = GaussLegendre::new(40).unwrap();
        for cdm in [CdmSpec::new(CdmKind::Ex41), CdmSpec::new(CdmKind::CarCensor)] {
            for &(y1, y2, psi) in &[(0.0, 0.0, 0.0), (1.0, -2.0, 0.5), (-0.3, 2.5, -1.0)] {
                let (m, s) = cdm.censor_law(&[y1, y2], psi);
                let (lo, width) = (m - 12.0 * s, 24.0 * s);
                let integral: f64 = (0..4)
                    .map(|p| {
                        let left = lo + width / 4.0 * p as f64;
                        width / 4.0 * rule.integrate(|t| cdm.density(left + width / 4.0 * t, &[y1, y2], psi).unwrap())
                    })
                    .sum();
                assert!((integral - 1.0).abs() < 1e-12, "{integral}");
            }
        }
    }

    #[test]
    fn coarsening_rule() {
        use RegionCoord::*;
        assert_eq!(coarsen(&[1.0, 2.0], 3.0).unwrap().coords(), &[Point(1.0), Point(2.0)]);
        assert_eq!(
            coarsen(&[1.0, 2.0], 0.0).unwrap().coords(),
            &[Point(1.0), HalfLineAbove(0.0)]
        );
        assert_eq!(coarsen(&[1.0, 2.0], 2.0).unwrap().coords(), &[Point(1.0), Point(2.0)]);
        assert!(coarsen(&[1.0], 0.0).is_err());
    }

    #[test]
    fn region_membership() {
        use RegionCoord::*;
        let z = CoarseRegion::new(vec![Point(1.0), HalfLineAbove(0.0)]).unwrap();
        assert!(z.contains(&[1.0, 0.5]));
        assert!(!z.contains(&[1.0, -1.0]));
        assert!(!z.contains(&[2.0, 0.5]));
        assert!(!z.contains(&[1.0, 0.0]));
        assert!(CoarseRegion::new(vec![]).is_err());
    }

    #[test]
    fn kappa_branches() {
        use RegionCoord::*;
        let ex41 = CdmSpec::new(CdmKind::Ex41);
        let exact = CoarseRegion::exact(&[0.0, 0.0]).unwrap();
        assert!((ex41.kappa(&exact, &[0.0, 0.0], 0.0).unwrap() - 0.5).abs() < 1e-15);

        let cens = CoarseRegion::new(vec![Point(0.0), HalfLineAbove(0.0)]).unwrap();
        let s = (2.0f64 / 3.0).sqrt();
        let mut values = Vec::new();
        for y2 in [0.5, 1.0, 2.0] {
            let k = ex41.kappa(&cens, &[0.0, y2], 0.0).unwrap();
            let want = normal_pdf((-2.0 * y2 / 3.0) / s) / s;
            assert!((k - want).abs() < 1e-15);
            values.push(k);
        }
        assert!(values[0] != values[1] && values[1] != values[2]);

        let car = CdmSpec::new(CdmKind::CarCensor);
        let base = car.kappa(&cens, &[0.0, 0.5], 0.3).unwrap();
        for y2 in [1.0, 4.0] {
            assert_eq!(car.kappa(&cens, &[0.0, y2], 0.3).unwrap(), base);
        }
        assert!((base - normal_pdf(-0.3)).abs() < 1e-15);

        let bad = CoarseRegion::new(vec![HalfLineAbove(0.0), Point(1.0)]).unwrap();
        assert!(matches!(
            ex41.kappa(&bad, &[1.0, 1.0], 0.0),
            Err(Error::InvalidRegion(_))
        ));
    }

    #[test]
    fn coarsening_outcomes_exhaust_g() {
        // P(G ≥ y₂ | y) + ∫_{-∞}^{y₂} h dg = 1; the second term by GL
        // quadrature on the CDF substitution is Φ((y₂ − m)/s).
        let rule = GaussLegendre::new(40).unwrap();
        for cdm in [CdmSpec::new(CdmKind::Ex41), CdmSpec::new(CdmKind::CarCensor)] {
            for &(y1, y2, psi) in &[(0.0, 0.0, 0.0), (1.0, -1.0, 0.5), (-2.0, 1.5, 2.0)] {
                let exact = CoarseRegion::exact(&[y1, y2]).unwrap();
                let kappa = cdm.kappa(&exact, &[y1, y2], psi).unwrap();
                let (m, s) = cdm.censor_law(&[y1, y2], psi);
                // ∫_{y₂−L}^{y₂} h dg with L = 12 s, mapped to [0, 1].
                let len = 12.0 * s;
                let below = rule.integrate(|u| {
                    let g = y2 - len + len * u;
                    len * cdm.density(g, &[y1, y2], psi).unwrap()
                });
                assert!((kappa + below - 1.0).abs() < 1e-6);
                assert!((kappa + normal_cdf((y2 - m) / s) - 1.0).abs() < 1e-14);
            }
        }
    }
}
