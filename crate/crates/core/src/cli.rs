//! Command-line front end: scenario files, canned example verification,
//! checks, simulation, fitting and replication experiments.
//!
//! Exit codes are a stable contract: 0 success or Holds, 1 a check Fails
//! (a verdict, not an error), 2 usage or configuration error, 3 numerical
//! failure.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::inference::{
    bias_experiment, fit, simulate_censored, simulate_missing, BiasSummary, Dataset, FitOptions, FitResult,
    LikelihoodMode, Records,
};
use crate::mechanisms::{CdmKind, CdmSpec, CoarseRegion, MdmKind, MdmSpec, Mechanism, RegionCoord};
use crate::model::{AffineGaussianFamily, Observation, ResponsePattern, ThetaGrid};
use crate::numerics::QuadratureSpec;
use crate::verifiers::{
    check_car, check_cdm_lig, check_lig, check_mar, check_mar_at, check_scalar_mcar_equiv, check_witness, CheckConfig,
    Status, Verdict, Witness,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILS: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Environment variable overriding the Gauss–Hermite order of every scenario.
pub const QUAD_ORDER_ENV: &str = "IGLAB_QUAD_ORDER";

pub const EXAMPLE_IDS: [&str; 5] = ["3.1", "3.2", "3.3", "4.1", "5.4"];

const DISCLAIMER: &str = "Verdicts are numerical corroboration on finite grids of theta, psi and \
probe points at the stated tolerances; they do not prove the properties analytically.";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

// ---------------------------------------------------------------------------
// Scenario files

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyBlock {
    pub k: usize,
    pub d: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(rename = "Sigma")]
    pub sigma: Vec<f64>,
}

impl FamilyBlock {
    pub fn from_family(f: &AffineGaussianFamily) -> Self {
        let row_major = |m: &nalgebra::DMatrix<f64>| m.transpose().as_slice().to_vec();
        Self {
            k: f.k(),
            d: f.d(),
            a: row_major(f.a()),
            b: f.b().as_slice().to_vec(),
            sigma: row_major(f.sigma()),
        }
    }

    pub fn build(&self) -> crate::Result<AffineGaussianFamily> {
        AffineGaussianFamily::from_row_major(self.k, self.d, &self.a, &self.b, &self.sigma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismBlock {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ThetaGridBlock {
    Range { lo: f64, hi: f64, per_axis: usize },
    Points { points: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_grid: Option<ThetaGridBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_values: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Coefficients `c` for the completeness-witness check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<f64>>,
}

/// Data-generating values used by `simulate` and `bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub family: FamilyBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mdm: Option<MechanismBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cdm: Option<MechanismBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quad: Option<QuadratureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationBlock>,
}

/// A scenario with every block validated and built.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub family: AffineGaussianFamily,
    pub mechanism: Mechanism,
    /// The mechanism block's `params`; empty when omitted.
    pub params: Vec<f64>,
    pub config: CheckConfig,
    pub witness: Option<Vec<f64>>,
    pub simulation: Option<SimulationBlock>,
}

impl Scenario {
    fn with_mdm(family: &AffineGaussianFamily, kind: MdmKind, params: Vec<f64>) -> Self {
        Self {
            family: FamilyBlock::from_family(family),
            mdm: Some(MechanismBlock {
                kind: kind.name().into(),
                params,
            }),
            cdm: None,
            check: None,
            quad: None,
            simulation: None,
        }
    }

    fn with_cdm(family: &AffineGaussianFamily, kind: CdmKind) -> Self {
        Self {
            family: FamilyBlock::from_family(family),
            mdm: None,
            cdm: Some(MechanismBlock {
                kind: kind.name().into(),
                params: Vec::new(),
            }),
            check: None,
            quad: None,
            simulation: None,
        }
    }

    pub fn resolve(&self) -> CliResult<Resolved> {
        let family = self.family.build().map_err(|e| usage(format!("family: {e}")))?;
        let (mechanism, block) = match (&self.mdm, &self.cdm) {
            (Some(m), None) => {
                let kind: MdmKind = m.kind.parse().map_err(|e| usage(format!("mdm.kind: {e}")))?;
                let spec = MdmSpec::new(kind, family.k()).map_err(|e| usage(format!("mdm: {e}")))?;
                if !m.params.is_empty() {
                    spec.validate_psi(&m.params)
                        .map_err(|e| usage(format!("mdm.params: {e}")))?;
                }
                (Mechanism::Missing(spec), m)
            }
            (None, Some(c)) => {
                let kind: CdmKind = c.kind.parse().map_err(|e| usage(format!("cdm.kind: {e}")))?;
                if family.k() != 2 {
                    return Err(usage(format!(
                        "cdm: censoring needs a family with k = 2, got k = {}",
                        family.k()
                    )));
                }
                if !c.params.is_empty() && c.params.len() != 1 {
                    return Err(usage(format!("cdm.params: expected 1 value, got {}", c.params.len())));
                }
                (Mechanism::Coarsening(CdmSpec::new(kind)), c)
            }
            _ => return Err(usage("scenario must contain exactly one of `mdm` or `cdm`")),
        };

        let mut config = CheckConfig::for_family(&family);
        let check = self.check.clone().unwrap_or_default();
        if let Some(grid) = &check.theta_grid {
            config.theta_grid = match grid {
                ThetaGridBlock::Range { lo, hi, per_axis } => ThetaGrid::uniform(family.d(), *lo, *hi, *per_axis),
                ThetaGridBlock::Points { points } => {
                    ThetaGrid::new(points.iter().map(|p| DVector::from_column_slice(p)).collect())
                }
            }
            .map_err(|e| usage(format!("check.theta_grid: {e}")))?;
        }
        config.psi_values = match (&check.psi_values, block.params.is_empty()) {
            (Some(v), _) => Some(v.clone()),
            (None, false) => Some(vec![block.params.clone()]),
            (None, true) => None,
        };
        if let Some(v) = check.probe_points {
            config.probe_points = v;
        }
        if let Some(v) = check.rel_tol {
            config.rel_tol = v;
        }
        if let Some(v) = check.abs_tol {
            config.abs_tol = v;
        }
        if let Some(v) = check.seed {
            config.seed = v;
        }
        config.quad = apply_quad_override(self.quad.unwrap_or_default())?;
        config.validate().map_err(|e| usage(format!("check: {e}")))?;
        if config.theta_grid.dim() != family.d() {
            return Err(usage(format!(
                "check.theta_grid: points have dimension {}, family has d = {}",
                config.theta_grid.dim(),
                family.d()
            )));
        }
        if let Some(sim) = &self.simulation {
            if sim.theta.len() != family.d() {
                return Err(usage(format!(
                    "simulation.theta: expected {} values, got {}",
                    family.d(),
                    sim.theta.len()
                )));
            }
        }
        Ok(Resolved {
            family,
            mechanism,
            params: block.params.clone(),
            config,
            witness: check.witness.clone(),
            simulation: self.simulation.clone(),
        })
    }
}

fn apply_quad_override(mut quad: QuadratureSpec) -> CliResult<QuadratureSpec> {
    if let Ok(raw) = std::env::var(QUAD_ORDER_ENV) {
        quad.gh_order = raw
            .trim()
            .parse()
            .map_err(|_| usage(format!("{QUAD_ORDER_ENV}: expected a positive integer, got {raw:?}")))?;
    }
    quad.validate().map_err(|e| usage(format!("quad: {e}")))?;
    Ok(quad)
}

/// SHA-256 of the canonical JSON form (keys sorted, no whitespace).
pub fn digest_value(value: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(value).expect("JSON values always serialize");
    Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub digest: String,
}

pub fn parse_scenario(text: &str) -> CliResult<LoadedScenario> {
    let scenario: Scenario = serde_json::from_str(text).map_err(|e| usage(e.to_string()))?;
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| usage(e.to_string()))?;
    Ok(LoadedScenario {
        scenario,
        digest: digest_value(&value),
    })
}

pub fn load_scenario(path: &Path) -> CliResult<LoadedScenario> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    parse_scenario(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    pub theta_points: usize,
    pub theta_dim: usize,
    pub psi_values: Vec<Vec<f64>>,
    pub probe_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckRecord {
    pub name: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<Status>,
    pub deviation: f64,
    pub tolerance: f64,
    pub witness: Option<Witness>,
    pub probes: usize,
    pub skipped: usize,
    pub grids: Grids,
    pub quad: QuadratureSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<f64>,
}

impl CheckRecord {
    pub fn matches_expectation(&self) -> bool {
        self.expected.is_none_or(|e| e == self.status)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckReport {
    pub tool_version: String,
    pub scenario_digest: String,
    pub checks: Vec<CheckRecord>,
    pub corroboration_disclaimer: bool,
    pub disclaimer: String,
}

impl CheckReport {
    fn new(digest: String, checks: Vec<CheckRecord>) -> Self {
        Self {
            tool_version: crate::VERSION.to_string(),
            scenario_digest: digest,
            checks,
            corroboration_disclaimer: true,
            disclaimer: DISCLAIMER.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckKind {
    Mar,
    Lig,
    Car,
    CdmLig,
    Witness,
    McarEquiv,
}

impl CheckKind {
    pub fn name(self) -> &'static str {
        match self {
            CheckKind::Mar => "mar",
            CheckKind::Lig => "lig",
            CheckKind::Car => "car",
            CheckKind::CdmLig => "cdm-lig",
            CheckKind::Witness => "witness",
            CheckKind::McarEquiv => "mcar-equiv",
        }
    }
}

fn need_mdm(r: &Resolved, kind: CheckKind) -> CliResult<MdmSpec> {
    match &r.mechanism {
        Mechanism::Missing(m) => Ok(m.clone()),
        Mechanism::Coarsening(_) => Err(usage(format!("check {} needs an `mdm` block", kind.name()))),
    }
}

fn need_cdm(r: &Resolved, kind: CheckKind) -> CliResult<CdmSpec> {
    match &r.mechanism {
        Mechanism::Coarsening(c) => Ok(*c),
        Mechanism::Missing(_) => Err(usage(format!("check {} needs a `cdm` block", kind.name()))),
    }
}

/// Run one check; `at` restricts a MAR check to a single pattern.
fn run_check(
    kind: CheckKind,
    r: &Resolved,
    at: Option<&ResponsePattern>,
    name: String,
    expected: Option<Status>,
    timings: bool,
) -> CliResult<CheckRecord> {
    let start = Instant::now();
    let cfg = &r.config;
    let verdict: Verdict = match kind {
        CheckKind::Mar => {
            let mdm = need_mdm(r, kind)?;
            match at {
                Some(p) => check_mar_at(&mdm, &r.family, p, cfg)?,
                None => check_mar(&mdm, &r.family, cfg)?,
            }
        }
        CheckKind::Lig => check_lig(&r.family, &need_mdm(r, kind)?, cfg)?,
        CheckKind::Car => check_car(&need_cdm(r, kind)?, cfg)?,
        CheckKind::CdmLig => check_cdm_lig(&r.family, &need_cdm(r, kind)?, cfg)?,
        CheckKind::Witness => {
            let c = match &r.witness {
                Some(c) => c.clone(),
                None => r
                    .family
                    .find_linear_witness()
                    .map(|c| c.as_slice().to_vec())
                    .ok_or_else(|| usage("family is complete: no linear witness exists; set check.witness"))?,
            };
            check_witness(&r.family, &c, cfg)?
        }
        CheckKind::McarEquiv => check_scalar_mcar_equiv(&r.family, &need_mdm(r, kind)?, cfg)?,
    };
    let runtime_ms = timings.then(|| start.elapsed().as_secs_f64() * 1e3);
    let psi_values = match kind {
        CheckKind::Witness => Vec::new(),
        _ => cfg
            .psi_values
            .clone()
            .unwrap_or_else(|| r.mechanism.default_psi_probes()),
    };
    Ok(CheckRecord {
        name,
        status: verdict.status,
        expected,
        deviation: verdict.deviation,
        tolerance: verdict.tolerance,
        witness: verdict.witness,
        probes: verdict.probes,
        skipped: verdict.skipped,
        grids: Grids {
            theta_points: cfg.theta_grid.len(),
            theta_dim: cfg.theta_grid.dim(),
            psi_values,
            probe_points: cfg.probe_points,
        },
        quad: cfg.quad,
        runtime_ms,
    })
}

// ---------------------------------------------------------------------------
// Canned examples

struct CannedCheck {
    name: String,
    kind: CheckKind,
    at: Option<ResponsePattern>,
    scenario: Scenario,
    expected: Status,
}

fn canned(kind: CheckKind, scenario: Scenario, expected: Status) -> CannedCheck {
    let label = match (kind, scenario.check.as_ref().and_then(|c| c.witness.as_ref())) {
        (CheckKind::Witness, Some(c)) => c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
        _ => scenario
            .mdm
            .as_ref()
            .or(scenario.cdm.as_ref())
            .map(|m| m.kind.clone())
            .unwrap_or_default(),
    };
    CannedCheck {
        name: format!("{}[{}]", kind.name(), label),
        kind,
        at: None,
        scenario,
        expected,
    }
}

fn with_witness(mut s: Scenario, c: Vec<f64>) -> Scenario {
    s.check = Some(CheckBlock {
        witness: Some(c),
        ..CheckBlock::default()
    });
    s
}

fn canned_example(id: &str) -> Option<Vec<CannedCheck>> {
    use Status::{Fails, Holds};
    let ex31 = AffineGaussianFamily::example_3_1();
    let checks = match id {
        "3.1" => {
            let mut v = vec![canned(
                CheckKind::Mar,
                Scenario::with_mdm(&ex31, MdmKind::MnarLogistic, vec![]),
                Fails,
            )];
            for kind in [
                MdmKind::MarLogistic,
                MdmKind::MnarLogistic,
                MdmKind::Ex32,
                MdmKind::Table,
            ] {
                v.push(canned(CheckKind::Lig, Scenario::with_mdm(&ex31, kind, vec![]), Holds));
            }
            let w = with_witness(
                Scenario::with_mdm(&ex31, MdmKind::MnarLogistic, vec![]),
                vec![1.0, -2.0],
            );
            v.push(canned(CheckKind::Witness, w, Holds));
            v
        }
        "3.2" => {
            let s = Scenario::with_mdm(&ex31, MdmKind::Ex32, vec![]);
            let mut at = canned(CheckKind::Mar, s.clone(), Fails);
            at.name = "mar[ex32]@(1,0)".into();
            at.at = Some(ResponsePattern::new(vec![true, false]));
            vec![
                canned(CheckKind::Mar, s.clone(), Fails),
                at,
                canned(CheckKind::Lig, s, Holds),
            ]
        }
        "3.3" => {
            let iid = AffineGaussianFamily::iid_normal(3).expect("valid family");
            let s = Scenario::with_mdm(&iid, MdmKind::Ex33, vec![]);
            vec![
                canned(CheckKind::Mar, s.clone(), Fails),
                canned(CheckKind::Lig, s.clone(), Holds),
                canned(CheckKind::Witness, with_witness(s, vec![1.0, -1.0, 0.0]), Holds),
            ]
        }
        "4.1" => {
            let s = Scenario::with_cdm(&ex31, CdmKind::Ex41);
            vec![
                canned(CheckKind::Car, s.clone(), Fails),
                canned(CheckKind::CdmLig, s, Holds),
            ]
        }
        "5.4" => {
            let scalar = AffineGaussianFamily::scalar_normal();
            vec![
                canned(
                    CheckKind::McarEquiv,
                    Scenario::with_mdm(&scalar, MdmKind::MarLogistic, vec![]),
                    Holds,
                ),
                canned(
                    CheckKind::McarEquiv,
                    Scenario::with_mdm(&scalar, MdmKind::MnarLogistic, vec![]),
                    Holds,
                ),
            ]
        }
        _ => return None,
    };
    Some(checks)
}

/// Run a canned example. Returns the report and whether every verdict
/// matched its expectation.
pub fn verify_example(id: &str, timings: bool) -> CliResult<(CheckReport, bool)> {
    let checks = canned_example(id).ok_or_else(|| {
        usage(format!(
            "unknown example id {id:?}; expected one of {}",
            EXAMPLE_IDS.join(", ")
        ))
    })?;
    let scenarios: Vec<&Scenario> = checks.iter().map(|c| &c.scenario).collect();
    let digest = digest_value(&serde_json::json!({
        "example": id,
        "scenarios": serde_json::to_value(&scenarios).expect("scenarios serialize"),
    }));
    let mut records = Vec::with_capacity(checks.len());
    for c in &checks {
        let resolved = c.scenario.resolve()?;
        records.push(run_check(
            c.kind,
            &resolved,
            c.at.as_ref(),
            c.name.clone(),
            Some(c.expected),
            timings,
        )?);
    }
    let all_match = records.iter().all(CheckRecord::matches_expectation);
    Ok((CheckReport::new(digest, records), all_match))
}

// ---------------------------------------------------------------------------
// Output

fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let io = |e: std::io::Error| usage(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.flush().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Format with 17 significant digits, enough to round-trip any `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

// ---------------------------------------------------------------------------
// Dataset CSV

pub fn dataset_to_csv(data: &Dataset) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| usage(format!("csv: {e}"));
    match data.records() {
        Records::Missing(obs) => {
            let header: Vec<String> = (1..=data.k()).map(|j| format!("y{j}")).collect();
            w.write_record(&header).map_err(err)?;
            for o in obs {
                let mut vals = o.observed().iter();
                let row: Vec<String> = o
                    .pattern()
                    .bits()
                    .iter()
                    .map(|&seen| {
                        if seen {
                            format_f64(*vals.next().expect("one value per observed coordinate"))
                        } else {
                            String::new()
                        }
                    })
                    .collect();
                w.write_record(&row).map_err(err)?;
            }
        }
        Records::Coarse(zs) => {
            w.write_record(["y1", "status", "value"]).map_err(err)?;
            for z in zs {
                let row = match z.coords() {
                    [RegionCoord::Point(y1), RegionCoord::Point(y2)] => {
                        [format_f64(*y1), "obs".into(), format_f64(*y2)]
                    }
                    [RegionCoord::Point(y1), RegionCoord::HalfLineAbove(g)] => {
                        [format_f64(*y1), "cens".into(), format_f64(*g)]
                    }
                    _ => return Err(usage(format!("region {z} is not a censored observation"))),
                };
                w.write_record(&row).map_err(err)?;
            }
        }
    }
    w.into_inner().map_err(|e| usage(format!("csv: {e}")))
}

fn parse_number(field: &str, row: usize, col: &str) -> CliResult<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| usage(format!("row {row}, column {col}: not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(usage(format!("row {row}, column {col}: value must be finite")));
    }
    Ok(v)
}

/// Parse a dataset CSV for a family of dimension `k`. The header decides
/// the mode: `y1,…,yk` for missing data, `y1,status,value` for censoring.
pub fn dataset_from_csv(text: &str, k: usize) -> CliResult<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| usage(format!("csv header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let rows = rdr
        .records()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| usage(format!("csv row {}: {e}", i + 1))))
        .collect::<CliResult<Vec<_>>>()?;
    if header == ["y1", "status", "value"] {
        if k != 2 {
            return Err(usage(format!(
                "censored data has 2 response coordinates, scenario family has k = {k}"
            )));
        }
        let mut regions = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            let y1 = parse_number(&row[0], i + 1, "y1")?;
            let value = parse_number(&row[2], i + 1, "value")?;
            let second = match row[1].trim() {
                "obs" => RegionCoord::Point(value),
                "cens" => RegionCoord::HalfLineAbove(value),
                other => {
                    return Err(usage(format!(
                        "row {}, column status: expected obs or cens, got {other:?}",
                        i + 1
                    )))
                }
            };
            regions.push(CoarseRegion::new(vec![RegionCoord::Point(y1), second])?);
        }
        return Ok(Dataset::coarse(regions)?);
    }
    let expected: Vec<String> = (1..=header.len()).map(|j| format!("y{j}")).collect();
    if header != expected {
        return Err(usage(format!(
            "csv header must be y1,…,yk or y1,status,value; got {}",
            header.join(",")
        )));
    }
    if header.len() != k {
        return Err(usage(format!(
            "data has {} columns, scenario family has k = {k}",
            header.len()
        )));
    }
    let mut obs = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let mut bits = Vec::with_capacity(k);
        let mut values = Vec::new();
        for (j, field) in row.iter().enumerate() {
            if field.trim().is_empty() {
                bits.push(false);
            } else {
                bits.push(true);
                values.push(parse_number(field, i + 1, &header[j])?);
            }
        }
        obs.push(Observation::new(ResponsePattern::new(bits), values)?);
    }
    Ok(Dataset::missing(k, obs)?)
}

// ---------------------------------------------------------------------------
// Fit and bias reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub tool_version: String,
    pub scenario_digest: String,
    pub records: usize,
    pub psi: Option<Vec<f64>>,
    #[serde(flatten)]
    pub fit: FitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub tool_version: String,
    pub scenario_digest: String,
    #[serde(flatten)]
    pub summary: BiasSummary,
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Debug, Parser)]
#[command(
    name = "iglab",
    version,
    about = "Likelihood ignorability lab for affine Gaussian models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Ignorable,
    Full,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a canned example and compare every verdict with its expectation.
    VerifyExample {
        /// One of 3.1, 3.2, 3.3, 4.1, 5.4.
        id: String,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record per-check wall-clock time (makes reports non-reproducible).
        #[arg(long)]
        timings: bool,
    },
    /// Run one check on a scenario file.
    Check {
        kind: CheckKind,
        /// Scenario JSON file.
        #[arg(long)]
        scenario: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record wall-clock time in the report.
        #[arg(long)]
        timings: bool,
    },
    /// Simulate a dataset from the scenario's family and mechanism.
    Simulate {
        /// Scenario JSON file.
        #[arg(long)]
        scenario: PathBuf,
        /// Number of records.
        #[arg(long)]
        n: usize,
        /// Master RNG seed.
        #[arg(long)]
        seed: u64,
        /// Output file, written atomically.
        #[arg(long)]
        out: PathBuf,
    },
    /// Maximum-likelihood fit of θ on a dataset CSV.
    Fit {
        /// Scenario JSON file.
        #[arg(long)]
        scenario: PathBuf,
        /// Dataset CSV as written by `simulate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Comma-separated mechanism parameters; defaults to the scenario's.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        psi: Option<Vec<f64>>,
        /// Output file, written atomically.
        #[arg(long)]
        out: PathBuf,
    },
    /// Replicated simulate-and-fit experiment comparing both estimators.
    Bias {
        /// Scenario JSON file.
        #[arg(long)]
        scenario: PathBuf,
        /// Number of replications (at least 50).
        #[arg(long)]
        reps: usize,
        /// Master RNG seed.
        #[arg(long)]
        seed: u64,
        /// Output file, written atomically.
        #[arg(long)]
        out: PathBuf,
    },
}

fn mechanism_psi(r: &Resolved, override_psi: Option<Vec<f64>>) -> CliResult<Vec<f64>> {
    let psi = override_psi.unwrap_or_else(|| r.params.clone());
    if psi.is_empty() {
        return Err(usage(
            "mechanism parameters are required: set `params` in the scenario or pass --psi",
        ));
    }
    match &r.mechanism {
        Mechanism::Missing(m) => m.validate_psi(&psi).map_err(|e| usage(format!("psi: {e}")))?,
        Mechanism::Coarsening(_) if psi.len() != 1 => {
            return Err(usage(format!("psi: expected 1 value, got {}", psi.len())))
        }
        Mechanism::Coarsening(_) => {}
    }
    Ok(psi)
}

fn simulation_theta(r: &Resolved) -> CliResult<Vec<f64>> {
    r.simulation
        .as_ref()
        .map(|s| s.theta.clone())
        .ok_or_else(|| usage("scenario needs a `simulation` block with `theta`"))
}

fn simulate_dataset(r: &Resolved, theta: &[f64], psi: &[f64], n: usize, seed: u64) -> CliResult<Dataset> {
    if n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    Ok(match &r.mechanism {
        Mechanism::Missing(m) => simulate_missing(&r.family, m, theta, psi, n, seed)?,
        Mechanism::Coarsening(c) => simulate_censored(&r.family, c, theta, psi[0], n, seed)?,
    })
}

fn dispatch(command: Command) -> CliResult<i32> {
    match command {
        Command::VerifyExample { id, out, timings } => {
            let (report, ok) = verify_example(&id, timings)?;
            emit(out.as_deref(), &to_json(&report))?;
            for c in report.checks.iter().filter(|c| !c.matches_expectation()) {
                eprintln!(
                    "iglab: {} returned {:?}, expected {:?}",
                    c.name,
                    c.status,
                    c.expected.expect("canned checks carry expectations")
                );
            }
            Ok(if ok { EXIT_OK } else { EXIT_FAILS })
        }
        Command::Check {
            kind,
            scenario,
            out,
            timings,
        } => {
            let loaded = load_scenario(&scenario)?;
            let r = loaded.scenario.resolve()?;
            let record = run_check(kind, &r, None, kind.name().to_string(), None, timings)?;
            let status = record.status;
            emit(out.as_deref(), &to_json(&CheckReport::new(loaded.digest, vec![record])))?;
            Ok(match status {
                Status::Holds => EXIT_OK,
                Status::Fails => EXIT_FAILS,
            })
        }
        Command::Simulate { scenario, n, seed, out } => {
            let r = load_scenario(&scenario)?.scenario.resolve()?;
            let theta = simulation_theta(&r)?;
            let psi = mechanism_psi(&r, None)?;
            let data = simulate_dataset(&r, &theta, &psi, n, seed)?;
            write_atomic(&out, &dataset_to_csv(&data)?)?;
            Ok(EXIT_OK)
        }
        Command::Fit {
            scenario,
            data,
            mode,
            psi,
            out,
        } => {
            let loaded = load_scenario(&scenario)?;
            let r = loaded.scenario.resolve()?;
            let text = fs::read_to_string(&data).map_err(|e| usage(format!("{}: {e}", data.display())))?;
            let dataset =
                dataset_from_csv(&text, r.family.k()).map_err(|e| usage(format!("{}: {e}", data.display())))?;
            if dataset.is_empty() {
                return Err(usage(format!("{}: dataset has no records", data.display())));
            }
            let mode = match mode {
                ModeArg::Ignorable => LikelihoodMode::Ignorable,
                ModeArg::Full => LikelihoodMode::Full,
            };
            let psi = match mode {
                LikelihoodMode::Full => Some(mechanism_psi(&r, psi)?),
                LikelihoodMode::Ignorable => None,
            };
            let options = FitOptions {
                quad: r.config.quad,
                ..FitOptions::default()
            };
            let result = fit(&r.family, &dataset, mode, Some(&r.mechanism), psi.as_deref(), &options)?;
            let report = FitReport {
                tool_version: crate::VERSION.to_string(),
                scenario_digest: loaded.digest,
                records: dataset.len(),
                psi,
                fit: result,
            };
            write_atomic(&out, to_json(&report).as_bytes())?;
            Ok(EXIT_OK)
        }
        Command::Bias {
            scenario,
            reps,
            seed,
            out,
        } => {
            let loaded = load_scenario(&scenario)?;
            let r = loaded.scenario.resolve()?;
            let theta = simulation_theta(&r)?;
            let n = r
                .simulation
                .as_ref()
                .and_then(|s| s.n)
                .ok_or_else(|| usage("scenario needs `simulation.n` for bias experiments"))?;
            let psi = mechanism_psi(&r, None)?;
            let options = FitOptions {
                quad: r.config.quad,
                ..FitOptions::default()
            };
            let summary = bias_experiment(&r.family, &r.mechanism, &theta, &psi, n, reps, seed, &options)?;
            let report = BiasReport {
                tool_version: crate::VERSION.to_string(),
                scenario_digest: loaded.digest,
                summary,
            };
            write_atomic(&out, to_json(&report).as_bytes())?;
            Ok(EXIT_OK)
        }
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("iglab: {e}");
            e.exit_code()
        }
    }
}
