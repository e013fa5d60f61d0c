//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use iglab::inference::Dataset;
use iglab::inference::{bias_experiment, fit, simulate_missing, FitOptions, Likelihood, LikelihoodMode};
use iglab::mechanisms::{CdmKind, CdmSpec, MdmKind, MdmSpec, Mechanism};
use iglab::model::{AffineGaussianFamily, Observation, ResponsePattern};
use iglab::numerics::{
    draw_gaussian, gaussian_expectation, mc_expectation, normal_quantile, normal_sf, seeded_rng, GaussLegendre,
    QuadratureSpec,
};
use iglab::verifiers::{
    cdm_lig_ratio, check_car, check_cdm_lig, check_lig, check_mar, check_mar_at, check_scalar_mcar_equiv,
    check_witness, lig_integral, CensoredProbe, CheckConfig, Status, Witness,
};
use nalgebra::DVector;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn pat(bits: &[u8]) -> ResponsePattern {
    ResponsePattern::from_bits(bits).unwrap()
}

fn ex31() -> AffineGaussianFamily {
    AffineGaussianFamily::example_3_1()
}

fn control() -> AffineGaussianFamily {
    AffineGaussianFamily::complete_control()
}

fn mdm(kind: MdmKind, k: usize) -> MdmSpec {
    MdmSpec::new(kind, k).unwrap()
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn criterion_1() -> Outcome {
    let fam = ex31();
    let cfg = CheckConfig::for_family(&fam);
    let rule = cfg.quad.rule().map_err(err)?;
    let mut worst: f64 = 0.0;
    for theta in cfg.theta_grid.points() {
        let mean = fam.mean(theta).map_err(err)?;
        let e = gaussian_expectation(|y| y[0] - 2.0 * y[1], &mean, fam.sigma(), &rule).map_err(err)?;
        worst = worst.max(e.abs());
    }
    ensure(cfg.theta_grid.len() == 21, "grid must have 21 points")?;
    ensure(worst < 1e-10, format!("max |E[Y1 - 2 Y2]| = {worst:e}"))?;
    let v = check_witness(&fam, &[1.0, -2.0], &cfg).map_err(err)?;
    ensure(v.status == Status::Holds, format!("witness check {:?}", v.status))?;
    Ok(format!("max |E[Y1 - 2 Y2]| over 21 theta = {worst:.2e}"))
}

fn criterion_2() -> Outcome {
    let fam = ex31();
    let cfg = CheckConfig::for_family(&fam);
    let mut parts = Vec::new();
    for kind in [
        MdmKind::MarLogistic,
        MdmKind::MnarLogistic,
        MdmKind::Ex32,
        MdmKind::Table,
    ] {
        let v = check_lig(&fam, &mdm(kind, 2), &cfg).map_err(err)?;
        ensure(
            v.status == Status::Holds && v.deviation < 1e-6,
            format!("{kind}: {:?} with spread {:e}", v.status, v.deviation),
        )?;
        parts.push(format!("{kind} {:.1e}", v.deviation));
    }
    Ok(format!("LIG holds for all built-ins: {}", parts.join(", ")))
}

fn criterion_3() -> Outcome {
    let fam = ex31();
    let cfg = CheckConfig::for_family(&fam);
    let m = mdm(MdmKind::Ex32, 2);
    let r10 = pat(&[1, 0]);
    let v = check_mar_at(&m, &fam, &r10, &cfg).map_err(err)?;
    ensure(v.status == Status::Fails, "MAR should fail at (1,0)")?;
    let Some(Witness::MissingValues {
        pattern,
        psi,
        observed,
        missing_a,
        missing_b,
        value_a,
        value_b,
    }) = v.witness.clone()
    else {
        return Err("missing-values witness expected".into());
    };
    ensure(pattern == r10, format!("witness pattern {pattern}"))?;
    let ya = r10.merge(&observed, &missing_a).map_err(err)?;
    let yb = r10.merge(&observed, &missing_b).map_err(err)?;
    let pa = m.prob(&r10, ya.as_slice(), &psi).map_err(err)?;
    let pb = m.prob(&r10, yb.as_slice(), &psi).map_err(err)?;
    ensure(pa == value_a && pb == value_b, "witness values do not replay")?;
    ensure(
        v.witness.as_ref().unwrap().deviation() == v.deviation,
        "witness deviation mismatch",
    )?;
    let again = check_mar_at(&m, &fam, &r10, &cfg).map_err(err)?;
    ensure(again == v, "MAR verdict not reproducible")?;
    let overall = check_mar(&m, &fam, &cfg).map_err(err)?;
    ensure(overall.status == Status::Fails, "overall MAR should fail")?;
    let lig = check_lig(&fam, &m, &cfg).map_err(err)?;
    ensure(
        lig.status == Status::Holds,
        format!("LIG {:?} at {:e}", lig.status, lig.deviation),
    )?;
    Ok(format!(
        "MAR fails at (1,0) (spread {:.3}, witness replays); LIG holds (spread {:.1e})",
        v.deviation, lig.deviation
    ))
}

fn criterion_4() -> Outcome {
    let fam = AffineGaussianFamily::iid_normal(3).map_err(err)?;
    let cfg = CheckConfig::for_family(&fam);
    let m = mdm(MdmKind::Ex33, 3);
    let mar = check_mar(&m, &fam, &cfg).map_err(err)?;
    ensure(mar.status == Status::Fails, "MAR should fail")?;
    let lig = check_lig(&fam, &m, &cfg).map_err(err)?;
    ensure(
        lig.status == Status::Holds,
        format!("LIG {:?} at {:e}", lig.status, lig.deviation),
    )?;
    // dyadic values keep every sum and difference exact
    let mut rng = seeded_rng(33);
    let dyadic = |rng: &mut iglab::numerics::SimRng| rng.gen_range(-4096i32..4096) as f64 / 1024.0;
    let r = pat(&[1, 0, 0]);
    for _ in 0..1000 {
        let y = [dyadic(&mut rng), dyadic(&mut rng), dyadic(&mut rng)];
        let c = dyadic(&mut rng);
        let psi = [dyadic(&mut rng)];
        let base = m.prob(&r, &y, &psi).map_err(err)?;
        let shifted = m.prob(&r, &[y[0], y[1] + c, y[2] + c], &psi).map_err(err)?;
        ensure(base == shifted, format!("not invariant at y={y:?}, c={c}"))?;
    }
    Ok(format!(
        "MAR fails (spread {:.3}); LIG holds (spread {:.1e}); shift invariance exact on 1000 probes",
        mar.deviation, lig.deviation
    ))
}

fn criterion_5() -> Outcome {
    let fam = control();
    let mut cfg = CheckConfig::for_family(&fam);
    cfg.psi_values = Some(vec![vec![0.0, 2.0]]);
    let mnar = check_lig(&fam, &mdm(MdmKind::MnarLogistic, 2), &cfg).map_err(err)?;
    ensure(
        mnar.status == Status::Fails && mnar.deviation > 1e-3,
        format!("mnar: {:?} at {:e}", mnar.status, mnar.deviation),
    )?;
    ensure(mnar.witness.is_some(), "witness expected")?;
    let cfg = CheckConfig::for_family(&fam);
    let mut worst: f64 = 0.0;
    for kind in MdmKind::ALL {
        let Ok(spec) = MdmSpec::new(kind, 2) else { continue };
        if !spec.is_mar_by_construction() {
            continue;
        }
        let v = check_lig(&fam, &spec, &cfg).map_err(err)?;
        ensure(
            v.status == Status::Holds && v.deviation < 1e-6,
            format!("{kind}: {:?} at {:e}", v.status, v.deviation),
        )?;
        worst = worst.max(v.deviation);
    }
    Ok(format!(
        "control + mnar fails with spread {:.3e}; MAR built-ins hold with max spread {worst:.1e}",
        mnar.deviation
    ))
}

fn criterion_6() -> Outcome {
    let fam = ex31();
    let cfg = CheckConfig::for_family(&fam);
    let cdm = CdmSpec::new(CdmKind::Ex41);
    let car = check_car(&cdm, &cfg).map_err(err)?;
    ensure(car.status == Status::Fails, "CAR should fail")?;
    let lig = check_cdm_lig(&fam, &cdm, &cfg).map_err(err)?;
    ensure(
        lig.status == Status::Holds && lig.deviation < 1e-6,
        format!("coarse LIG {:?} at {:e}", lig.status, lig.deviation),
    )?;
    let ctrl = control();
    let cc = check_cdm_lig(&ctrl, &cdm, &CheckConfig::for_family(&ctrl)).map_err(err)?;
    ensure(cc.status == Status::Fails, "control coarse LIG should fail")?;
    Ok(format!(
        "CAR fails; coarse LIG holds (ratio spread {:.1e}); control fails (spread {:.3e})",
        lig.deviation, cc.deviation
    ))
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let fam = ex31();
    let m = mdm(MdmKind::Ex32, 2);
    let data = simulate_missing(&fam, &m, &[1.0], &[0.5], 500, 7).map_err(err)?;
    let mech = Mechanism::Missing(m);
    let opts = FitOptions::default();
    let ign = fit(&fam, &data, LikelihoodMode::Ignorable, None, None, &opts).map_err(err)?;
    let full = fit(&fam, &data, LikelihoodMode::Full, Some(&mech), Some(&[0.5]), &opts).map_err(err)?;
    let diff = (ign.theta_hat[0] - full.theta_hat[0]).abs();
    let elapsed = start.elapsed();
    ensure(ign.converged && full.converged, "fits did not converge")?;
    ensure(diff < 1e-4, format!("|difference| = {diff:e}"))?;
    ensure(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    Ok(format!(
        "theta_hat = {:.6}, |ignorable - full| = {diff:.1e}, {:.2}s",
        ign.theta_hat[0],
        elapsed.as_secs_f64()
    ))
}

const BIAS_N: usize = 400;

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let fam = control();
    let mech = Mechanism::Missing(mdm(MdmKind::MnarLogistic, 2));
    let s = bias_experiment(
        &fam,
        &mech,
        &[0.0, 0.0],
        &[0.0, 2.0],
        BIAS_N,
        200,
        8,
        &FitOptions::default(),
    )
    .map_err(err)?;
    let elapsed = start.elapsed();
    ensure(
        s.ignorable.any_significant(),
        format!("ignorable bias {:?} mcse {:?}", s.ignorable.mean_bias, s.ignorable.mcse),
    )?;
    ensure(
        !s.full.any_significant(),
        format!("full bias {:?} mcse {:?}", s.full.mean_bias, s.full.mcse),
    )?;
    ensure(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"))?;
    let j = 1;
    Ok(format!(
        "theta2 bias: ignorable {:.4} (mcse {:.4}), full {:.4} (mcse {:.4}); {:.1}s",
        s.ignorable.mean_bias[j],
        s.ignorable.mcse[j],
        s.full.mean_bias[j],
        s.full.mcse[j],
        elapsed.as_secs_f64()
    ))
}

fn criterion_9() -> Outcome {
    let fam = AffineGaussianFamily::scalar_normal();
    let cfg = CheckConfig::for_family(&fam);
    let mut parts = Vec::new();
    for kind in [MdmKind::MarLogistic, MdmKind::MnarLogistic] {
        let v = check_scalar_mcar_equiv(&fam, &mdm(kind, 1), &cfg).map_err(err)?;
        ensure(v.status == Status::Holds, format!("{kind}: equivalence fails"))?;
        parts.push(kind.to_string());
    }
    Ok(format!("MAR and MCAR agree for {}", parts.join(" and ")))
}

const MC_N: usize = 200_000;
const PROBES: usize = 10;

struct OracleTally {
    compared: usize,
    worst_z: f64,
}

impl OracleTally {
    fn compare(&mut self, what: &str, quad: f64, mc: iglab::numerics::McEstimate) -> Result<(), String> {
        let gap = (quad - mc.estimate).abs();
        let z = if mc.std_error > 0.0 {
            gap / mc.std_error
        } else if gap < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        self.compared += 1;
        self.worst_z = self.worst_z.max(z);
        ensure(
            z <= 4.0,
            format!("{what}: quadrature {quad} vs MC {} (se {})", mc.estimate, mc.std_error),
        )
    }
}

fn criterion_10() -> Outcome {
    let quad = QuadratureSpec::default();
    let rule = quad.rule().map_err(err)?;
    let mut rng = seeded_rng(10);
    let mut tally = OracleTally {
        compared: 0,
        worst_z: 0.0,
    };
    let mut seed = 1000u64;
    let mut next_seed = || {
        seed += 1;
        seed
    };

    // completeness witness expectation
    let fam = ex31();
    for _ in 0..PROBES {
        let theta = DVector::from_vec(vec![rng.gen_range(-2.0..2.0)]);
        let mean = fam.mean(&theta).map_err(err)?;
        let q = gaussian_expectation(|y| y[0] - 2.0 * y[1], &mean, fam.sigma(), &rule).map_err(err)?;
        let l = fam.sigma_chol();
        let mc = mc_expectation(
            |y: &DVector<f64>| y[0] - 2.0 * y[1],
            |r| draw_gaussian(r, &mean, &l),
            MC_N,
            next_seed(),
        )
        .map_err(err)?;
        tally.compare("witness", q, mc)?;
    }

    // ignorability integrals, which also form the mechanism factor of the
    // full likelihood
    let cases: Vec<(AffineGaussianFamily, MdmSpec, Vec<ResponsePattern>)> = vec![
        (ex31(), mdm(MdmKind::MnarLogistic, 2), vec![pat(&[1, 0])]),
        (ex31(), mdm(MdmKind::MarLogistic, 2), vec![pat(&[1, 0])]),
        (ex31(), mdm(MdmKind::Ex32, 2), vec![pat(&[1, 0]), pat(&[0, 1])]),
        (control(), mdm(MdmKind::MnarLogistic, 2), vec![pat(&[1, 0])]),
        (
            AffineGaussianFamily::iid_normal(3).map_err(err)?,
            mdm(MdmKind::Ex33, 3),
            vec![pat(&[1, 0, 0])],
        ),
    ];
    for (fam, m, patterns) in &cases {
        for r in patterns {
            for _ in 0..PROBES {
                let theta = DVector::from_iterator(fam.d(), (0..fam.d()).map(|_| rng.gen_range(-2.0..2.0)));
                let psi: Vec<f64> = match m.kind() {
                    MdmKind::MarLogistic | MdmKind::MnarLogistic => {
                        vec![rng.gen_range(-1.0..1.0), rng.gen_range(-2.5..2.5)]
                    }
                    _ => vec![rng.gen_range(-2.5..2.5)],
                };
                let y = fam.sample(&theta, 1, next_seed()).map_err(err)?.remove(0);
                let (obs, _) = iglab::model::split(y.as_slice(), r).map_err(err)?;
                let q = lig_integral(fam, m, r, &obs, &theta, &psi, &rule).map_err(err)?;
                let cond = fam.conditional(r, &obs, &theta).map_err(err)?;
                let l = cond.cov.clone().cholesky().ok_or("conditional covariance")?.l();
                let mc = mc_expectation(
                    |mis: &DVector<f64>| {
                        m.prob(r, r.merge(&obs, mis.as_slice()).unwrap().as_slice(), &psi)
                            .unwrap()
                    },
                    |rr| draw_gaussian(rr, &cond.mean, &l),
                    MC_N,
                    next_seed(),
                )
                .map_err(err)?;
                tally.compare(&format!("{} {r}", m.kind()), q, mc)?;

                // the same factor as it enters the full likelihood
                let rec = Observation::new(r.clone(), obs.clone()).map_err(err)?;
                let data = Dataset::missing(fam.k(), vec![rec]).map_err(err)?;
                let lik = Likelihood::new(fam, &data, &quad).map_err(err)?;
                let mech = Mechanism::Missing(m.clone());
                let factor = (lik.full(&mech, theta.as_slice(), &psi).map_err(err)?
                    - lik.ignorable(theta.as_slice()).map_err(err)?)
                .exp();
                tally.compare(&format!("likelihood factor {} {r}", m.kind()), factor, mc)?;
            }
        }
    }

    // coarse-data ratio E[kappa | Y2 > g, y1]
    let gl = GaussLegendre::new(quad.gh_order).map_err(err)?;
    for fam in [ex31(), control()] {
        for kind in CdmKind::ALL {
            let cdm = CdmSpec::new(kind);
            for _ in 0..PROBES {
                let theta = DVector::from_iterator(fam.d(), (0..fam.d()).map(|_| rng.gen_range(-2.0..2.0)));
                let psi = rng.gen_range(-1.5..1.5);
                let probe = CensoredProbe {
                    y1: rng.gen_range(-2.0..2.0),
                    g: rng.gen_range(-1.5..1.5),
                };
                let q = cdm_lig_ratio(&fam, &cdm, &probe, &theta, psi, &gl)
                    .map_err(err)?
                    .ok_or("ratio underflowed")?;
                let cond = fam.conditional(&pat(&[1, 0]), &[probe.y1], &theta).map_err(err)?;
                let (mu, tau) = (cond.mean[0], cond.cov[(0, 0)].sqrt());
                let tail = normal_sf((probe.g - mu) / tau);
                let mc = mc_expectation(
                    |y2: &f64| cdm.density(probe.g, &[probe.y1, *y2], psi).unwrap(),
                    |rr| {
                        let u: f64 = rr.gen_range(f64::EPSILON..1.0);
                        mu - tau * normal_quantile(tail * u)
                    },
                    MC_N,
                    next_seed(),
                )
                .map_err(err)?;
                tally.compare(&format!("coarse ratio {kind}"), q, mc)?;
            }
        }
    }
    Ok(format!(
        "{} quadrature values within 4 SE of Monte Carlo (n = {MC_N}); max |z| = {:.2}",
        tally.compared, tally.worst_z
    ))
}

fn criterion_11() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_iglab");
    let dir = tempfile::tempdir().map_err(err)?;
    for id in ["3.1", "3.2", "3.3", "4.1", "5.4"] {
        let mut reports = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("{id}-{run}.json"));
            let status = Command::new(bin)
                .args(["verify-example", id, "--out"])
                .arg(&out)
                .env_remove("IGLAB_QUAD_ORDER")
                .status()
                .map_err(err)?;
            ensure(status.code() == Some(0), format!("verify-example {id} exited {status}"))?;
            reports.push(std::fs::read(&out).map_err(err)?);
        }
        ensure(reports[0] == reports[1], format!("verify-example {id} reports differ"))?;
    }
    Ok("all five examples exit 0 twice with byte-identical reports".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("witness expectation vanishes", criterion_1),
        ("every mechanism ignorable on the incomplete family", criterion_2),
        ("non-MAR yet ignorable mechanism", criterion_3),
        ("ancillary-difference mechanism", criterion_4),
        ("complete family detects non-ignorability", criterion_5),
        ("censoring: not CAR yet ignorable", criterion_6),
        ("MLE agreement when ignorable", criterion_7),
        ("MLE divergence when not ignorable", criterion_8),
        ("scalar MAR/MCAR equivalence", criterion_9),
        ("quadrature agrees with Monte Carlo", criterion_10),
        ("deterministic reports", criterion_11),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (title, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f == &n.to_string()) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {title}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {title}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
