use iglab::cli::{dataset_from_csv, dataset_to_csv, digest_value, format_f64};
use iglab::inference::{full_loglik, ignorable_loglik, simulate_censored, simulate_missing};
use iglab::mechanisms::Mechanism;
use iglab::model::{split, AffineGaussianFamily, ResponsePattern};
use iglab::nalgebra::DVector;
use iglab::{CdmKind, CdmSpec, MdmKind, MdmSpec, QuadratureSpec};
use proptest::prelude::*;

fn coord() -> impl Strategy<Value = f64> {
    -4.0..4.0f64
}

/// Random SPD 3×3 covariance from a lower-triangular factor with positive diagonal.
fn family3() -> impl Strategy<Value = AffineGaussianFamily> {
    (
        prop::collection::vec(-1.0..1.0f64, 6),
        prop::collection::vec(0.3..1.5f64, 3),
        prop::collection::vec(-1.0..1.0f64, 3),
    )
        .prop_map(|(a, diag, off)| {
            let l = [[diag[0], 0.0, 0.0], [off[0], diag[1], 0.0], [off[1], off[2], diag[2]]];
            let mut sigma = [0.0; 9];
            for i in 0..3 {
                for j in 0..3 {
                    sigma[3 * i + j] = (0..3).map(|m| l[i][m] * l[j][m]).sum();
                }
            }
            AffineGaussianFamily::from_row_major(3, 2, &a, &[0.1, -0.2, 0.3], &sigma).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn joint_density_factorizes(
        fam in family3(),
        y in prop::collection::vec(coord(), 3),
        theta in prop::collection::vec(-2.0..2.0f64, 2),
        index in 1usize..7,
    ) {
        let pattern = ResponsePattern::from_index(3, index);
        let theta = DVector::from_vec(theta);
        let (obs, mis) = split(&y, &pattern).unwrap();
        let joint = fam.log_density(&theta, &DVector::from_vec(y.clone())).unwrap();
        let marginal = fam.marginal_log_density(&pattern, &obs, &theta).unwrap();
        let cond = fam.conditional(&pattern, &obs, &theta).unwrap();
        let gauss = AffineGaussianFamily::new(
            iglab::nalgebra::DMatrix::zeros(mis.len(), 1),
            cond.mean.clone(),
            cond.cov.clone(),
        ).unwrap();
        let conditional = gauss
            .log_density(&DVector::from_element(1, 0.0), &DVector::from_vec(mis))
            .unwrap();
        prop_assert!((joint - marginal - conditional).abs() < 1e-9 * (1.0 + joint.abs()));
    }

    #[test]
    fn merge_inverts_split(y in prop::collection::vec(coord(), 4), index in 0usize..16) {
        let pattern = ResponsePattern::from_index(4, index);
        let (obs, mis) = split(&y, &pattern).unwrap();
        let merged = pattern.merge(&obs, &mis).unwrap();
        prop_assert_eq!(merged.as_slice(), &y[..]);
    }

    #[test]
    fn mechanism_probabilities_sum_to_one(
        y in prop::collection::vec(coord(), 3),
        psi in prop::collection::vec(-3.0..3.0f64, 2),
    ) {
        for (kind, k) in [
            (MdmKind::MarLogistic, 2),
            (MdmKind::MnarLogistic, 2),
            (MdmKind::MarLogistic, 3),
            (MdmKind::MnarLogistic, 3),
            (MdmKind::Ex32, 2),
            (MdmKind::Ex33, 3),
        ] {
            let mdm = MdmSpec::new(kind, k).unwrap();
            let psi = &psi[..mdm.psi_dim()];
            let mut total = 0.0;
            for r in ResponsePattern::enumerate(k) {
                let p = mdm.prob(&r, &y[..k], psi).unwrap();
                prop_assert!((0.0..=1.0).contains(&p));
                total += p;
            }
            prop_assert!((total - 1.0).abs() < 1e-12, "{kind:?} k={k}: {total}");
        }
    }

    #[test]
    fn censoring_density_is_nonnegative(
        g in -6.0..6.0f64,
        y in prop::collection::vec(coord(), 2),
        psi in -2.0..2.0f64,
    ) {
        for kind in CdmKind::ALL {
            let h = CdmSpec::new(kind).density(g, &y, psi).unwrap();
            prop_assert!(h.is_finite() && h >= 0.0);
        }
    }

    /// Under a MAR mechanism the full log-likelihood differs from the
    /// ignorable one by a θ-free amount.
    #[test]
    fn mar_full_minus_ignorable_is_constant(
        seed in any::<u64>(),
        psi in prop::collection::vec(-1.5..1.5f64, 2),
        t1 in -2.0..2.0f64,
        t2 in -2.0..2.0f64,
    ) {
        let fam = AffineGaussianFamily::example_3_1();
        let mdm = MdmSpec::new(MdmKind::MarLogistic, 2).unwrap();
        let data = simulate_missing(&fam, &mdm, &[0.3], &psi, 40, seed).unwrap();
        let mech = Mechanism::Missing(mdm);
        let quad = QuadratureSpec::default();
        let diff = |t: f64| {
            full_loglik(&fam, &mech, &data, &[t], &psi, &quad).unwrap()
                - ignorable_loglik(&fam, &data, &[t]).unwrap()
        };
        prop_assert!((diff(t1) - diff(t2)).abs() < 1e-9);
    }

    #[test]
    fn missing_csv_round_trips(seed in any::<u64>(), psi in -2.0..2.0f64) {
        let fam = AffineGaussianFamily::iid_normal(3).unwrap();
        let mdm = MdmSpec::new(MdmKind::Ex33, 3).unwrap();
        let data = simulate_missing(&fam, &mdm, &[0.5], &[psi], 25, seed).unwrap();
        let bytes = dataset_to_csv(&data).unwrap();
        let back = dataset_from_csv(std::str::from_utf8(&bytes).unwrap(), 3).unwrap();
        prop_assert_eq!(back.records(), data.records());
        prop_assert_eq!(dataset_to_csv(&back).unwrap(), bytes);
    }

    #[test]
    fn censored_csv_round_trips(seed in any::<u64>(), psi in -2.0..2.0f64) {
        let fam = AffineGaussianFamily::example_3_1();
        let data = simulate_censored(&fam, &CdmSpec::new(CdmKind::Ex41), &[0.2], psi, 25, seed).unwrap();
        let bytes = dataset_to_csv(&data).unwrap();
        let back = dataset_from_csv(std::str::from_utf8(&bytes).unwrap(), 2).unwrap();
        prop_assert_eq!(back.records(), data.records());
    }

    #[test]
    fn float_format_round_trips(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(format_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
    }

    #[test]
    fn digest_ignores_key_order_and_whitespace(
        a in -10.0..10.0f64,
        n in 1u32..100,
        pad in "[ \n\t]{0,3}",
    ) {
        let one = format!(r#"{{"alpha": {a}, "beta": [{n}, 2], "gamma": {{"x": true, "y": null}}}}"#);
        let two = format!(r#"{pad}{{"gamma":{pad}{{"y": null, "x": true}}, "beta": [{n},{pad}2], "alpha": {a}}}"#);
        let v1: serde_json::Value = serde_json::from_str(&one).unwrap();
        let v2: serde_json::Value = serde_json::from_str(&two).unwrap();
        prop_assert_eq!(digest_value(&v1), digest_value(&v2));
    }
}
