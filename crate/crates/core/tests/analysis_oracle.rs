use nalgebra::DMatrix;
use proptest::prelude::*;
use seqfinal::analysis::*;
use seqfinal::corpus::synthetic::{synthetic_cifar10, SyntheticConfig};
use seqfinal::methods::*;
use seqfinal::shiftgen::{materialize_sequence, preset, MaterializedSequence};
use seqfinal::tensornet::*;
use seqfinal::SplitMix64;
use std::sync::OnceLock;

fn seq() -> &'static MaterializedSequence {
    static SEQ: OnceLock<MaterializedSequence> = OnceLock::new();
    SEQ.get_or_init(|| {
        let corpus = synthetic_cifar10(&SyntheticConfig { train_per_class: 100, test_per_class: 20, ..Default::default() });
        materialize_sequence(&preset("RCL", 2, 40).unwrap(), &corpus).unwrap().downscaled(4)
    })
}

fn run(method: MethodId) -> MethodOutcome<f64> {
    let tc = TrainConfig { epochs: 2, batch_size: 32, precision: Precision::Double, seed: 5, ..Default::default() };
    run_method(seq(), ArchSpec::new(Family::Conv, 2, 10).with_divisor(16), &MethodConfig::new(method, tc)).unwrap()
}

fn direct(ck: &Checkpoint<f64>) -> f64 {
    accuracy(&mut Model::from_checkpoint(ck).unwrap(), &seq().test)
}

#[test]
fn interpolation_endpoints_are_exact() {
    for m in [MethodId::Ft, MethodId::St1, MethodId::Sst1, MethodId::Jst1] {
        let out = run(m);
        let init = out.init_model.as_ref().unwrap();
        let path = interpolation_path(init, &out.final_model, &seq().test, 21, out.side_mode).unwrap();
        assert_eq!(path.s.len(), 21);
        assert_eq!(path.accuracies[0], direct(init), "{m}");
        assert_eq!(path.accuracies[20], direct(&out.final_model), "{m}");
        assert_eq!(path.accuracies[20], out.test_acc, "{m}");
        assert_eq!(path.side_mode, matches!(m, MethodId::St1 | MethodId::Sst1));
    }
}

#[test]
fn flat_path_and_schema_errors() {
    let out = run(MethodId::Baseline);
    let ck = &out.final_model;
    let path = interpolation_path(ck, ck, &seq().test, 5, false).unwrap();
    assert!(path.accuracies.iter().all(|&a| a == path.accuracies[0]));
    let st = run(MethodId::St1);
    assert!(matches!(interpolation_path(ck, &st.final_model, &seq().test, 5, false), Err(AnalysisError::Schema(_))));
    assert!(path.to_csv().unwrap().starts_with("s,accuracy\n0.0000,"));
    let svg = svg::interpolation_chart("paths", &[("baseline", &path)]);
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
}

fn random_weights(seed: u64) -> WeightVector<f64> {
    let (_, mut w) = Network::<f64>::new(ArchSpec::new(Family::Conv, 1, 10).with_divisor(16), 0).unwrap();
    let mut rng = SplitMix64::new(seed);
    for e in 0..w.len() {
        w.data_mut(e).iter_mut().for_each(|v| *v = rng.uniform(-1.0, 1.0));
    }
    w
}

#[test]
fn projection_reference_points() {
    let (star, h, t) = (random_weights(1), random_weights(2), random_weights(3));
    let origin = project_weights(&star, &star, &h, &t, None).unwrap();
    assert_eq!((origin.x, origin.y), (0.0, 0.0));
    assert!((project_weights(&h, &star, &h, &t, None).unwrap().x - 1.0).abs() < 1e-12);
    assert!((project_weights(&t, &star, &h, &t, None).unwrap().y - 1.0).abs() < 1e-12);
    assert!((project_weights(&t, &star, &h, &t, Some("block1")).unwrap().y - 1.0).abs() < 1e-12);
    assert!(matches!(project_weights(&t, &star, &star, &t, None), Err(AnalysisError::Degenerate(_))));
    let svg = svg::projection_chart("p", &[("run", &[origin, ProjectionPoint { x: 1.0, y: 0.5 }][..])]);
    assert!(svg.contains("marker-end"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn projection_is_affine(alpha in -2.0f64..3.0, s1 in 10u64..1000, s2 in 1000u64..2000) {
        let (star, h, t) = (random_weights(1), random_weights(2), random_weights(3));
        let (w1, w2) = (random_weights(s1), random_weights(s2));
        let mix = WeightVector::lerp(&w2, &w1, alpha);
        let p = project_weights(&mix, &star, &h, &t, None).unwrap();
        let p1 = project_weights(&w1, &star, &h, &t, None).unwrap();
        let p2 = project_weights(&w2, &star, &h, &t, None).unwrap();
        prop_assert!((p.x - (alpha * p1.x + (1.0 - alpha) * p2.x)).abs() < 1e-9);
        prop_assert!((p.y - (alpha * p1.y + (1.0 - alpha) * p2.y)).abs() < 1e-9);
    }

    #[test]
    fn svcca_is_symmetric(seed in 0u64..1000) {
        let a = gaussian(300, 8, seed);
        let mut b = gaussian(300, 6, seed + 1);
        for r in 0..300 {
            b[(r, 0)] += a[(r, 0)];
        }
        let (x, y) = (svcca(&a, &b).unwrap(), svcca(&b, &a).unwrap());
        prop_assert!((x.mean_top50 - y.mean_top50).abs() < 1e-6 && (x.mean_top90 - y.mean_top90).abs() < 1e-6);
        prop_assert!(x.mean_top50 >= x.mean_top90 - 1e-9);
    }
}

fn gaussian(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = SplitMix64::new(seed);
    DMatrix::from_fn(n, d, |_, _| {
        let (u, v) = (rng.uniform(1e-12, 1.0), rng.uniform(0.0, 1.0));
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    })
}

#[test]
fn svcca_sanity() {
    let a = gaussian(1000, 20, 1);
    let same = svcca(&a, &a).unwrap();
    assert!((same.mean_top50 - 1.0).abs() < 1e-6 && (same.mean_top90 - 1.0).abs() < 1e-6, "{same:?}");
    let map = gaussian(20, 20, 2) + DMatrix::identity(20, 20) * 3.0;
    let mapped = svcca(&a, &(&a * map)).unwrap();
    assert!((mapped.mean_top50 - 1.0).abs() < 1e-4 && (mapped.mean_top90 - 1.0).abs() < 1e-4, "{mapped:?}");
    let indep = svcca(&a, &gaussian(1000, 20, 3)).unwrap();
    assert!(indep.mean_top50 < 0.3 && indep.mean_top90 < 0.3, "{indep:?}");
    assert!(matches!(svcca(&a, &gaussian(999, 20, 3)), Err(AnalysisError::Shape(_))));
}

#[test]
fn layer_activations_feed_svcca() {
    let out = run(MethodId::Ft);
    let mut m = Model::from_checkpoint(&out.final_model).unwrap();
    let acts = layer_activations(&mut m, &seq().test, 1).unwrap();
    assert_eq!(acts.nrows(), seq().test.len());
    let s = svcca(&acts, &acts).unwrap();
    assert!((s.mean_top50 - 1.0).abs() < 1e-6);
}
