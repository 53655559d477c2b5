use seqfinal::tensornet::*;

fn params(family: Family, depth: usize) -> usize {
    let (_, w) = Network::<f32>::new(ArchSpec::new(family, depth, 10), 0).unwrap();
    w.param_count()
}

#[test]
fn parameter_counts_match_published_sizes() {
    assert_eq!(params(Family::Conv, 1), 302_922);
    let table = [
        (Family::Conv, 1, 0.3e6),
        (Family::Conv, 2, 0.7e6),
        (Family::Conv, 3, 1.6e6),
        (Family::Conv, 4, 1.6e6),
        (Family::Dense, 1, 1.2e6),
        (Family::Dense, 2, 1.7e6),
        (Family::Dense, 3, 3.0e6),
        (Family::Dense, 4, 6.9e6),
        (Family::Res, 1, 7.4e6),
        (Family::Res, 2, 8.2e6),
        (Family::Res, 3, 10.9e6),
        (Family::Res, 4, 11.0e6),
    ];
    for (f, d, want) in table {
        let got = params(f, d) as f64;
        assert!((got - want).abs() / want < 0.05, "{f:?}-{d}: {got} vs {want}");
    }
}

fn toy_batch(n: usize, side: usize, seed: u64) -> (Act<f64>, Vec<usize>) {
    let mut rng = seqfinal::SplitMix64::new(seed);
    let data = (0..3 * n * side * side).map(|_| rng.uniform(0.0, 1.0)).collect();
    let labels = (0..n).map(|i| i % 10).collect();
    (Act { c: 3, n, h: side, w: side, data }, labels)
}

fn check_net(arch: ArchSpec, sides: &[(usize, SideKind)]) -> GradCheckReport {
    let (mut net, mut w) = Network::<f64>::new(arch, 11).unwrap();
    for &(step, kind) in sides {
        net.attach_sides(&mut w, step, kind, true, 7).unwrap();
    }
    // Move side weights off zero so every path carries gradient.
    let mut rng = seqfinal::SplitMix64::new(5);
    for i in 0..w.len() {
        if w.is_param(i) && w.entry(i).name.starts_with("side") {
            w.data_mut(i).iter_mut().for_each(|v| *v += rng.uniform(-0.1, 0.1));
        }
    }
    let (x, labels) = toy_batch(6, 8, 2);
    let mask = Network::mask_all(&w);
    let ctx = Ctx::train(&mask);
    let mut g = w.zeros_like();
    let logits = net.forward(x.clone(), &mut w, &ctx);
    let out = cross_entropy(&logits, &labels);
    net.backward(out.dlogits, &w, &mut g, &ctx);
    let mut probe_net = net.clone();
    let report = gradient_check(
        &w,
        &g,
        &mask,
        |wp| {
            let mut wp = wp.clone();
            cross_entropy(&probe_net.forward(x.clone(), &mut wp, &ctx), &labels).loss
        },
        &GradCheckConfig { min_count: 300, ..Default::default() },
    );
    eprintln!("{arch}: {report:?}");
    report
}

#[test]
fn gradients_match_finite_differences() {
    assert!(check_net(ArchSpec::new(Family::Conv, 2, 10).with_divisor(16), &[]).passed);
    assert!(check_net(ArchSpec::new(Family::Res, 1, 10).with_divisor(16), &[]).passed);
    assert!(check_net(ArchSpec::new(Family::Dense, 2, 10).with_divisor(16), &[]).passed);
    assert!(check_net(ArchSpec::new(Family::Res, 2, 10).with_divisor(16), &[(1, SideKind::Block)]).passed);
    assert!(check_net(ArchSpec::new(Family::Conv, 2, 10).with_divisor(16), &[(1, SideKind::OneLayer), (2, SideKind::OneLayer)]).passed);
}

#[test]
fn zero_side_modules_leave_logits_bit_identical() {
    for arch in [
        ArchSpec::new(Family::Conv, 3, 10).with_divisor(8),
        ArchSpec::new(Family::Res, 2, 10).with_divisor(8),
        ArchSpec::new(Family::Dense, 2, 10).with_divisor(8),
    ] {
        for kind in [SideKind::OneLayer, SideKind::Block] {
            let (mut net, mut w) = Network::<f64>::new(arch, 4).unwrap();
            let (x, _) = toy_batch(5, 8, 9);
            let base = net.forward(x.clone(), &mut w, &Ctx::eval());
            net.attach_sides(&mut w, 1, kind, true, 7).unwrap();
            let with = net.forward(x.clone(), &mut w, &Ctx::eval());
            assert_eq!(base.data, with.data, "{arch} {kind:?}");
            if kind == SideKind::Block {
                // Block sides mirror the blocks parameter for parameter.
                let count = |m: Vec<bool>| (0..w.len()).filter(|&i| m[i]).map(|i| w.data(i).len()).sum::<usize>();
                let side_blocks = count(Network::<f64>::mask_where(&w, |n| n.starts_with("side1.block")));
                let blocks = count(Network::<f64>::mask_where(&w, |n| n.starts_with("block")));
                assert_eq!(side_blocks, blocks, "{arch}");
            }
        }
    }
}

#[test]
fn second_zeroed_side_equals_one_side() {
    let arch = ArchSpec::new(Family::Conv, 2, 10).with_divisor(16);
    let (mut net, mut w) = Network::<f64>::new(arch, 4).unwrap();
    net.attach_sides(&mut w, 1, SideKind::OneLayer, true, 7).unwrap();
    let mut rng = seqfinal::SplitMix64::new(1);
    for i in 0..w.len() {
        if w.entry(i).name.starts_with("side1.") {
            w.data_mut(i).iter_mut().for_each(|v| *v += rng.uniform(-0.2, 0.2));
        }
    }
    let (x, _) = toy_batch(4, 8, 2);
    let one = net.forward(x.clone(), &mut w, &Ctx::eval());
    net.attach_sides(&mut w, 2, SideKind::OneLayer, true, 7).unwrap();
    assert_eq!(one.data, net.forward(x, &mut w, &Ctx::eval()).data);
}

#[test]
fn frozen_entries_stay_bit_identical() {
    let (mut net, mut w) = Network::<f64>::new(ArchSpec::new(Family::Conv, 2, 10).with_divisor(16), 1).unwrap();
    net.attach_sides(&mut w, 1, SideKind::OneLayer, true, 7).unwrap();
    let mask = Network::<f64>::mask_side(&w, 1);
    let before = w.clone();
    let mut opt = Sgd::new(SgdConfig::default(), &w);
    let ctx = Ctx::train(&mask);
    for s in 0..3 {
        let (x, y) = toy_batch(8, 8, s);
        let mut g = w.zeros_like();
        let out = cross_entropy(&net.forward(x, &mut w, &ctx), &y);
        net.backward(out.dlogits, &w, &mut g, &ctx);
        opt.step(&mut w, &g, &mask, 0.05).unwrap();
    }
    for (i, (a, b)) in w.entries().iter().zip(before.entries()).enumerate() {
        // The trained side's own running statistics are expected to move.
        if !mask[i] && !a.name.starts_with("side1.") {
            assert_eq!(a.data, b.data, "{} changed", a.name);
        }
    }
    assert!(w.entries().iter().zip(before.entries()).enumerate().any(|(i, (a, b))| mask[i] && a.data != b.data));
}

#[test]
fn uniform_logits_give_log_classes() {
    let logits = Act { c: 10, n: 2, h: 1, w: 1, data: vec![0.3; 20] };
    assert!((cross_entropy(&logits, &[1, 7]).loss - 10f64.ln()).abs() < 1e-12);
}

#[test]
fn duplicated_sample_gives_same_loss_and_gradient() {
    // Batch norm frozen (running statistics), so samples do not interact.
    let (mut net, mut w) = Network::<f64>::new(ArchSpec::new(Family::Conv, 1, 10).with_divisor(16), 2).unwrap();
    let mask = Network::<f64>::mask_where(&w, |n| !n.contains("bn"));
    let ctx = Ctx::train(&mask);
    let (x, y) = toy_batch(1, 8, 3);
    let run = |net: &mut Network<f64>, w: &mut WeightVector<f64>, x: Act<f64>, y: &[usize]| {
        let mut g = w.zeros_like();
        let out = cross_entropy(&net.forward(x, w, &ctx), y);
        net.backward(out.dlogits, w, &mut g, &ctx);
        (out.loss, g)
    };
    let (l1, g1) = run(&mut net, &mut w, x.clone(), &y);
    let s = x.sample(0);
    let x2 = Act::from_images(&[&s, &s], 3, 8, 8);
    let (l2, g2) = run(&mut net, &mut w, x2, &[y[0], y[0]]);
    assert!((l1 - l2).abs() < 1e-12);
    let mut diff = g1.clone();
    diff.add_scaled(&g2, -1.0);
    assert!(diff.norm() < 1e-12);
}

#[test]
fn eval_is_deterministic_and_differs_from_train_mode() {
    let (mut net, mut w) = Network::<f64>::new(ArchSpec::new(Family::Res, 1, 10).with_divisor(16), 2).unwrap();
    let (x, _) = toy_batch(4, 8, 3);
    let a = net.forward(x.clone(), &mut w, &Ctx::eval());
    let b = net.forward(x.clone(), &mut w, &Ctx::eval());
    assert_eq!(a.data, b.data);
    let mask = Network::mask_all(&w);
    let t = net.forward(x, &mut w, &Ctx::train(&mask));
    assert_ne!(a.data, t.data);
}
