use boxopt::geometry::BoundingBox;
use boxopt::structsvm::{
    hinge_pos, objective, subgradient, train, train_with_mining, Candidate, StructuredLabel, TrainConfig,
    TrainingExample, WeightVector,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_box() -> BoundingBox {
    BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap()
}

fn random_instance(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Vec<TrainingExample> {
    let feats = |rng: &mut ChaCha8Rng| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    (0..m)
        .map(|i| {
            let k = rng.random_range(0..=6);
            let candidates = (0..k)
                .map(|_| Candidate { bbox: unit_box(), features: feats(rng), loss: rng.random_range(0.0..1.0) })
                .collect();
            if i % 2 == 0 {
                TrainingExample {
                    image: format!("img{i}"),
                    label: StructuredLabel::Positive(unit_box()),
                    gt_features: Some(feats(rng)),
                    candidates,
                }
            } else {
                TrainingExample { image: format!("img{i}"), label: StructuredLabel::Negative, gt_features: None, candidates }
            }
        })
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

/// Plain subgradient descent with step 1/t (the objective is 1-strongly
/// convex), keeping the best iterate.
fn subgradient_reference(data: &[TrainingExample], cfg: &TrainConfig, d: usize, iters: usize) -> f64 {
    let mut w = vec![0.0; d];
    let mut best = f64::INFINITY;
    for t in 1..=iters {
        let wv = WeightVector::new(w.clone());
        best = best.min(objective(&wv, data, cfg).unwrap());
        let g = subgradient(&wv, data, cfg).unwrap();
        let step = 1.0 / t as f64;
        for (wk, gk) in w.iter_mut().zip(&g) {
            *wk -= step * gk;
        }
    }
    best
}

#[test]
fn mining_matches_full_training_on_tiny_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = TrainConfig::default();
    for trial in 0..20 {
        let m = rng.random_range(4..=10);
        let data = random_instance(&mut rng, m, 4);
        let full = train(&data, &cfg).unwrap();
        let mined = train_with_mining(&data, &cfg).unwrap();
        let full_obj = objective(&full.w, &data, &cfg).unwrap();
        assert!(
            rel(mined.objective, full_obj) <= 1e-3,
            "trial {trial}: mined {} full {}",
            mined.objective,
            full_obj
        );
    }
}

#[test]
fn one_dimensional_separable_fixture_matches_grid() {
    let pos = TrainingExample {
        image: "p".into(),
        label: StructuredLabel::Positive(unit_box()),
        gt_features: Some(vec![1.0]),
        candidates: vec![Candidate { bbox: unit_box(), features: vec![1.0], loss: 0.0 }],
    };
    let neg = TrainingExample {
        image: "n".into(),
        label: StructuredLabel::Negative,
        gt_features: None,
        candidates: vec![Candidate { bbox: unit_box(), features: vec![-1.0], loss: 1.0 }],
    };
    let data = vec![pos.clone(), neg.clone(), neg];
    let cfg = TrainConfig::default();
    let out = train(&data, &cfg).unwrap();
    let (mut gw, mut gv) = (0.0, f64::INFINITY);
    for k in 0..=40_000 {
        let w = -2.0 + 1e-4 * k as f64;
        let v = objective(&WeightVector::new(vec![w]), &data, &cfg).unwrap();
        if v < gv {
            gv = v;
            gw = w;
        }
    }
    assert!((out.w.as_slice()[0] - gw).abs() <= 1e-3, "{:?} vs {gw}", out.w);
}

#[test]
fn doubled_weights_match_subgradient_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cfg = TrainConfig { c_pos: 4.0, c_neg: 2.0, ..Default::default() };
    for _ in 0..3 {
        let data = random_instance(&mut rng, 8, 3);
        let out = train(&data, &cfg).unwrap();
        let reference = subgradient_reference(&data, &cfg, 3, 200_000);
        let got = objective(&out.w, &data, &cfg).unwrap();
        assert!(got <= reference * (1.0 + 1e-3), "lbfgs {got} reference {reference}");
    }
}

#[test]
fn candidates_equal_to_ground_truth_give_pure_margin() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut data = Vec::new();
    for i in 0..6 {
        let phi: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..1.5)).collect();
        let cands = (0..3).map(|_| Candidate { bbox: unit_box(), features: phi.clone(), loss: 0.0 }).collect();
        data.push(TrainingExample {
            image: format!("p{i}"),
            label: StructuredLabel::Positive(unit_box()),
            gt_features: Some(phi),
            candidates: cands,
        });
        let neg: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..-0.5)).collect();
        data.push(TrainingExample {
            image: format!("n{i}"),
            label: StructuredLabel::Negative,
            gt_features: None,
            candidates: vec![Candidate { bbox: unit_box(), features: neg, loss: 1.0 }],
        });
    }
    // large C so the hinge terms dominate the regularizer
    let cfg = TrainConfig { c_pos: 200.0, c_neg: 100.0, ..Default::default() };
    let out = train(&data, &cfg).unwrap();
    for ex in data.iter().filter(|e| e.is_positive()) {
        let s = out.w.dot(ex.gt_features.as_ref().unwrap()).unwrap();
        assert!(s >= 1.0 - 1e-3, "gt score {s}");
        assert!(hinge_pos(&out.w, ex).unwrap() <= 1e-3);
    }
}

#[test]
fn subgradient_matches_finite_differences_away_from_kinks() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cfg = TrainConfig::default();
    let mut checked = 0;
    while checked < 30 {
        let data = random_instance(&mut rng, 6, 3);
        let w: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        if near_kink(&w, &data, 1e-3) {
            continue;
        }
        let g = subgradient(&WeightVector::new(w.clone()), &data, &cfg).unwrap();
        for k in 0..3 {
            let h = 1e-6;
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[k] += h;
            wm[k] -= h;
            let fd = (objective(&WeightVector::new(wp), &data, &cfg).unwrap()
                - objective(&WeightVector::new(wm), &data, &cfg).unwrap())
                / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-4 * g[k].abs().max(1.0), "fd {fd} vs {}", g[k]);
        }
        checked += 1;
    }
}

/// True if any hinge has two competing terms within `margin` of each other.
fn near_kink(w: &[f64], data: &[TrainingExample], margin: f64) -> bool {
    let dot = |a: &[f64]| a.iter().zip(w).map(|(x, y)| x * y).sum::<f64>();
    data.iter().any(|ex| {
        let mut terms = vec![0.0];
        match &ex.gt_features {
            Some(phi) => {
                let s = dot(phi);
                terms.push(1.0 - s);
                terms.extend(ex.candidates.iter().map(|c| dot(&c.features) - s + c.loss));
            }
            None => terms.extend(ex.candidates.iter().map(|c| 1.0 + dot(&c.features))),
        }
        terms.sort_by(|a, b| b.partial_cmp(a).unwrap());
        terms.len() > 1 && terms[0] - terms[1] < margin
    })
}

fn instance_strategy() -> impl Strategy<Value = (u64, Vec<f64>, Vec<f64>, f64)> {
    (
        any::<u64>(),
        prop::collection::vec(-3.0..3.0f64, 3),
        prop::collection::vec(-3.0..3.0f64, 3),
        0.0..1.0f64,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn objective_is_midpoint_convex((seed, w1, w2, alpha) in instance_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_instance(&mut rng, 6, 3);
        let cfg = TrainConfig::default();
        let mix: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
        let f = |w: &[f64]| objective(&WeightVector::new(w.to_vec()), &data, &cfg).unwrap();
        prop_assert!(f(&mix) <= alpha * f(&w1) + (1.0 - alpha) * f(&w2) + 1e-10);
    }

    #[test]
    fn subgradient_inequality((seed, w, w2, _a) in instance_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_instance(&mut rng, 6, 3);
        let cfg = TrainConfig::default();
        let wv = WeightVector::new(w.clone());
        let g = subgradient(&wv, &data, &cfg).unwrap();
        let f0 = objective(&wv, &data, &cfg).unwrap();
        let f1 = objective(&WeightVector::new(w2.clone()), &data, &cfg).unwrap();
        let lin: f64 = g.iter().zip(w2.iter().zip(&w)).map(|(gk, (b, a))| gk * (b - a)).sum();
        prop_assert!(f1 >= f0 + lin - 1e-9);
    }

    #[test]
    fn hinges_are_non_negative((seed, w, _w2, _a) in instance_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_instance(&mut rng, 6, 3);
        let wv = WeightVector::new(w);
        for ex in &data {
            let h = if ex.is_positive() {
                hinge_pos(&wv, ex).unwrap()
            } else {
                boxopt::structsvm::hinge_neg(&wv, ex).unwrap()
            };
            prop_assert!(h >= 0.0);
        }
    }
}

#[test]
fn excluded_candidates_are_inactive_after_mining() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cfg = TrainConfig::default();
    for _ in 0..20 {
        let data = random_instance(&mut rng, 10, 4);
        let mined = train_with_mining(&data, &cfg).unwrap();
        let on_active = boxopt::structsvm::objective_on(&mined.w, &data, &mined.active, &cfg).unwrap();
        assert!((on_active - mined.objective).abs() <= 1e-12 * mined.objective.max(1.0));
    }
}
