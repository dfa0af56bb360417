//! Property tests over randomized inputs.

use proptest::prelude::*;

use tfis::datasets::{BatchMeta, Dataset, SampleBatch};
use tfis::evaluation::{histogram2d, jsd};
use tfis::mixture::GaussianMixture;
use tfis::rng::{RngStream, StreamTag};
use tfis::samplers::{ancestral_step, euler_maruyama_step, issgm_score};
use tfis::schedule::NoiseSchedule;
use tfis::score_models::MixtureScore;
use tfis::weights::{
    make_element_sum, make_exp_linear, make_logistic_classifier, make_norm_squared, WeightFunction,
};
use tfis::{grad_check, Tensor};

fn schedule() -> NoiseSchedule {
    NoiseSchedule::cosine(1000, 0.008).unwrap()
}

fn batch(data: Vec<f64>) -> SampleBatch {
    let meta = BatchMeta {
        source: "prop".into(),
        seed: 0,
        sampler: "prop".into(),
    };
    SampleBatch::new(2, data, meta).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn autodiff_matches_finite_differences(xs in prop::collection::vec(-2.0f64..2.0, 6)) {
        let x = Tensor::matrix(2, 3, xs).unwrap();
        let w = Tensor::matrix(3, 2, vec![0.3, -0.7, 1.1, 0.2, -0.4, 0.9]).unwrap();
        let err = grad_check(
            |tape, x| {
                let w = tape.leaf(w.clone());
                let h = tape.matmul(x, w)?;
                let e = tape.exp(h)?;
                let s = tape.sum(e)?;
                let l = tape.log(s)?;
                let q = tape.norm_sq(x)?;
                let q = tape.scale(q, 0.25)?;
                tape.add(l, q)
            },
            &x,
            1e-6,
        )
        .unwrap();
        prop_assert!(err <= 1e-5, "{}", err);
    }

    #[test]
    fn gaussian_log_linear_case_is_exact(
        x0 in -3.0f64..3.0,
        x1 in -3.0f64..3.0,
        a0 in -2.0f64..2.0,
        a1 in -2.0f64..2.0,
        t in 1usize..=1000,
    ) {
        let s = schedule();
        let score = MixtureScore::new(GaussianMixture::standard_normal(2), s.clone());
        let w = make_exp_linear(vec![a0, a1], 0.0);
        let q = issgm_score(&score, &w, &s, &[x0, x1], t, 1e-3).unwrap();
        let sa = s.alpha_bar_at(t).unwrap().sqrt();
        prop_assert!((q[0] - (-x0 + sa * a0)).abs() <= 1e-9);
        prop_assert!((q[1] - (-x1 + sa * a1)).abs() <= 1e-9);
    }

    #[test]
    fn steps_keep_finite_states_finite(
        x in prop::collection::vec(-1e3f64..1e3, 2),
        q in prop::collection::vec(-1e3f64..1e3, 2),
        z in prop::collection::vec(-6.0f64..6.0, 2),
        t in 1usize..=1000,
    ) {
        let s = schedule();
        let a = ancestral_step(&q, &s, &x, t, &z).unwrap();
        let e = euler_maruyama_step(&q, &s, &x, t, &z).unwrap();
        prop_assert!(a.iter().chain(&e).all(|v| v.is_finite()));
    }

    #[test]
    fn jsd_is_symmetric_and_bounded(
        a in prop::collection::vec(-1.5f64..1.5, 2..400),
        b in prop::collection::vec(-1.5f64..1.5, 2..400),
    ) {
        let even = |v: Vec<f64>| { let n = v.len() / 2 * 2; v[..n].to_vec() };
        let bounds = [-1.2, 1.2, -1.2, 1.2];
        let ha = histogram2d(&batch(even(a)), bounds, (20, 20)).unwrap();
        let hb = histogram2d(&batch(even(b)), bounds, (20, 20)).unwrap();
        let ab = jsd(&ha, &hb).unwrap();
        let ba = jsd(&hb, &ha).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert!((0.0..=2f64.ln() + 1e-12).contains(&ab));
        prop_assert_eq!(jsd(&ha, &ha).unwrap(), 0.0);
    }

    #[test]
    fn histogram_accounts_for_every_sample(v in prop::collection::vec(-2.0f64..2.0, 0..300)) {
        let n = v.len() / 2 * 2;
        let h = histogram2d(&batch(v[..n].to_vec()), [-1.2, 1.2, -1.2, 1.2], (7, 9)).unwrap();
        prop_assert_eq!(h.in_bounds() + h.overflow(), (n / 2) as u64);
        if h.in_bounds() > 0 {
            prop_assert!((h.density().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn generators_are_deterministic(seed in any::<u64>(), n in 1usize..300) {
        for ds in Dataset::ALL {
            prop_assert_eq!(ds.sample(n, seed), ds.sample(n, seed));
        }
    }

    #[test]
    fn rng_streams_replay(seed in any::<u64>(), index in any::<u32>()) {
        let mut a = RngStream::derive(seed, StreamTag::Chain, index as u64);
        let mut b = RngStream::derive(seed, StreamTag::Chain, index as u64);
        for _ in 0..16 {
            prop_assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }
}

#[test]
fn weights_respect_their_floor() {
    let floor = 1e-4;
    let weights: Vec<Box<dyn WeightFunction>> = vec![
        Box::new(make_norm_squared(floor)),
        Box::new(make_element_sum(floor)),
        Box::new(make_logistic_classifier(vec![3.0, -2.0], 0.5, floor)),
    ];
    let mut rng = RngStream::derive(0, StreamTag::Probe, 1);
    for _ in 0..1_000_000 {
        let x = [rng.uniform_range(-3.0, 3.0), rng.uniform_range(-3.0, 3.0)];
        for w in &weights {
            assert!(w.l(&x) >= floor, "{} at {x:?}", w.name());
        }
    }
}
