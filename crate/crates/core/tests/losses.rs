mod support;

use gml_core::losses::{
    jaccard_grad, mutual_loss, mutual_loss_grad, rkld_masked, rkld_mixed, soft_jaccard_distance, KldForm,
    MutualLossConfig,
};
use gml_core::rng::{stream, Purpose};
use gml_core::segcore::forward;
use gml_core::{GridDims, Mask, MaskPair, ModelParams, ProbField};
use rand::Rng;
use support::oracle;

const FORMS: [KldForm; 2] = [KldForm::FullDistribution, KldForm::LiteralTumorTerm];

fn line(p: &[f64]) -> ProbField {
    ProbField::new(GridDims::new(1, 1, p.len(), 1).unwrap(), p.to_vec()).unwrap()
}

fn line_mask(b: &[u8]) -> Mask {
    Mask::new(GridDims::new(1, 1, b.len(), 1).unwrap(), b.to_vec()).unwrap()
}

#[test]
fn regional_kl_examples_match_the_oracle() {
    let p = line(&[0.9, 0.2, 0.6]);
    let q = line(&[0.6, 0.3, 0.6]);
    let m = line_mask(&[1, 1, 0]);
    // 0.9 ln(1.5) + 0.1 ln(0.25) + 0.2 ln(2/3) + 0.8 ln(8/7)
    let expected = 0.9 * 1.5f64.ln() + 0.1 * 0.25f64.ln() + 0.2 * (2.0f64 / 3.0).ln() + 0.8 * (8.0f64 / 7.0).ln();
    let got = rkld_masked(&p, &q, &m, KldForm::FullDistribution).unwrap();
    assert!((got - expected).abs() < 1e-15);
    assert!((got - oracle::rkld_masked(&p, &q, m.bits(), true)).abs() < 1e-15);

    let empty = line_mask(&[0, 0, 0]);
    let pair = MaskPair::new(empty.clone(), empty).unwrap();
    assert_eq!(rkld_mixed(&p, &q, &pair, KldForm::FullDistribution).unwrap(), 0.0);
}

#[test]
fn losses_match_the_oracle_on_random_instances() {
    let mut rng = stream(11, Purpose::Data, 0);
    for _ in 0..300 {
        let d = oracle::random_dims(&mut rng, 3, 4);
        let p = oracle::random_field(&mut rng, d);
        let q = oracle::random_field(&mut rng, d);
        let t = oracle::random_mask(&mut rng, d);
        let tp = oracle::random_mask(&mut rng, d);
        let pair = MaskPair::new(t.clone(), tp.clone()).unwrap();
        let jd = soft_jaccard_distance(&p, &t).unwrap();
        assert!(oracle::rel_err(jd, oracle::soft_jaccard(&p, &t)) < 1e-10);
        for form in FORMS {
            let full = form == KldForm::FullDistribution;
            let got = rkld_mixed(&p, &q, &pair, form).unwrap();
            assert!(oracle::rel_err(got, oracle::rkld_mixed(&p, &q, t.bits(), tp.bits(), full)) < 1e-10);
            let lambda = rng.random_range(0.0..=1.0);
            let cfg = MutualLossConfig::new(lambda, form).unwrap();
            let got = mutual_loss(&p, &q, &t, &cfg).unwrap();
            assert!(oracle::rel_err(got, oracle::mutual(&p, &q, &t, lambda, full)) < 1e-10);
        }
    }
}

fn random_params(rng: &mut impl Rng, channels: usize) -> ModelParams {
    let weights = (0..channels).map(|_| rng.random_range(-1.5..1.5)).collect();
    ModelParams::new(weights, rng.random_range(-1.0..1.0)).unwrap()
}

#[test]
fn mutual_gradient_matches_finite_differences() {
    let mut rng = stream(12, Purpose::Data, 0);
    for lambda in [0.0, 0.5, 0.9, 1.0] {
        for form in FORMS {
            let cfg = MutualLossConfig::new(lambda, form).unwrap();
            for _ in 0..40 {
                let d = oracle::random_dims(&mut rng, 3, 4);
                let vol = oracle::random_volume(&mut rng, d);
                let params = random_params(&mut rng, d.channels);
                let peer = oracle::random_field(&mut rng, d);
                let truth = oracle::random_mask(&mut rng, d);
                let fwd = forward(&params, &vol).unwrap();
                let predicted = oracle::threshold(&fwd.field);
                let grad = mutual_loss_grad(&fwd, &peer, &truth, &vol, &cfg).unwrap();
                let fd = oracle::central_diff(&params.to_flat(), 1e-5, |x| {
                    oracle::loss_at(x, &vol, &peer, &truth, &predicted, lambda, form == KldForm::FullDistribution)
                });
                for (a, b) in grad.to_flat().iter().zip(&fd) {
                    assert!(
                        (a - b).abs() <= 1e-4 * a.abs().max(b.abs()).max(1e-6),
                        "lambda {lambda} {form:?}: analytic {a} vs numeric {b}"
                    );
                }
            }
        }
    }
}

#[test]
fn jaccard_gradient_is_the_zero_lambda_case() {
    let mut rng = stream(13, Purpose::Data, 0);
    for _ in 0..50 {
        let d = oracle::random_dims(&mut rng, 3, 3);
        let vol = oracle::random_volume(&mut rng, d);
        let params = random_params(&mut rng, d.channels);
        let peer = oracle::random_field(&mut rng, d);
        let truth = oracle::random_mask(&mut rng, d);
        let fwd = forward(&params, &vol).unwrap();
        let cfg = MutualLossConfig::new(0.0, KldForm::FullDistribution).unwrap();
        assert_eq!(
            jaccard_grad(&fwd, &truth, &vol).unwrap(),
            mutual_loss_grad(&fwd, &peer, &truth, &vol, &cfg).unwrap()
        );
    }
}

#[test]
fn agreeing_peers_give_a_zero_distillation_gradient() {
    let mut rng = stream(14, Purpose::Data, 0);
    let d = GridDims::new(3, 3, 3, 2).unwrap();
    let vol = oracle::random_volume(&mut rng, d);
    let params = random_params(&mut rng, 2);
    let truth = oracle::random_mask(&mut rng, d);
    let fwd = forward(&params, &vol).unwrap();
    let cfg = MutualLossConfig::new(1.0, KldForm::FullDistribution).unwrap();
    let grad = mutual_loss_grad(&fwd, &fwd.field, &truth, &vol, &cfg).unwrap();
    assert!(grad.to_flat().iter().all(|g| *g == 0.0));
}
