use hopkins_core::gradcheck::{check_autoencoder, check_classifier, relative_error, CheckOptions};
use hopkins_core::nn::{forward_autoencoder, forward_classifier, AutoencoderSpec, ClassifierSpec};
use hopkins_core::train::{composite_ae_loss, composite_classification_loss};
use hopkins_core::{HopkinsConfig, Matrix, Mode, Rng, Tape};

fn toy_inputs(n: usize, d: usize, seed: u64) -> Matrix {
    let mut r = Rng::new(seed);
    Matrix::from_fn(n, d, |_, _| r.normal())
}

fn sparse(stride: usize) -> CheckOptions {
    CheckOptions { stride, ..CheckOptions::default() }
}

#[test]
fn classifier_gradients_match_finite_differences() {
    let spec = ClassifierSpec::mlp(4, 3);
    let params = spec.init_params(&mut Rng::new(1));
    let x = toy_inputs(40, 4, 2);
    let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
    for (weight, target) in [(1.0, 0.5), (0.75, 0.5), (0.0, 0.01), (0.5, 0.99)] {
        let cfg = HopkinsConfig::default().with_target(target).unwrap();
        let report = check_classifier(&spec, &params, &x, &labels, weight, &cfg, &sparse(7)).unwrap();
        assert!(report.pass_fraction() >= 0.99, "w={weight}: {report:?}");
        assert!(report.checked > 2000);
    }
}

#[test]
fn autoencoder_gradients_match_finite_differences() {
    let spec = AutoencoderSpec::standard(8, 2);
    let params = spec.init_params(&mut Rng::new(3));
    let x = toy_inputs(40, 8, 4);
    for weight in [1.0, 0.75, 0.0] {
        let report = check_autoencoder(&spec, &params, &x, weight, &HopkinsConfig::default(), &sparse(11)).unwrap();
        assert!(report.pass_fraction() >= 0.99, "w={weight}: {report:?}");
    }
}

#[test]
fn composite_equals_two_pass_oracle() {
    let spec = ClassifierSpec::mlp(4, 3);
    let params = spec.init_params(&mut Rng::new(1));
    let x = toy_inputs(40, 4, 2);
    let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
    let cfg = HopkinsConfig::default();

    let run = |weight: f64| {
        let mut tape = Tape::new();
        let rec = params.record(&mut tape);
        let xi = tape.leaf(x.clone());
        let out = forward_classifier(&spec, &rec, xi, Mode::Eval, &mut Rng::new(0), &mut tape).unwrap();
        let l = composite_classification_loss(
            &mut tape, out.logits, &labels, out.tap, weight, &cfg, &mut Rng::new(3),
        )
        .unwrap();
        let ce = tape.value(l.primary).get(0, 0);
        let h = l.hopkins.as_ref().map(|h| tape.value(h.loss).get(0, 0));
        (tape.value(l.total).get(0, 0), ce, h)
    };
    let (total, ce, h) = run(0.75);
    assert!((total - (0.75 * ce + 0.25 * h.unwrap())).abs() < 1e-12);
    let (total, _, h) = run(0.0);
    assert_eq!(total, h.unwrap());
    let (total, ce, h) = run(1.0);
    assert_eq!(total, ce);
    assert!(h.is_none());

    // separate two-pass oracle: plain cross-entropy and a standalone statistic
    let mut tape = Tape::new();
    let rec = params.record(&mut tape);
    let xi = tape.leaf(x.clone());
    let out = forward_classifier(&spec, &rec, xi, Mode::Eval, &mut Rng::new(0), &mut tape).unwrap();
    let ce_oracle = hopkins_core::ops::cross_entropy(tape.value(out.logits), &labels).unwrap();
    let h_oracle = hopkins_core::hopkins_statistic(tape.value(out.tap.unwrap()), &cfg, &mut Rng::new(3))
        .unwrap()
        .statistic;
    let (total, _, _) = run(0.75);
    let expected = 0.75 * ce_oracle + 0.25 * (h_oracle - 0.5).abs();
    assert!((total - expected).abs() < 1e-12, "{total} vs {expected}");
}

#[test]
fn autoencoder_composite_two_pass_and_perfect_reconstruction() {
    let spec = AutoencoderSpec::standard(8, 2);
    let params = spec.init_params(&mut Rng::new(2));
    let x = toy_inputs(40, 8, 6);
    let cfg = HopkinsConfig::default();
    let mut tape = Tape::new();
    let rec = params.record(&mut tape);
    let xi = tape.leaf(x.clone());
    let out = forward_autoencoder(&spec, &rec, xi, Mode::Eval, &mut Rng::new(0), &mut tape).unwrap();
    let l = composite_ae_loss(&mut tape, out.reconstruction, xi, out.bottleneck, 0.75, &cfg, &mut Rng::new(1))
        .unwrap();
    let mse = hopkins_core::ops::mse(tape.value(out.reconstruction), &x).unwrap();
    let h = hopkins_core::hopkins_statistic(tape.value(out.bottleneck), &cfg, &mut Rng::new(1))
        .unwrap()
        .statistic;
    let total = tape.value(l.total).get(0, 0);
    assert!((total - (0.75 * mse + 0.25 * (h - 0.5).abs())).abs() < 1e-12);

    let target = tape.leaf(x.clone());
    let same = tape.leaf(x.clone());
    let l = composite_ae_loss(&mut tape, same, target, out.bottleneck, 1.0, &cfg, &mut Rng::new(1)).unwrap();
    assert_eq!(tape.value(l.total).get(0, 0), 0.0);
}

#[test]
fn relative_error_floor() {
    assert_eq!(relative_error(0.0, 0.0), 0.0);
    assert!(relative_error(1.0, 1.0 + 1e-6) < 1e-5);
    assert!(relative_error(1e-12, 0.0) < 1e-4);
}
