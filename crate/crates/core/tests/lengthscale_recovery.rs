use alkgp::gp::{kernel_matrix, FeatureMatrix, Hyperparameters};
use alkgp::mle::{self, MleOptions};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

#[test]
fn one_dimensional_lengthscale_is_recovered() {
    let mut rng = alkgp::rng::stream(2024);
    let n = 200;
    let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-5.0..5.0)]).collect();
    let x = FeatureMatrix::from_rows(&xs).unwrap();
    let truth = Hyperparameters::new(vec![0.8], 1.0, 2.0, 0.01).unwrap();

    let m: DMatrix<f64> = kernel_matrix(&x, &truth, true).unwrap().values;
    let l = m.cholesky().expect("generating covariance is positive definite").unpack();
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y: Vec<f64> = (l * z).iter().copied().collect();

    let fit = mle::fit(
        &x,
        &y,
        &Hyperparameters::ones(1),
        &MleOptions {
            restarts: 4,
            seed: 7,
            ..MleOptions::default()
        },
    )
    .unwrap();
    let got = fit.theta.lengthscales()[0];
    assert!(got > 0.4 && got < 1.6, "recovered lengthscale {got} vs 0.8");
}
