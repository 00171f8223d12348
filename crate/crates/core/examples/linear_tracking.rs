//! Tracks a slowly rotating 2-D state from noisy observations of its first
//! coordinate, cycling forecast and score-based analysis.
//!
//! cargo run --release --example linear_tracking

use latentfilter::Tensor;
use latentfilter::ensf::{DiffusionSchedule, GaussianLikelihood, ObsMap, ensemble_mean, ensf_step};
use rand::Rng;
use rand_distr::StandardNormal;

fn rotate(x: &[f64], theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c * x[0] - s * x[1], s * x[0] + c * x[1]]
}

fn main() -> latentfilter::Result<()> {
    let (theta, obs_std, members) = (0.3, 0.2, 200);
    let mut rng = latentfilter::rng::stream(5, &[]);
    let mut truth = [1.0, 0.0];
    let mut ens = Tensor::matrix(members, 2, (0..2 * members).map(|_| rng.sample(StandardNormal)).collect())?;
    let schedule = DiffusionSchedule::default();

    println!("step  truth              mean               error");
    for step in 0..20u64 {
        truth = rotate(&truth, theta);
        let y = truth[0] + obs_std * rng.sample::<f64, _>(StandardNormal);
        let lik = GaussianLikelihood::new(vec![y], vec![obs_std], ObsMap::Gather(vec![0]))?;
        let forecast = |e: &Tensor| {
            let data = e.data().chunks_exact(2).flat_map(|r| rotate(r, theta)).collect();
            Tensor::matrix(e.rows(), 2, data)
        };
        ens = ensf_step(&ens, forecast, &lik, &schedule, step)?;
        let m = ensemble_mean(&ens);
        let err = ((m[0] - truth[0]).powi(2) + (m[1] - truth[1]).powi(2)).sqrt();
        println!("{step:>4}  ({:>6.3}, {:>6.3})  ({:>6.3}, {:>6.3})  {err:.3}", truth[0], truth[1], m[0], m[1]);
    }
    Ok(())
}
