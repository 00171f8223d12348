use latentfilter::Tensor;
use latentfilter::ensf::{DiffusionSchedule, GaussianLikelihood, ObsMap, likelihood_score, softmax_in_place};
use latentfilter::harness::config::Method;
use latentfilter::harness::metrics::{MetricsRecord, metrics_csv, parse_metrics};
use latentfilter::ldnet::{LdnetModel, interpolate_latent};
use latentfilter::nn::{Dense, MlpParams};
use latentfilter::obs_encoder::ObservationOperator;
use latentfilter::pde::dataset::split_sizes;
use latentfilter::pde::normalize::{Normalizer, VarNorm};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn finite() -> impl Strategy<Value = f64> {
    -1e6..1e6f64
}

proptest! {
    #[test]
    fn normalizer_roundtrip(
        lo in finite(),
        span in 1e-6..1e6f64,
        mean in finite(),
        std in 1e-6..1e6f64,
        xs in prop::collection::vec(finite(), 1..20),
    ) {
        for v in [VarNorm::MinMax { min: lo, max: lo + span }, VarNorm::ZScore { mean, std }] {
            let n = Normalizer::new(vec![v]);
            for &x in &xs {
                let back = n.denormalize(&n.normalize(&[x]).unwrap()).unwrap()[0];
                prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(lo.abs()).max(mean.abs()).max(1.0), "{x} -> {back}");
            }
        }
    }

    #[test]
    fn minmax_fit_maps_data_into_unit_box(xs in prop::collection::vec(finite(), 1..50)) {
        let v = VarNorm::fit_minmax(xs.iter().copied()).unwrap();
        for &x in &xs {
            let z = v.normalize(x);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&z));
        }
    }

    #[test]
    fn metrics_csv_roundtrip(
        rows in prop::collection::vec(
            (0usize..3, 0.0..1.0f64, 0usize..100, prop::option::of(0.0..10.0f64), prop::option::of(0.0..10.0f64), prop::option::of(0.0..10.0f64), 1usize..20000),
            1..30,
        )
    ) {
        let recs: Vec<MetricsRecord> = rows
            .into_iter()
            .map(|(m, noise, step, l, p, s, dim)| MetricsRecord {
                method: Method::ALL[m],
                noise,
                step,
                latent_rmse: l,
                param_rmse: p,
                state_rmse: s,
                dim,
            })
            .collect();
        prop_assert_eq!(parse_metrics(&metrics_csv(&recs)).unwrap(), recs);
    }

    #[test]
    fn splits_are_exhaustive(n in 3usize..500) {
        let (a, b, c) = split_sizes(n);
        prop_assert_eq!(a + b + c, n);
        prop_assert!(a >= 1 && b >= 1 && c >= 1);
    }

    #[test]
    fn softmax_is_shift_invariant(logw in prop::collection::vec(-50.0..50.0f64, 1..30), shift in -1e3..1e3f64) {
        let mut a = logw.clone();
        let mut b: Vec<f64> = logw.iter().map(|w| w + shift).collect();
        softmax_in_place(&mut a);
        softmax_in_place(&mut b);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn unobserved_coordinates_get_no_likelihood_pull(
        dim in 2usize..40,
        picks in prop::collection::vec(any::<prop::sample::Index>(), 1..10),
        seed in any::<u64>(),
    ) {
        let idx: Vec<usize> = picks.iter().map(|p| p.index(dim)).collect();
        let mut rng = latentfilter::rng::stream(seed, &[1]);
        let y: Vec<f64> = idx.iter().map(|_| rng.gen_range(-2.0..2.0)).collect();
        let std: Vec<f64> = idx.iter().map(|_| rng.gen_range(0.1..2.0)).collect();
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lik = GaussianLikelihood::new(y, std, ObsMap::Gather(idx.clone())).unwrap();
        let g = likelihood_score(&lik, &x).unwrap();
        for j in 0..dim {
            if !idx.contains(&j) {
                prop_assert_eq!(g[j], 0.0);
            }
        }
    }

    #[test]
    fn observation_lattice_is_centered_and_distinct(n in 4usize..200, m_frac in 0.05..1.0f64) {
        let m = ((n as f64 * m_frac) as usize).max(1);
        let op = ObservationOperator::all_fields(n, m, 3).unwrap();
        prop_assert_eq!(op.dim(), 3 * m * m);
        let lattice: Vec<usize> = (0..m).map(|k| (2 * k + 1) * n / (2 * m)).collect();
        let expected: Vec<usize> = lattice.iter().flat_map(|&j| lattice.iter().map(move |&i| j * n + i)).collect();
        let mut cells = op.cells.clone();
        prop_assert_eq!(&cells, &expected);
        cells.dedup();
        prop_assert_eq!(cells.len(), m * m);
    }

    #[test]
    fn linear_latent_dynamics_match_matrix_recursion(seed in any::<u64>(), d_s in 1usize..5, d_u in 1usize..3, steps in 1usize..12) {
        let mut rng = latentfilter::rng::stream(seed, &[2]);
        let mut draw = |r: usize, c: usize| Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap();
        let w = draw(d_s + d_u, d_s);
        let b = draw(1, d_s).reshape(&[d_s]).unwrap();
        let f = MlpParams::from_layers(vec![Dense { weight: w.clone(), bias: b.clone() }]).unwrap();
        let r = MlpParams::new(&[d_s + 2, 3], seed).unwrap();
        let dt = 0.1;
        let model = LdnetModel::from_parts(f, r, d_u, dt).unwrap();
        let u: Vec<f64> = (0..d_u).map(|i| 0.3 * i as f64 - 0.2).collect();
        let got = model.latent_rollout(&vec![u.clone(); steps], steps).unwrap();

        // s ← s + dt (Aᵀ s + Bᵀ u + b) with A, B the row blocks of W.
        let mut s = vec![0.0; d_s];
        for t in 0..steps {
            let mut next = s.clone();
            for o in 0..d_s {
                let mut acc = b.data()[o];
                for i in 0..d_s {
                    acc += w.data()[i * d_s + o] * s[i];
                }
                for k in 0..d_u {
                    acc += w.data()[(d_s + k) * d_s + o] * u[k];
                }
                next[o] += dt * acc;
            }
            s = next;
            for o in 0..d_s {
                prop_assert!((got[t][o] - s[o]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_query_matches_point_loop(seed in any::<u64>(), n in 2usize..9) {
        let f = MlpParams::new(&[4, 5, 2], seed).unwrap();
        let r = MlpParams::new(&[4, 7, 7, 3], seed ^ 9).unwrap();
        let model = LdnetModel::from_parts(f, r, 2, 0.05).unwrap();
        let s = [0.3, -0.7];
        let coords: Vec<(f64, f64)> = (0..n * n)
            .map(|c| (-1.0 + 2.0 * (c % n) as f64 / (n - 1) as f64, -1.0 + 2.0 * (c / n) as f64 / (n - 1) as f64))
            .collect();
        let grid = model.reconstruct_grid(&s, &coords).unwrap();
        for (c, &p) in coords.iter().enumerate() {
            let one = model.reconstruct_at(&s, &[p]).unwrap();
            for f in 0..3 {
                prop_assert_eq!(grid[f * n * n + c], one.data()[f]);
            }
        }
    }

    #[test]
    fn linear_latent_interpolation_is_exact(a in prop::collection::vec(-5.0..5.0f64, 1..5), t in 0.0..9.0f64) {
        let slope: Vec<f64> = a.iter().map(|x| 0.5 * x - 1.0).collect();
        let states: Vec<Vec<f64>> = (0..10).map(|k| a.iter().zip(&slope).map(|(x, m)| x + m * k as f64).collect()).collect();
        let got = interpolate_latent(&states, t).unwrap();
        for ((x, m), g) in a.iter().zip(&slope).zip(&got) {
            prop_assert!((x + m * t - g).abs() < 1e-12);
        }
    }
}

#[test]
fn diffused_endpoint_covariance_is_near_identity() {
    let sched = DiffusionSchedule::default();
    let c = sched.coeffs(1.0).unwrap();
    let mut rng = latentfilter::rng::stream(3, &[]);
    let n = 10_000;
    let d = 3;
    let mut cov = vec![0.0; d * d];
    let mut mean = vec![0.0; d];
    let samples: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let x0: f64 = rng.sample(StandardNormal);
                    let xi: f64 = rng.sample(StandardNormal);
                    c.alpha * x0 + c.beta2.sqrt() * xi
                })
                .collect()
        })
        .collect();
    for s in &samples {
        for i in 0..d {
            mean[i] += s[i] / n as f64;
        }
    }
    for s in &samples {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (s[i] - mean[i]) * (s[j] - mean[j]) / (n - 1) as f64;
            }
        }
    }
    let target = 1.0 + sched.eps_alpha * sched.eps_alpha;
    for i in 0..d {
        for j in 0..d {
            let want = if i == j { target } else { 0.0 };
            assert!((cov[i * d + j] - want).abs() < 0.1 * target, "cov[{i},{j}] = {}", cov[i * d + j]);
        }
    }
}
