use std::rc::Rc;

use latentfilter::Tensor;
use latentfilter::autodiff::{Tape, Var};
use latentfilter::nn::{LstmParams, MlpParams};
use proptest::prelude::*;
use rand::Rng;

const H: f64 = 1e-6;

fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = latentfilter::rng::stream(seed, &[7]);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Redraws every parameter, biases included, so that no ReLU input sits
/// exactly on the kink where finite differences see half the slope.
fn randomize(params: Vec<&mut Tensor>, seed: u64) {
    let mut rng = latentfilter::rng::stream(seed, &[8]);
    for p in params {
        p.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
    }
}

/// Norm-wise relative gap between taped and central-difference gradients
/// of `loss` with respect to every entry of every parameter.
fn fd_gap(params: &mut [&mut Tensor], analytic: &[Tensor], mut loss: impl FnMut(&[&mut Tensor]) -> f64) -> f64 {
    let (mut diff, mut norm) = (0.0, 0.0);
    for p in 0..params.len() {
        for i in 0..params[p].len() {
            let x = params[p].data()[i];
            params[p].data_mut()[i] = x + H;
            let up = loss(params);
            params[p].data_mut()[i] = x - H;
            let down = loss(params);
            params[p].data_mut()[i] = x;
            let fd = (up - down) / (2.0 * H);
            diff += (fd - analytic[p].data()[i]).powi(2);
            norm += fd * fd;
        }
    }
    diff.sqrt() / norm.sqrt().max(1e-12)
}

fn mlp_loss(mlp: &MlpParams, x: &Tensor, y: &Rc<Tensor>) -> (f64, Vec<Tensor>) {
    let mut tape = Tape::new();
    let vars = mlp.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let out = vars.forward(&mut tape, xv).unwrap();
    let loss = tape.mse(out, y.clone()).unwrap();
    let value = tape.value(loss).item().unwrap();
    let mut g = tape.backward(loss).unwrap();
    (value, vars.vars().into_iter().map(|v| g.take(v)).collect())
}

fn lstm_loss(lstm: &LstmParams, xs: &[Tensor], y: &Rc<Tensor>) -> (f64, Vec<Tensor>) {
    let mut tape = Tape::new();
    let vars = lstm.bind(&mut tape);
    let mut state = vars.initial_state(&mut tape, xs[0].rows());
    let mut out: Option<Var> = None;
    for x in xs {
        let xv = tape.constant(x.clone());
        let (o, next) = vars.step(&mut tape, xv, &state, None).unwrap();
        state = next;
        out = Some(o);
    }
    let loss = tape.mse(out.unwrap(), y.clone()).unwrap();
    let value = tape.value(loss).item().unwrap();
    let mut g = tape.backward(loss).unwrap();
    (value, vars.vars().into_iter().map(|v| g.take(v)).collect())
}

/// Two Euler steps of `s ← s + dt·F(s, u)` from zero, each state decoded
/// by `R(s, ξ)` at a few points.
fn rollout_loss(f: &MlpParams, r: &MlpParams, u: &Tensor, xi: &Tensor, y: &Rc<Tensor>, dt: f64) -> (f64, Vec<Tensor>) {
    let mut tape = Tape::new();
    let fv = f.bind(&mut tape);
    let rv = r.bind(&mut tape);
    let uv = tape.constant(u.clone());
    let mut s = tape.constant(Tensor::zeros(&[1, f.output_width()]));
    let mut stack = Vec::new();
    for _ in 0..2 {
        let inp = tape.concat_cols(&[s, uv]).unwrap();
        let ds = fv.forward(&mut tape, inp).unwrap();
        s = tape.add_scaled(s, ds, dt).unwrap();
        stack.push(s);
    }
    let latents = tape.concat_rows(&stack).unwrap();
    let per_state = xi.rows() / 2;
    let rows: Vec<usize> = (0..xi.rows()).map(|i| i / per_state).collect();
    let gathered = tape.gather_rows(latents, Rc::from(rows)).unwrap();
    let xv = tape.constant(xi.clone());
    let inp = tape.concat_cols(&[gathered, xv]).unwrap();
    let out = rv.forward(&mut tape, inp).unwrap();
    let loss = tape.mse(out, y.clone()).unwrap();
    let value = tape.value(loss).item().unwrap();
    let mut g = tape.backward(loss).unwrap();
    (value, fv.vars().into_iter().chain(rv.vars()).map(|v| g.take(v)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn mlp_gradient_matches_finite_differences(
        depth in 1usize..4,
        width in 2usize..9,
        input in 1usize..5,
        output in 1usize..4,
        batch in 1usize..5,
        seed in any::<u64>(),
    ) {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(width, depth));
        widths.push(output);
        let mut mlp = MlpParams::new(&widths, seed).unwrap();
        randomize(mlp.params_mut(), seed);
        let x = random_tensor(batch, input, seed ^ 1);
        let y = Rc::new(random_tensor(batch, output, seed ^ 2));
        let (_, analytic) = mlp_loss(&mlp, &x, &y);
        let template = mlp.clone();
        let mut params = mlp.params_mut();
        let gap = fd_gap(&mut params, &analytic, |p| {
            let mut m = template.clone();
            for (dst, src) in m.params_mut().into_iter().zip(p) {
                *dst = (**src).clone();
            }
            mlp_loss(&m, &x, &y).0
        });
        prop_assert!(gap < 1e-5, "relative gap {gap:e}");
    }

    #[test]
    fn lstm_gradient_matches_finite_differences(
        hidden in 2usize..6,
        layers in 1usize..3,
        input in 1usize..4,
        output in 1usize..4,
        steps in 1usize..5,
        seed in any::<u64>(),
    ) {
        let mut lstm = LstmParams::new(input, hidden, layers, output, 0.0, seed).unwrap();
        let xs: Vec<Tensor> = (0..steps).map(|t| random_tensor(2, input, seed ^ (t as u64 + 10))).collect();
        let y = Rc::new(random_tensor(2, output, seed ^ 3));
        let (_, analytic) = lstm_loss(&lstm, &xs, &y);
        let template = lstm.clone();
        let mut params = lstm.params_mut();
        let gap = fd_gap(&mut params, &analytic, |p| {
            let mut m = template.clone();
            for (dst, src) in m.params_mut().into_iter().zip(p) {
                *dst = (**src).clone();
            }
            lstm_loss(&m, &xs, &y).0
        });
        prop_assert!(gap < 1e-5, "relative gap {gap:e}");
    }

    #[test]
    fn two_step_rollout_gradient_matches_finite_differences(seed in any::<u64>(), d_u in 1usize..3, points in 1usize..4) {
        let d_s = 2;
        let mut f = MlpParams::new(&[d_s + d_u, 6, 6, d_s], seed).unwrap();
        let mut r = MlpParams::new(&[d_s + 2, 8, 3], seed ^ 5).unwrap();
        randomize(f.params_mut(), seed);
        randomize(r.params_mut(), seed ^ 5);
        let u = random_tensor(1, d_u, seed ^ 6);
        let xi = random_tensor(2 * points, 2, seed ^ 7);
        let y = Rc::new(random_tensor(2 * points, 3, seed ^ 8));
        let dt = 0.3;
        let (_, analytic) = rollout_loss(&f, &r, &u, &xi, &y, dt);
        let (tf, tr) = (f.clone(), r.clone());
        let mut params = f.params_mut();
        params.extend(r.params_mut());
        let gap = fd_gap(&mut params, &analytic, |p| {
            let (mut f2, mut r2) = (tf.clone(), tr.clone());
            for (dst, src) in f2.params_mut().into_iter().chain(r2.params_mut()).zip(p) {
                *dst = (**src).clone();
            }
            rollout_loss(&f2, &r2, &u, &xi, &y, dt).0
        });
        prop_assert!(gap < 1e-4, "relative gap {gap:e}");
    }
}
