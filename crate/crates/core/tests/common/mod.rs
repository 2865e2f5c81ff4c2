//! Independent reference implementations used by the integration tests.
#![allow(dead_code, clippy::needless_range_loop, clippy::manual_clamp)]

use std::path::PathBuf;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedsplit::envs::{EnvConfig, OBS_DIM};
use fedsplit::federation::crypto::encode_delta;
use fedsplit::federation::{FederationSession, InProcessBus, SharedKey};
use fedsplit::nn::{init_model, split_topology, Activation, Matrix, ParamTensors, SplitModel};

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn random_model(seed: u64) -> SplitModel {
    init_model("A", seed, &split_topology("A", OBS_DIM, 2)).unwrap()
}

/// Straight triple loop over the weight matrices, no shared code with the
/// library's forward pass.
pub fn naive_forward(model: &SplitModel, input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    for layer in model.layers() {
        let (rows, cols) = layer.weights.shape();
        let mut y = vec![0.0; cols];
        for j in 0..cols {
            let mut z = layer.bias[j];
            for i in 0..rows {
                z += x[i] * layer.weights.get(i, j);
            }
            y[j] = match layer.activation {
                Activation::Relu => z.max(0.0),
                Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
                Activation::None => z,
            };
        }
        x = y;
    }
    x
}

pub struct FdReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Partials smaller than this are compared in absolute terms. Central
/// differences carry roughly `eps * |L| / h` of rounding noise, about 1e-11 at
/// `h = 1e-5`, which dominates the relative error of near-zero partials.
pub const FD_FLOOR: f64 = 1e-6;

/// Compares every analytic partial derivative of `sum_k c_k * y_k` with a
/// central finite difference.
pub fn finite_difference_check(seed: u64, h: f64) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF1D1);
    let model = random_model(seed);
    let input: Vec<f64> = (0..OBS_DIM).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let c: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = |m: &SplitModel| -> f64 {
        m.predict(&input)
            .unwrap()
            .iter()
            .zip(&c)
            .map(|(y, c)| y * c)
            .sum()
    };
    let (_, tape) = model.forward(&input).unwrap();
    let grads = model.backward(&tape, &c).unwrap();

    let mut report = FdReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    let ids: Vec<String> = model.layers().iter().map(|l| l.layer_id.clone()).collect();
    for (li, id) in ids.iter().enumerate() {
        let g = &grads.layers[id];
        let layer = &model.layers()[li];
        let n_w = layer.weights.as_slice().len();
        for k in 0..n_w + layer.bias.len() {
            let perturbed = |delta: f64| {
                let mut m = model.clone();
                let l = m.layers_mut().nth(li).unwrap();
                if k < n_w {
                    l.weights.as_mut_slice()[k] += delta;
                } else {
                    l.bias[k - n_w] += delta;
                }
                loss(&m)
            };
            let numeric = (perturbed(h) - perturbed(-h)) / (2.0 * h);
            let analytic = if k < n_w {
                g.weights.as_slice()[k]
            } else {
                g.bias[k - n_w]
            };
            let denom = analytic.abs().max(numeric.abs()).max(FD_FLOOR);
            let rel = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst =
                    format!("layer {id} param {k}: analytic {analytic} numeric {numeric}");
            }
        }
    }
    report
}

/// Cart-pole step obtained by solving the 2x2 equations of motion
/// `[[M+m, m l cos], [cos, 4l/3]] [xacc, thacc] = [F + m l thdot^2 sin, g sin]`
/// with Cramer's rule, then one explicit Euler step.
pub fn cartpole_oracle(cfg: &EnvConfig, s: [f64; 4], action: usize) -> [f64; 4] {
    let [x, xd, th, thd] = s;
    let f = if action == 1 {
        cfg.force_mag
    } else {
        -cfg.force_mag
    };
    let (m_c, m_p, l, g) = (
        cfg.cart_mass,
        cfg.pole_mass,
        cfg.pole_half_length,
        cfg.gravity,
    );
    let a11 = m_c + m_p;
    let a12 = m_p * l * th.cos();
    let a21 = th.cos();
    let a22 = 4.0 * l / 3.0;
    let b1 = f + m_p * l * thd * thd * th.sin();
    let b2 = g * th.sin();
    let det = a11 * a22 - a12 * a21;
    let xacc = (b1 * a22 - a12 * b2) / det;
    let thacc = (a11 * b2 - a21 * b1) / det;
    let tau = 0.02;
    [
        x + tau * xd,
        xd + tau * xacc,
        th + tau * thd,
        thd + tau * thacc,
    ]
}

/// Returns `(position, velocity, reward, goal)`.
pub fn mountain_car_oracle(p: f64, v: f64, action: usize) -> (f64, f64, f64, bool) {
    let push = if action == 0 { -0.001 } else { 0.001 };
    let mut v = v + push + (3.0 * p).cos() * (-0.0025);
    v = v.clamp(-0.07, 0.07);
    let mut p = p + v;
    if p < -1.2 {
        p = -1.2;
    }
    if p > 0.6 {
        p = 0.6;
    }
    if p == -1.2 && v < 0.0 {
        v = 0.0;
    }
    let goal = p >= 0.5;
    (p, v, if goal { 1.0 } else { 0.0 }, goal)
}

/// Least-squares coefficients from the normal equations solved in exact
/// rational arithmetic, rounded to f64 only at the end.
pub fn exact_normal_equations(points: &[(f64, f64)], degree: usize) -> Vec<f64> {
    let m = degree + 1;
    let rat = |v: f64| BigRational::from_float(v).unwrap();
    let xs: Vec<BigRational> = points.iter().map(|p| rat(p.0)).collect();
    let ys: Vec<BigRational> = points.iter().map(|p| rat(p.1)).collect();
    let powers: Vec<Vec<BigRational>> = xs
        .iter()
        .map(|x| {
            let mut out = Vec::with_capacity(2 * m);
            let mut p = BigRational::from_integer(BigInt::from(1));
            for _ in 0..2 * m - 1 {
                out.push(p.clone());
                p *= x;
            }
            out
        })
        .collect();
    let mut a = vec![vec![BigRational::zero(); m + 1]; m];
    for (i, row) in a.iter_mut().enumerate() {
        for j in 0..m {
            row[j] = powers.iter().map(|p| p[i + j].clone()).sum();
        }
        row[m] = powers.iter().zip(&ys).map(|(p, y)| &p[i] * y).sum();
    }
    for col in 0..m {
        let pivot = (col..m)
            .find(|&r| !a[r][col].is_zero())
            .expect("singular system");
        a.swap(col, pivot);
        for r in 0..m {
            if r != col && !a[r][col].is_zero() {
                let f = &a[r][col] / &a[col][col];
                for c in col..=m {
                    let v = &a[col][c] * &f;
                    a[r][c] -= v;
                }
            }
        }
    }
    (0..m)
        .map(|i| (&a[i][m] / &a[i][i]).to_f64().unwrap())
        .collect()
}

pub fn random_fit_instance(seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(8..60);
    let center: f64 = rng.gen_range(-5.0..5.0);
    let spread: f64 = rng.gen_range(0.5..3.0);
    (0..n)
        .map(|_| {
            let x = center + spread * rng.gen_range(-1.0..1.0);
            (x, rng.gen_range(-100.0..100.0))
        })
        .collect()
}

pub fn max_relative_error(got: &[f64], want: &[f64]) -> f64 {
    got.iter()
        .zip(want)
        .map(|(g, w)| (g - w).abs() / w.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// Everything the forwarder sees, in both directions, is free of the
/// plaintext delta bytes.
pub fn forwarder_never_sees_plaintext(rounds: u64) -> Result<(), String> {
    let bus = InProcessBus::recording(2);
    let key = SharedKey::generate();
    let mut a = FederationSession::join("A", key.clone(), Box::new(bus.endpoint())).unwrap();
    let mut b = FederationSession::join("B", key.clone(), Box::new(bus.endpoint())).unwrap();
    let mut model = init_model("B", 1, &split_topology("B", 4, 2)).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rounds);
    let mut plaintexts = Vec::new();
    for epoch in 0..rounds as u32 {
        let delta = ParamTensors {
            weights: Matrix::from_vec(32, 16, (0..512).map(|_| rng.gen_range(-0.1..0.1)).collect())
                .unwrap(),
            bias: (0..16).map(|_| rng.gen_range(-0.1..0.1)).collect(),
        };
        a.broadcast(epoch, "2", &delta).unwrap();
        b.receive_and_apply(&mut model, 1).unwrap();
        plaintexts.push(encode_delta(&delta));
    }
    let observed = bus.observed();
    for pt in &plaintexts {
        // Any 16-byte window of the plaintext is enough to identify it.
        for window in pt.chunks(16).filter(|w| w.len() == 16) {
            if observed.iter().any(|o| o.windows(16).any(|x| x == window)) {
                return Err("plaintext fragment observed by forwarder".into());
            }
        }
    }
    Ok(())
}
