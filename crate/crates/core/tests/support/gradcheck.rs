//! Central-difference gradient checks for every differentiable tape op.
//!
//! Each check evaluates an independent `f64` reference of the same function,
//! takes central differences (h = 1e-3) on it and compares against the tape's
//! analytic gradient.

use cpguard::autodiff::{Reduce, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
pub const SEEDS: u64 = 20;
/// Tolerance for single elementwise ops.
pub const ELEMENTWISE_TOL: f64 = 1e-4;
/// Tolerance for everything else.
pub const TOL: f64 = 1e-3;

/// Worst relative error of one op family over `seeds` random draws.
#[derive(Clone, Debug)]
pub struct OpCheck {
    pub name: String,
    pub worst: f64,
    pub tol: f64,
    pub seeds: u64,
}

impl OpCheck {
    fn new(name: impl Into<String>, tol: f64) -> Self {
        Self { name: name.into(), worst: 0.0, tol, seeds: 0 }
    }

    fn record(&mut self, err: f64) {
        self.worst = self.worst.max(err);
        self.seeds += 1;
    }

    pub fn passed(&self) -> bool {
        self.worst <= self.tol && self.seeds >= SEEDS
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values bounded away from zero (kinks of relu/sign/clamp sit there).
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let m: f32 = rng.random_range(0.1..2.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect()
}

/// Compares tape gradients of `build` against central differences of
/// `reference` for every element of every input; returns the worst error.
pub fn check<B, R>(inputs: &[Tensor], build: B, reference: R) -> f64
where
    B: Fn(&mut Tape, &[Var]) -> Var,
    R: Fn(&[Vec<f64>]) -> f64,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();

    let base: Vec<Vec<f64>> = inputs.iter().map(|t| t.data().iter().map(|&v| v as f64).collect()).collect();
    let forward = reference(&base);
    if (forward - tape.value(loss).item() as f64).abs() > 1e-3 * forward.abs().max(1.0) {
        return f64::INFINITY;
    }

    let mut worst = 0.0f64;
    for (i, var) in vars.iter().enumerate() {
        let g = grads.get(*var).expect("param gradient");
        for j in 0..base[i].len() {
            let mut plus = base.clone();
            plus[i][j] += H;
            let mut minus = base.clone();
            minus[i][j] -= H;
            let numeric = (reference(&plus) - reference(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(g.data()[j] as f64, numeric));
        }
    }
    worst
}

pub fn ref_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    c
}

/// Direct (loop) cross-correlation, independent of the im2col path.
#[allow(clippy::too_many_arguments)]
pub fn ref_conv(x: &[f64], k: &[f64], ci: usize, h: usize, w: usize, co: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Vec<f64> {
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; co * ho * wo];
    for o in 0..co {
        for y in 0..ho {
            for xo in 0..wo {
                let mut acc = 0.0;
                for c in 0..ci {
                    for a in 0..kh {
                        for b in 0..kw {
                            let iy = (y * stride + a) as isize - pad as isize;
                            let ix = (xo * stride + b) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc += x[(c * h + iy as usize) * w + ix as usize] * k[((o * ci + c) * kh + a) * kw + b];
                            }
                        }
                    }
                }
                out[(o * ho + y) * wo + xo] = acc;
            }
        }
    }
    out
}

/// Fixed non-uniform weights so sums do not hide per-element errors.
fn weights(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i as f64) * 0.731).sin() + 0.3).collect()
}

fn weighted_sum(tape: &mut Tape, x: Var) -> Var {
    let n = tape.value(x).numel();
    let shape = tape.value(x).shape().to_vec();
    let w = Tensor::new(&shape, weights(n).iter().map(|&v| v as f32).collect()).unwrap();
    let wv = tape.constant(w);
    let p = tape.mul(x, wv).unwrap();
    tape.sum(p).unwrap()
}

fn ref_weighted_sum(x: &[f64]) -> f64 {
    x.iter().zip(weights(x.len())).map(|(a, b)| a * b).sum()
}

pub fn ref_ce(logits: &[f64], labels: &[usize], c: usize) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for i in 0..n {
        let row = &logits[i * c..(i + 1) * c];
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total += -(row[labels[i]].exp() / z).ln();
    }
    total / n as f64
}

pub fn unary() -> Vec<OpCheck> {
    type Ref = fn(f64) -> f64;
    let cases: Vec<(&str, Ref)> = vec![
        ("neg", |x| -x),
        ("exp", f64::exp),
        ("log", f64::ln),
        ("relu", |x| x.max(0.0)),
        ("sigmoid", |x| 1.0 / (1.0 + (-x).exp())),
        ("clamp", |x| x.clamp(-1.0, 1.0)),
    ];
    let mut out = Vec::new();
    for (name, f) in cases {
        let mut c = OpCheck::new(name, ELEMENTWISE_TOL);
        for seed in 0..SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = match name {
                "log" => random_vec(&mut rng, 6, 0.2, 3.0),
                // keep clear of the ±1 kinks
                "clamp" => away_from_zero(&mut rng, 6).into_iter().map(|v| if (v.abs() - 1.0).abs() < 0.05 { v * 0.5 } else { v }).collect(),
                _ => away_from_zero(&mut rng, 6),
            };
            c.record(check(
                &[Tensor::vector(&data)],
                |t, v| {
                    let y = match name {
                        "neg" => t.neg(v[0]),
                        "exp" => t.exp(v[0]),
                        "log" => t.log(v[0]),
                        "relu" => t.relu(v[0]),
                        "sigmoid" => t.sigmoid(v[0]),
                        _ => t.clamp(v[0], -1.0, 1.0),
                    }
                    .unwrap();
                    weighted_sum(t, y)
                },
                |v| ref_weighted_sum(&v[0].iter().map(|&x| f(x)).collect::<Vec<_>>()),
            ));
        }
        out.push(c);
    }
    out
}

pub fn binary() -> Vec<OpCheck> {
    let kinds = ["add", "sub", "mul", "div", "scalar_mul", "scalar_div"];
    let mut out: Vec<OpCheck> = kinds.iter().map(|k| OpCheck::new(*k, ELEMENTWISE_TOL)).collect();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let a = Tensor::vector(&away_from_zero(&mut rng, 5));
        let b = Tensor::vector(&away_from_zero(&mut rng, 5));
        let s = Tensor::scalar(rng.random_range(0.5..2.0));
        for (slot, kind) in kinds.iter().enumerate() {
            let inputs = if kind.starts_with("scalar") { vec![a.clone(), s.clone()] } else { vec![a.clone(), b.clone()] };
            out[slot].record(check(
                &inputs,
                |t, v| {
                    let y = match *kind {
                        "add" => t.add(v[0], v[1]),
                        "sub" => t.sub(v[0], v[1]),
                        "mul" | "scalar_mul" => t.mul(v[0], v[1]),
                        _ => t.div(v[0], v[1]),
                    }
                    .unwrap();
                    weighted_sum(t, y)
                },
                |v| {
                    let y: Vec<f64> = (0..v[0].len())
                        .map(|i| {
                            let x = v[0][i];
                            let z = if v[1].len() == 1 { v[1][0] } else { v[1][i] };
                            match *kind {
                                "add" => x + z,
                                "sub" => x - z,
                                "mul" | "scalar_mul" => x * z,
                                _ => x / z,
                            }
                        })
                        .collect();
                    ref_weighted_sum(&y)
                },
            ));
        }
    }
    out
}

pub fn matmul() -> OpCheck {
    let mut c = OpCheck::new("matmul", ELEMENTWISE_TOL);
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let a = Tensor::new(&[3, 3], random_vec(&mut rng, 9, -1.0, 1.0)).unwrap();
        let b = Tensor::new(&[3, 3], random_vec(&mut rng, 9, -1.0, 1.0)).unwrap();
        c.record(check(
            &[a, b],
            |t, v| {
                let p = t.matmul(v[0], v[1]).unwrap();
                t.sum(p).unwrap()
            },
            |v| ref_matmul(&v[0], &v[1], 3, 3, 3).iter().sum(),
        ));
    }
    c
}

pub fn conv2d() -> OpCheck {
    let configs = [(1, 0), (2, 1), (1, 1)];
    let mut c = OpCheck::new("conv2d", TOL);
    for seed in 0..SEEDS {
        let (stride, pad) = configs[seed as usize % configs.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let x = Tensor::new(&[2, 4, 4], random_vec(&mut rng, 32, -1.0, 1.0)).unwrap();
        let k = Tensor::new(&[3, 2, 2, 2], random_vec(&mut rng, 24, -1.0, 1.0)).unwrap();
        c.record(check(
            &[x, k],
            |t, v| {
                let y = t.conv2d(v[0], v[1], stride, pad).unwrap();
                weighted_sum(t, y)
            },
            |v| ref_weighted_sum(&ref_conv(&v[0], &v[1], 2, 4, 4, 3, 2, 2, stride, pad)),
        ));
    }
    c
}

pub fn reductions() -> Vec<OpCheck> {
    let kinds = [Reduce::Sum, Reduce::Mean, Reduce::Max];
    let mut out: Vec<OpCheck> = kinds.iter().map(|k| OpCheck::new(format!("{k:?}").to_lowercase(), TOL)).collect();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let x = Tensor::new(&[2, 3, 4], random_vec(&mut rng, 24, -2.0, 2.0)).unwrap();
        for (slot, &kind) in kinds.iter().enumerate() {
            let mut worst = 0.0f64;
            for axis in 0..3 {
                worst = worst.max(check(
                    std::slice::from_ref(&x),
                    |t, v| {
                        let r = t.reduce(kind, v[0], Some(axis)).unwrap();
                        weighted_sum(t, r)
                    },
                    |v| {
                        let dims = [2usize, 3, 4];
                        let out_dims: Vec<usize> = (0..3).filter(|&d| d != axis).map(|d| dims[d]).collect();
                        let mut out = Vec::new();
                        for a in 0..out_dims[0] {
                            for b in 0..out_dims[1] {
                                let vals: Vec<f64> = (0..dims[axis])
                                    .map(|j| {
                                        let mut idx = [0usize; 3];
                                        let mut free = [a, b].into_iter();
                                        for (d, slot) in idx.iter_mut().enumerate() {
                                            *slot = if d == axis { j } else { free.next().unwrap() };
                                        }
                                        v[0][(idx[0] * 3 + idx[1]) * 4 + idx[2]]
                                    })
                                    .collect();
                                out.push(match kind {
                                    Reduce::Sum => vals.iter().sum(),
                                    Reduce::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
                                    Reduce::Max => vals.iter().cloned().fold(f64::MIN, f64::max),
                                });
                            }
                        }
                        ref_weighted_sum(&out)
                    },
                ));
            }
            out[slot].record(worst);
        }
    }
    out
}

pub fn cross_entropy() -> OpCheck {
    let mut c = OpCheck::new("softmax_cross_entropy", ELEMENTWISE_TOL);
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let logits = Tensor::new(&[3, 4], random_vec(&mut rng, 12, -2.0, 2.0)).unwrap();
        let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();
        c.record(check(&[logits], |t, v| t.softmax_cross_entropy(v[0], &labels).unwrap(), |v| ref_ce(&v[0], &labels, 4)));
    }
    c
}

pub fn weighted_cross_entropy() -> OpCheck {
    let mut c = OpCheck::new("weighted_cross_entropy", ELEMENTWISE_TOL);
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(550 + seed);
        let logits = Tensor::new(&[4, 2], random_vec(&mut rng, 8, -2.0, 2.0)).unwrap();
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..2)).collect();
        let w: Vec<f32> = (0..4).map(|_| rng.random_range(0.5..3.0)).collect();
        c.record(check(
            &[logits],
            |t, v| t.weighted_cross_entropy(v[0], &labels, &w).unwrap(),
            |v| {
                let mut num = 0.0;
                for i in 0..4 {
                    num += w[i] as f64 * ref_ce(&v[0][i * 2..i * 2 + 2], &labels[i..i + 1], 2);
                }
                num / w.iter().map(|&x| x as f64).sum::<f64>()
            },
        ));
    }
    c
}

pub fn softmax_gather() -> OpCheck {
    let mut c = OpCheck::new("softmax_rows+gather_cols", TOL);
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let x = Tensor::new(&[5, 3], random_vec(&mut rng, 15, -2.0, 2.0)).unwrap();
        let idx: Vec<usize> = (0..5).map(|_| rng.random_range(0..3)).collect();
        c.record(check(
            &[x],
            |t, v| {
                let p = t.softmax_rows(v[0]).unwrap();
                let g = t.gather_cols(p, &idx).unwrap();
                weighted_sum(t, g)
            },
            |v| {
                let picked: Vec<f64> = (0..5)
                    .map(|i| {
                        let row = &v[0][i * 3..i * 3 + 3];
                        let z: f64 = row.iter().map(|a| a.exp()).sum();
                        row[idx[i]].exp() / z
                    })
                    .collect();
                ref_weighted_sum(&picked)
            },
        ));
    }
    c
}

pub fn cosine() -> OpCheck {
    let mut c = OpCheck::new("cosine_similarity", TOL);
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let u = Tensor::vector(&random_vec(&mut rng, 6, -1.0, 1.0));
        let v = Tensor::vector(&random_vec(&mut rng, 6, -1.0, 1.0));
        c.record(check(
            &[u, v],
            |t, x| t.cosine_similarity(x[0], x[1]).unwrap(),
            |x| {
                let dot: f64 = x[0].iter().zip(&x[1]).map(|(a, b)| a * b).sum();
                let nu = x[0].iter().map(|a| a * a).sum::<f64>().sqrt();
                let nv = x[1].iter().map(|a| a * a).sum::<f64>().sqrt();
                dot / (nu * nv + 1e-8)
            },
        ));
    }
    c
}

/// bias_channels, reshape, transpose, bias_rows, slice_cols, scale, stack
/// and logsumexp in one chain.
pub fn structural() -> OpCheck {
    let mut c = OpCheck::new("structural+logsumexp", TOL);
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let x = Tensor::new(&[2, 3, 2], random_vec(&mut rng, 12, -1.0, 1.0)).unwrap();
        let b = Tensor::vector(&random_vec(&mut rng, 2, -1.0, 1.0));
        let rb = Tensor::vector(&random_vec(&mut rng, 2, -1.0, 1.0));
        c.record(check(
            &[x, b, rb],
            |t, v| {
                let y = t.bias_channels(v[0], v[1]).unwrap(); // 2x3x2
                let y = t.reshape(y, &[2, 6]).unwrap();
                let y = t.transpose(y).unwrap(); // 6x2
                let y = t.bias_rows(y, v[2]).unwrap();
                let y = t.slice_cols(y, 1, 2).unwrap(); // 6x1
                let y = t.scale(y, -1.5).unwrap();
                let parts: Vec<Var> = (0..3).map(|_| y).collect();
                let s = t.stack(&parts).unwrap();
                let l = t.logsumexp(s).unwrap();
                let w = weighted_sum(t, s);
                t.add(l, w).unwrap()
            },
            |v| {
                // y[j] for transposed row j = x.reshape(2,6)[1][j] + b[channel] + rb[1]
                let mut col = Vec::new();
                for j in 0..6 {
                    let flat = 6 + j;
                    let ch = flat / 6;
                    col.push(-1.5 * (v[0][flat] + v[1][ch] + v[2][1]));
                }
                let stacked: Vec<f64> = (0..3).flat_map(|_| col.iter().copied()).collect();
                let mx = stacked.iter().cloned().fold(f64::MIN, f64::max);
                let lse = mx + stacked.iter().map(|a| (a - mx).exp()).sum::<f64>().ln();
                lse + ref_weighted_sum(&stacked)
            },
        ));
    }
    c
}

pub fn contrastive_term() -> OpCheck {
    let mut c = OpCheck::new("contrastive_term", TOL);
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(870 + seed);
        let p = Tensor::vector(&random_vec(&mut rng, 5, -1.0, 1.0));
        let s = Tensor::scalar(rng.random_range(-1.0..1.0));
        let a = [10.0f32, 1.0, 0.5][seed as usize % 3];
        c.record(check(
            &[p, s],
            |t, v| t.contrastive_term(v[0], v[1], a).unwrap(),
            |v| {
                let a = a as f64;
                v[0].iter().map(|x| (a * x).exp()).sum::<f64>().ln() - a * v[1][0]
            },
        ));
    }
    c
}

pub fn shift2d() -> OpCheck {
    let mut c = OpCheck::new("shift2d", ELEMENTWISE_TOL);
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(850 + seed);
        let x = Tensor::new(&[2, 4, 5], random_vec(&mut rng, 40, -1.0, 1.0)).unwrap();
        let (dr, dc) = (rng.random_range(-2..=2i32) as isize, rng.random_range(-2..=2i32) as isize);
        c.record(check(
            &[x],
            |t, v| {
                let y = t.shift2d(v[0], dr, dc).unwrap();
                weighted_sum(t, y)
            },
            |v| {
                let mut out = vec![0.0; 40];
                for ch in 0..2 {
                    for r in 0..4isize {
                        for col in 0..5isize {
                            let (sr, sc) = (r - dr, col - dc);
                            if (0..4).contains(&sr) && (0..5).contains(&sc) {
                                out[(ch * 4 + r as usize) * 5 + col as usize] = v[0][(ch * 4 + sr as usize) * 5 + sc as usize];
                            }
                        }
                    }
                }
                ref_weighted_sum(&out)
            },
        ));
    }
    c
}

pub fn smooth_l1() -> OpCheck {
    let mut c = OpCheck::new("smooth_l1", TOL);
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let pred = Tensor::new(&[4, 3], random_vec(&mut rng, 12, -3.0, 3.0)).unwrap();
        let target = Tensor::new(&[4, 3], random_vec(&mut rng, 12, -3.0, 3.0)).unwrap();
        // keep |pred-target| off the |d| = 1 seam
        let pred = Tensor::new(
            &[4, 3],
            pred.data()
                .iter()
                .zip(target.data())
                .map(|(&p, &t)| if ((p - t).abs() - 1.0).abs() < 0.05 { p + 0.2 } else { p })
                .collect(),
        )
        .unwrap();
        let mask = [true, false, true, true];
        c.record(check(
            &[pred],
            |t, v| t.smooth_l1(v[0], &target, &mask).unwrap(),
            |v| {
                let mut total = 0.0;
                for i in (0..4).filter(|&i| mask[i]) {
                    for j in 0..3 {
                        let d = v[0][i * 3 + j] - target.data()[i * 3 + j] as f64;
                        total += if d.abs() < 1.0 { 0.5 * d * d } else { d.abs() - 0.5 };
                    }
                }
                total / 3.0
            },
        ));
    }
    c
}

/// Three-layer perceptron: x(2×4) → 5 → relu → 3 → sigmoid → 2 → cross-entropy.
pub fn mlp_inputs(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    vec![
        Tensor::new(&[2, 4], random_vec(rng, 8, -1.0, 1.0)).unwrap(),
        Tensor::new(&[4, 5], random_vec(rng, 20, -1.0, 1.0)).unwrap(),
        Tensor::vector(&random_vec(rng, 5, -0.5, 0.5)),
        Tensor::new(&[5, 3], random_vec(rng, 15, -1.0, 1.0)).unwrap(),
        Tensor::vector(&random_vec(rng, 3, -0.5, 0.5)),
        Tensor::new(&[3, 2], random_vec(rng, 6, -1.0, 1.0)).unwrap(),
    ]
}

pub fn mlp_build(t: &mut Tape, v: &[Var]) -> Var {
    let h = t.matmul(v[0], v[1]).unwrap();
    let h = t.bias_rows(h, v[2]).unwrap();
    let h = t.relu(h).unwrap();
    let h = t.matmul(h, v[3]).unwrap();
    let h = t.bias_rows(h, v[4]).unwrap();
    let h = t.sigmoid(h).unwrap();
    let o = t.matmul(h, v[5]).unwrap();
    t.softmax_cross_entropy(o, &[1, 0]).unwrap()
}

fn mlp_reference(v: &[Vec<f64>]) -> f64 {
    let mut h = ref_matmul(&v[0], &v[1], 2, 4, 5);
    for i in 0..2 {
        for j in 0..5 {
            h[i * 5 + j] = (h[i * 5 + j] + v[2][j]).max(0.0);
        }
    }
    let mut h2 = ref_matmul(&h, &v[3], 2, 5, 3);
    for i in 0..2 {
        for j in 0..3 {
            h2[i * 3 + j] = 1.0 / (1.0 + (-(h2[i * 3 + j] + v[4][j])).exp());
        }
    }
    let o = ref_matmul(&h2, &v[5], 2, 3, 2);
    ref_ce(&o, &[1, 0], 2)
}

fn f64s(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&x| x as f64).collect()
}

pub fn three_layer_perceptron() -> OpCheck {
    let mut c = OpCheck::new("3-layer perceptron", TOL);
    for seed in 0..200 {
        if c.seeds >= SEEDS {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let inputs = mlp_inputs(&mut rng);
        // Skip draws where a hidden pre-activation sits on the relu kink.
        let h = ref_matmul(&f64s(&inputs[0]), &f64s(&inputs[1]), 2, 4, 5);
        if (0..10).any(|i| (h[i] + inputs[2].data()[i % 5] as f64).abs() < 5e-3) {
            continue;
        }
        c.record(check(&inputs, mlp_build, mlp_reference));
    }
    c
}

/// conv → relu → conv → exp → mean: checks the chain, not only the parts.
pub fn composite_conv() -> OpCheck {
    let mut c = OpCheck::new("3-layer conv composite", TOL);
    for seed in 0..200 {
        if c.seeds >= SEEDS {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1100 + seed);
        let x = Tensor::new(&[1, 4, 4], random_vec(&mut rng, 16, -1.0, 1.0)).unwrap();
        let k1 = Tensor::new(&[2, 1, 2, 2], random_vec(&mut rng, 8, -1.0, 1.0)).unwrap();
        let k2 = Tensor::new(&[1, 2, 2, 2], random_vec(&mut rng, 8, -1.0, 1.0)).unwrap();
        let pre = ref_conv(&f64s(&x), &f64s(&k1), 1, 4, 4, 2, 2, 2, 2, 0);
        if pre.iter().any(|v| v.abs() < 5e-3) {
            continue;
        }
        c.record(check(
            &[x, k1, k2],
            |t, v| {
                let h = t.conv2d(v[0], v[1], 2, 0).unwrap();
                let h = t.relu(h).unwrap();
                let o = t.conv2d(h, v[2], 1, 0).unwrap();
                let o = t.exp(o).unwrap();
                t.mean(o).unwrap()
            },
            |v| {
                let h: Vec<f64> = ref_conv(&v[0], &v[1], 1, 4, 4, 2, 2, 2, 2, 0).into_iter().map(|a| a.max(0.0)).collect();
                let o = ref_conv(&h, &v[2], 2, 2, 2, 1, 2, 2, 1, 0);
                o.iter().map(|a| a.exp()).sum::<f64>() / o.len() as f64
            },
        ));
    }
    c
}

/// Every op family plus the composites.
pub fn all() -> Vec<OpCheck> {
    let mut out = unary();
    out.extend(binary());
    out.push(matmul());
    out.push(conv2d());
    out.extend(reductions());
    out.push(cross_entropy());
    out.push(weighted_cross_entropy());
    out.push(softmax_gather());
    out.push(cosine());
    out.push(structural());
    out.push(shift2d());
    out.push(contrastive_term());
    out.push(smooth_l1());
    out.push(three_layer_perceptron());
    out.push(composite_conv());
    out
}
