//! Brute-force scalar reference for the dual-centered contrastive loss.

use cpguard::guard::{DenominatorMode, SelectorMode};

pub fn cos(u: &[f64], v: &[f64]) -> f64 {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu < 1e-8 || nv < 1e-8 {
        return 0.0;
    }
    u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (nu * nv + 1e-8)
}

pub fn centered(v: &[Vec<f64>], labels: &[bool]) -> Vec<Vec<f64>> {
    let d = v[0].len();
    let mut out = Vec::new();
    for (i, row) in v.iter().enumerate() {
        let mut c = vec![0.0; d];
        let mut k = 0.0;
        for (j, other) in v.iter().enumerate() {
            if labels[j] == labels[i] {
                k += 1.0;
                for t in 0..d {
                    c[t] += other[t];
                }
            }
        }
        out.push((0..d).map(|t| row[t] - c[t] / k).collect());
    }
    out
}

pub fn pair(c: &[Vec<f64>], labels: &[bool], m: usize, n: usize, tau: f64, den: DenominatorMode) -> f64 {
    let mut z = 0.0;
    let mut any = false;
    for o in 0..c.len() {
        if o == m {
            continue;
        }
        let indicator = labels[o] == labels[m];
        if den == DenominatorMode::AsWritten && !indicator {
            continue;
        }
        any = true;
        z += (cos(&c[m], &c[o]) / tau).exp();
    }
    if !any {
        return 0.0;
    }
    -((cos(&c[m], &c[n]) / tau).exp() / z).ln()
}

pub fn loss(v: &[Vec<f64>], labels: &[bool], tau: f64, den: DenominatorMode, sel: SelectorMode) -> f64 {
    let c = centered(v, labels);
    let n = v.len();
    let mut total = 0.0;
    for m in 0..n {
        for o in m + 1..n {
            let indicator = if labels[m] == labels[o] { 1.0 } else { 0.0 };
            let weight = match sel {
                SelectorMode::Text => indicator,
                SelectorMode::AsWritten => 1.0 - indicator,
            };
            if weight != 0.0 {
                total += weight * pair(&c, labels, m, o, tau, den);
            }
        }
    }
    total / (n * (n - 1) / 2) as f64
}

pub const MODES: [(DenominatorMode, SelectorMode); 4] = [
    (DenominatorMode::Standard, SelectorMode::Text),
    (DenominatorMode::Standard, SelectorMode::AsWritten),
    (DenominatorMode::AsWritten, SelectorMode::Text),
    (DenominatorMode::AsWritten, SelectorMode::AsWritten),
];

/// Largest deviations of the tape implementation from the reference.
#[derive(Clone, Copy, Debug, Default)]
pub struct Deviation {
    /// |got − want| / max(1, |want|) over every ordered pair.
    pub pair: f64,
    /// |got − want| of the batch loss.
    pub loss: f64,
    pub batches: usize,
}

/// Compares `dcc_pair_loss` and `dcc_loss` with the reference on
/// `batches` random batches of 2..=8 embeddings, in every mode.
pub fn sweep(batches: usize, tau: f32, seed: u64) -> Deviation {
    use cpguard::autodiff::{Tape, Tensor};
    use cpguard::guard::{centered_rows, centers_on_tape, dcc_loss, dcc_pair_loss, DccParams, Similarities};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dev = Deviation { batches, ..Deviation::default() };
    for _ in 0..batches {
        let n = rng.random_range(2..=8);
        let d = 8;
        let v = Tensor::new(&[n, d], (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let rows64: Vec<Vec<f64>> = v.data().chunks(d).map(|r| r.iter().map(|&x| x as f64).collect()).collect();
        let c = centered(&rows64, &labels);
        for (den, sel) in MODES {
            let params = DccParams { tau, denominator: den, selector: sel };
            let mut tape = Tape::new();
            let x = tape.leaf(v.clone());
            let centers = centers_on_tape(&mut tape, x, &labels).unwrap();
            let rows = centered_rows(&mut tape, x, &labels, &centers).unwrap();
            if n >= 2 {
                let sims = Similarities::new(&mut tape, &rows).unwrap();
                for m in 0..n {
                    for o in (0..n).filter(|&o| o != m) {
                        let l = dcc_pair_loss(&mut tape, &sims, &labels, m, o, &params).unwrap();
                        let want = pair(&c, &labels, m, o, tau as f64, den);
                        let got = tape.value(l).item() as f64;
                        dev.pair = dev.pair.max((got - want).abs() / want.abs().max(1.0));
                    }
                }
            }
            let l = dcc_loss(&mut tape, &rows, &labels, &params).unwrap();
            let want = loss(&rows64, &labels, tau as f64, den, sel);
            dev.loss = dev.loss.max((tape.value(l).item() as f64 - want).abs());
        }
    }
    dev
}
