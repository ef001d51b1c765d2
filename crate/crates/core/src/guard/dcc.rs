use serde::{Deserialize, Serialize};

use crate::autodiff::{Reduce, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Which partners enter the softmax denominator of a pair term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorMode {
    /// Every other sample in the batch.
    #[default]
    Standard,
    /// Only same-label partners of the anchor.
    AsWritten,
}

/// Which pairs are averaged into the batch loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorMode {
    /// Same-label (positive) pairs.
    #[default]
    Text,
    /// Pairs weighted by `1 − 𝕀`, i.e. different-label pairs.
    AsWritten,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DccParams {
    pub tau: f32,
    pub denominator: DenominatorMode,
    pub selector: SelectorMode,
}

impl Default for DccParams {
    fn default() -> Self {
        Self { tau: 0.1, denominator: DenominatorMode::Standard, selector: SelectorMode::Text }
    }
}

/// Per-class mean embeddings. A class with no members has no center.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassCenters {
    pub benign: Option<Tensor>,
    pub malicious: Option<Tensor>,
    pub n_benign: usize,
    pub n_malicious: usize,
}

impl ClassCenters {
    pub fn get(&self, malicious: bool) -> Option<&Tensor> {
        if malicious {
            self.malicious.as_ref()
        } else {
            self.benign.as_ref()
        }
    }
}

/// Arithmetic mean of each class's embeddings (`true` = malicious).
pub fn compute_centers(embeddings: &[(Tensor, bool)]) -> Result<ClassCenters> {
    let d = embeddings.first().ok_or_else(|| Error::shape("centers of an empty batch"))?.0.numel();
    let mut sums = [vec![0.0f64; d], vec![0.0f64; d]];
    let mut counts = [0usize; 2];
    for (v, mal) in embeddings {
        if v.numel() != d {
            return Err(Error::shape(format!("embedding of length {} in a batch of {d}", v.numel())));
        }
        let k = *mal as usize;
        counts[k] += 1;
        sums[k].iter_mut().zip(v.data()).for_each(|(s, &x)| *s += x as f64);
    }
    let mean = |k: usize| -> Result<Option<Tensor>> {
        if counts[k] == 0 {
            return Ok(None);
        }
        Ok(Some(Tensor::new(&[d], sums[k].iter().map(|s| (s / counts[k] as f64) as f32).collect())?))
    };
    Ok(ClassCenters { benign: mean(0)?, malicious: mean(1)?, n_benign: counts[0], n_malicious: counts[1] })
}

/// Class centers of the rows of an N×D embedding value, kept on the tape
/// as 1×D values (`[benign, malicious]`).
pub fn centers_on_tape(tape: &mut Tape, v: Var, labels: &[bool]) -> Result<[Option<Var>; 2]> {
    let [n, _] = tape.value(v).dims2()?;
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for {n} embeddings", labels.len())));
    }
    let mut out = [None, None];
    for (k, slot) in out.iter_mut().enumerate() {
        let members = labels.iter().filter(|&&l| l as usize == k).count();
        if members == 0 {
            continue;
        }
        let mut select = vec![0.0f32; members * n];
        for (row, i) in labels.iter().enumerate().filter(|(_, &l)| l as usize == k).map(|(i, _)| i).enumerate() {
            select[row * n + i] = 1.0;
        }
        let select = tape.constant(Tensor::new(&[members, n], select)?);
        let rows = tape.matmul(select, v)?;
        let mean = tape.reduce(Reduce::Mean, rows, Some(0))?;
        let d = tape.value(mean).numel();
        *slot = Some(tape.reshape(mean, &[1, d])?);
    }
    Ok(out)
}

/// Center-shifted rows ĉ_x = V_x − c(label_x), each 1×D.
pub fn centered_rows(tape: &mut Tape, v: Var, labels: &[bool], centers: &[Option<Var>; 2]) -> Result<Vec<Var>> {
    let [n, _] = tape.value(v).dims2()?;
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for {n} embeddings", labels.len())));
    }
    let mut rows = Vec::with_capacity(n);
    for (i, &l) in labels.iter().enumerate() {
        let c = centers[l as usize].ok_or_else(|| {
            Error::domain(format!("no {} center for sample {i}", if l { "malicious" } else { "benign" }))
        })?;
        let mut e = vec![0.0f32; n];
        e[i] = 1.0;
        let e = tape.constant(Tensor::new(&[1, n], e)?);
        let row = tape.matmul(e, v)?;
        rows.push(tape.sub(row, c)?);
    }
    Ok(rows)
}

/// Pairwise cosine similarities between centered rows (symmetric).
pub struct Similarities {
    n: usize,
    vars: Vec<Option<Var>>,
}

impl Similarities {
    pub fn new(tape: &mut Tape, rows: &[Var]) -> Result<Self> {
        let n = rows.len();
        let mut vars = vec![None; n * n];
        for m in 0..n {
            for o in m + 1..n {
                let s = tape.cosine_similarity(rows[m], rows[o])?;
                vars[m * n + o] = Some(s);
                vars[o * n + m] = Some(s);
            }
        }
        Ok(Self { n, vars })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, m: usize, o: usize) -> Option<Var> {
        self.vars[m * self.n + o]
    }
}

/// ℓ(m, n) = −s_mn/τ + log Z_m. Returns a zero constant when Z_m has no
/// terms.
pub fn dcc_pair_loss(tape: &mut Tape, sims: &Similarities, labels: &[bool], m: usize, n: usize, params: &DccParams) -> Result<Var> {
    let size = sims.len();
    if size < 2 || labels.len() != size {
        return Err(Error::shape(format!("pair loss needs ≥2 samples with labels, got {size}/{}", labels.len())));
    }
    if m == n || m >= size || n >= size {
        return Err(Error::domain(format!("invalid pair ({m}, {n}) in a batch of {size}")));
    }
    if !(params.tau > 0.0) {
        return Err(Error::config("temperature must be positive"));
    }
    let partners: Vec<Var> = (0..size)
        .filter(|&o| o != m)
        .filter(|&o| params.denominator == DenominatorMode::Standard || labels[o] == labels[m])
        .map(|o| sims.get(m, o).expect("pair similarity"))
        .collect();
    if partners.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let z = tape.stack(&partners)?;
    let s = sims.get(m, n).expect("pair similarity");
    tape.contrastive_term(z, s, 1.0 / params.tau)
}

/// Selected pair terms over m < n, divided by C(N, 2).
pub fn dcc_loss(tape: &mut Tape, rows: &[Var], labels: &[bool], params: &DccParams) -> Result<Var> {
    let n = rows.len();
    if n < 2 || labels.len() != n {
        return Err(Error::shape(format!("DCC loss needs ≥2 samples with labels, got {n}/{}", labels.len())));
    }
    let sims = Similarities::new(tape, rows)?;
    let mut terms = Vec::new();
    for m in 0..n {
        for o in m + 1..n {
            let same = labels[m] == labels[o];
            let selected = match params.selector {
                SelectorMode::Text => same,
                SelectorMode::AsWritten => !same,
            };
            if selected {
                terms.push(dcc_pair_loss(tape, &sims, labels, m, o, params)?);
            }
        }
    }
    if terms.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let pairs = (n * (n - 1) / 2) as f32;
    let stacked = tape.stack(&terms)?;
    let total = tape.sum(stacked)?;
    tape.scale(total, 1.0 / pairs)
}

/// `CE + α·DCC`; `dcc = None` means the term is skipped.
pub fn mixed_loss(tape: &mut Tape, logits: Var, labels: &[bool], dcc: Option<Var>, alpha: f32) -> Result<Var> {
    if !(alpha >= 0.0) {
        return Err(Error::config("alpha must be non-negative"));
    }
    let classes: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let ce = tape.softmax_cross_entropy(logits, &classes)?;
    match dcc {
        Some(d) if alpha > 0.0 => {
            let d = tape.scale(d, alpha)?;
            tape.add(ce, d)
        }
        _ => Ok(ce),
    }
}
