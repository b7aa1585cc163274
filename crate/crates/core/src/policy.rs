//! Actor-critic scorer over candidate rows: a width-3 convolution across
//! the candidate axis captures cross-candidate relations, a gated
//! recurrent cell summarizes the picks made so far, and per-candidate
//! logits are masked before the softmax so picked rows get probability
//! exactly zero. Gradients are hand-written reverse-mode over this fixed
//! graph; the contract is the finite-difference check in the tests.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::ConcatRow;
use crate::error::{Error, Result};
use crate::rankenv::{EpisodeRecord, RankState};

const CKPT_MAGIC: &[u8; 5] = b"RLPM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyHyper {
    /// Single-text embedding dimension; rows are twice this.
    pub embed_dim: usize,
    pub k_max: usize,
    pub conv_channels: usize,
    pub conv_width: usize,
    pub memory_units: usize,
    pub head_hidden: usize,
}

impl Default for PolicyHyper {
    fn default() -> Self {
        PolicyHyper {
            embed_dim: 64,
            k_max: crate::rankenv::MAX_ACTIONS,
            conv_channels: 16,
            conv_width: 3,
            memory_units: 32,
            head_hidden: 32,
        }
    }
}

impl PolicyHyper {
    pub fn row_dim(&self) -> usize {
        2 * self.embed_dim
    }
}

/// Shortlist-position features fed to the heads alongside the learned
/// ones. Candidate order is the retrieval ranking, so absolute position
/// is informative; the convolution alone cannot see it.
pub const POS_FEATURES: usize = 4;

fn position_features(i: usize, k_max: usize) -> [f64; POS_FEATURES] {
    let x = i as f64;
    [
        x / k_max.max(1) as f64,
        (-x / 2.0).exp(),
        (-x / 5.0).exp(),
        (-x / 15.0).exp(),
    ]
}

/// Byte offsets of the named parameter segments in the flat vector.
#[derive(Debug, Clone)]
pub struct Segments {
    pub conv_w: Range<usize>,
    pub conv_b: Range<usize>,
    pub gru_wz: Range<usize>,
    pub gru_uz: Range<usize>,
    pub gru_bz: Range<usize>,
    pub gru_wr: Range<usize>,
    pub gru_ur: Range<usize>,
    pub gru_br: Range<usize>,
    pub gru_wh: Range<usize>,
    pub gru_uh: Range<usize>,
    pub gru_bh: Range<usize>,
    pub score_w1: Range<usize>,
    pub score_b1: Range<usize>,
    pub score_w2: Range<usize>,
    pub score_b2: Range<usize>,
    pub value_w1: Range<usize>,
    pub value_b1: Range<usize>,
    pub value_w2: Range<usize>,
    pub value_b2: Range<usize>,
    pub total: usize,
}

impl Segments {
    pub fn new(h: &PolicyHyper) -> Segments {
        let (d, c, w, m, s) = (
            h.row_dim(),
            h.conv_channels,
            h.conv_width,
            h.memory_units,
            h.head_hidden,
        );
        let mut next = 0usize;
        let mut seg = |len: usize| {
            let range = next..next + len;
            next += len;
            range
        };
        let conv_w = seg(c * d * w);
        let conv_b = seg(c);
        let gru_wz = seg(m * d);
        let gru_uz = seg(m * m);
        let gru_bz = seg(m);
        let gru_wr = seg(m * d);
        let gru_ur = seg(m * m);
        let gru_br = seg(m);
        let gru_wh = seg(m * d);
        let gru_uh = seg(m * m);
        let gru_bh = seg(m);
        let head_in = c + m + POS_FEATURES;
        let score_w1 = seg(s * head_in);
        let score_b1 = seg(s);
        let score_w2 = seg(s);
        let score_b2 = seg(1);
        let value_w1 = seg(s * head_in);
        let value_b1 = seg(s);
        let value_w2 = seg(s);
        let value_b2 = seg(1);
        Segments {
            conv_w,
            conv_b,
            gru_wz,
            gru_uz,
            gru_bz,
            gru_wr,
            gru_ur,
            gru_br,
            gru_wh,
            gru_uh,
            gru_bh,
            score_w1,
            score_b1,
            score_w2,
            score_b2,
            value_w1,
            value_b1,
            value_w2,
            value_b2,
            total: next,
        }
    }

    /// Weight segments initialized uniformly; the scoring-head output
    /// layer and every bias start at zero.
    fn uniform_init_ranges(&self) -> [&Range<usize>; 8] {
        [
            &self.conv_w,
            &self.gru_wz,
            &self.gru_uz,
            &self.gru_wr,
            &self.gru_ur,
            &self.gru_wh,
            &self.gru_uh,
            &self.score_w1,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct PolicyModel {
    hyper: PolicyHyper,
    segments: Segments,
    params: Vec<f64>,
}

/// Forward-pass result for one state.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    /// Masked entries hold negative infinity.
    pub logits: Vec<f64>,
    /// Masked entries are exactly zero; the rest sum to one.
    pub probs: Vec<f64>,
    pub value: f64,
    pub entropy: f64,
}

impl PolicyModel {
    pub fn init(hyper: PolicyHyper, seed: u64) -> PolicyModel {
        let segments = Segments::new(&hyper);
        let mut params = vec![0.0; segments.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for range in segments.uniform_init_ranges() {
            for v in &mut params[range.start..range.end] {
                *v = rng.random_range(-0.05..0.05);
            }
        }
        for range in [&segments.value_w1, &segments.value_w2] {
            for v in &mut params[range.start..range.end] {
                *v = rng.random_range(-0.05..0.05);
            }
        }
        PolicyModel {
            hyper,
            segments,
            params,
        }
    }

    pub fn hyper(&self) -> &PolicyHyper {
        &self.hyper
    }

    pub fn segments(&self) -> &Segments {
        &self.segments
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn seg(&self, r: &Range<usize>) -> &[f64] {
        &self.params[r.start..r.end]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(CKPT_MAGIC)?;
        for v in [
            self.hyper.embed_dim,
            self.hyper.k_max,
            self.hyper.conv_channels,
            self.hyper.conv_width,
            self.hyper.memory_units,
            self.hyper.head_hidden,
        ] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PolicyModel> {
        let mut r = BufReader::new(fs::File::open(path)?);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(Error::Format(format!(
                "unknown checkpoint magic {:?} in {}",
                magic,
                path.display()
            )));
        }
        let mut fields = [0u32; 6];
        for f in &mut fields {
            let mut buf = [0u8; 4];
            r.read_exact(&mut buf)?;
            *f = u32::from_le_bytes(buf);
        }
        let hyper = PolicyHyper {
            embed_dim: fields[0] as usize,
            k_max: fields[1] as usize,
            conv_channels: fields[2] as usize,
            conv_width: fields[3] as usize,
            memory_units: fields[4] as usize,
            head_hidden: fields[5] as usize,
        };
        let segments = Segments::new(&hyper);
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        let n = u64::from_le_bytes(buf) as usize;
        if n != segments.total {
            return Err(Error::Format(format!(
                "checkpoint parameter count {n} does not match hyperparameters ({})",
                segments.total
            )));
        }
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            params.push(f64::from_le_bytes(buf));
        }
        Ok(PolicyModel {
            hyper,
            segments,
            params,
        })
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// out = W x, with W row-major `rows x cols`.
fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        out[r] = acc;
    }
}

/// out += W^T d, with W row-major `rows x cols` and d of length `rows`.
fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, d: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let dr = d[r];
        for (o, a) in out.iter_mut().zip(row) {
            *o += dr * a;
        }
    }
}

/// W += d ⊗ x.
fn outer_acc(w: &mut [f64], d: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &dr) in d.iter().enumerate() {
        let row = &mut w[r * cols..(r + 1) * cols];
        for (o, b) in row.iter_mut().zip(x) {
            *o += dr * b;
        }
    }
}

fn add_acc(out: &mut [f64], d: &[f64]) {
    for (o, v) in out.iter_mut().zip(d) {
        *o += v;
    }
}

/// Gate activations of one recurrent step, kept for the backward pass.
#[derive(Debug, Clone)]
struct GruTrace {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    ct: Vec<f64>,
    rh: Vec<f64>,
}

fn gru_step(model: &PolicyModel, x: &[f64], h: &[f64]) -> (Vec<f64>, GruTrace) {
    let m = model.hyper.memory_units;
    let d = model.hyper.row_dim();
    let seg = &model.segments;
    let mut z = vec![0.0; m];
    let mut r = vec![0.0; m];
    let mut ct = vec![0.0; m];
    let mut tmp = vec![0.0; m];

    matvec(model.seg(&seg.gru_wz), m, d, x, &mut z);
    matvec(model.seg(&seg.gru_uz), m, m, h, &mut tmp);
    for i in 0..m {
        z[i] = sigmoid(z[i] + tmp[i] + model.seg(&seg.gru_bz)[i]);
    }
    matvec(model.seg(&seg.gru_wr), m, d, x, &mut r);
    matvec(model.seg(&seg.gru_ur), m, m, h, &mut tmp);
    for i in 0..m {
        r[i] = sigmoid(r[i] + tmp[i] + model.seg(&seg.gru_br)[i]);
    }
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    matvec(model.seg(&seg.gru_wh), m, d, x, &mut ct);
    matvec(model.seg(&seg.gru_uh), m, m, &rh, &mut tmp);
    for i in 0..m {
        ct[i] = (ct[i] + tmp[i] + model.seg(&seg.gru_bh)[i]).tanh();
    }
    let h_next: Vec<f64> = (0..m)
        .map(|i| (1.0 - z[i]) * h[i] + z[i] * ct[i])
        .collect();
    let trace = GruTrace {
        h_prev: h.to_vec(),
        z,
        r,
        ct,
        rh,
    };
    (h_next, trace)
}

/// d_out is the gradient w.r.t. the step output; returns the gradient
/// w.r.t. the previous memory and accumulates parameter gradients.
fn gru_backward(
    model: &PolicyModel,
    grads: &mut [f64],
    x: &[f64],
    trace: &GruTrace,
    d_out: &[f64],
) -> Vec<f64> {
    let m = model.hyper.memory_units;
    let seg = &model.segments;
    let h = &trace.h_prev;

    let dz: Vec<f64> = (0..m).map(|i| d_out[i] * (trace.ct[i] - h[i])).collect();
    let dct: Vec<f64> = (0..m).map(|i| d_out[i] * trace.z[i]).collect();
    let mut dh: Vec<f64> = (0..m).map(|i| d_out[i] * (1.0 - trace.z[i])).collect();

    let dct_pre: Vec<f64> = (0..m)
        .map(|i| dct[i] * (1.0 - trace.ct[i] * trace.ct[i]))
        .collect();
    outer_acc(&mut grads[seg.gru_wh.start..seg.gru_wh.end], &dct_pre, x);
    outer_acc(
        &mut grads[seg.gru_uh.start..seg.gru_uh.end],
        &dct_pre,
        &trace.rh,
    );
    add_acc(&mut grads[seg.gru_bh.start..seg.gru_bh.end], &dct_pre);
    let mut drh = vec![0.0; m];
    matvec_t_acc(model.seg(&seg.gru_uh), m, m, &dct_pre, &mut drh);
    let dr: Vec<f64> = (0..m).map(|i| drh[i] * h[i]).collect();
    for i in 0..m {
        dh[i] += drh[i] * trace.r[i];
    }

    let dz_pre: Vec<f64> = (0..m)
        .map(|i| dz[i] * trace.z[i] * (1.0 - trace.z[i]))
        .collect();
    outer_acc(&mut grads[seg.gru_wz.start..seg.gru_wz.end], &dz_pre, x);
    outer_acc(&mut grads[seg.gru_uz.start..seg.gru_uz.end], &dz_pre, h);
    add_acc(&mut grads[seg.gru_bz.start..seg.gru_bz.end], &dz_pre);
    matvec_t_acc(model.seg(&seg.gru_uz), m, m, &dz_pre, &mut dh);

    let dr_pre: Vec<f64> = (0..m)
        .map(|i| dr[i] * trace.r[i] * (1.0 - trace.r[i]))
        .collect();
    outer_acc(&mut grads[seg.gru_wr.start..seg.gru_wr.end], &dr_pre, x);
    outer_acc(&mut grads[seg.gru_ur.start..seg.gru_ur.end], &dr_pre, h);
    add_acc(&mut grads[seg.gru_br.start..seg.gru_br.end], &dr_pre);
    matvec_t_acc(model.seg(&seg.gru_ur), m, m, &dr_pre, &mut dh);

    dh
}

/// Per-row conv features over the whole candidate matrix, tanh-activated.
fn conv_features(model: &PolicyModel, rows: &[ConcatRow]) -> Vec<f64> {
    let k = rows.len();
    let c = model.hyper.conv_channels;
    let w = model.hyper.conv_width;
    let d = model.hyper.row_dim();
    let off = w / 2;
    let conv_w = model.seg(&model.segments.conv_w);
    let conv_b = model.seg(&model.segments.conv_b);
    let mut out = vec![0.0; k * c];
    for i in 0..k {
        for ch in 0..c {
            let mut acc = conv_b[ch];
            // conv_w layout: [channel][input][tap]
            for tap in 0..w {
                let src = i as isize + tap as isize - off as isize;
                if src < 0 || src >= k as isize {
                    continue;
                }
                let x = &rows[src as usize].values;
                let mut sum = 0.0;
                for j in 0..d {
                    sum += conv_w[(ch * d + j) * w + tap] * x[j];
                }
                acc += sum;
            }
            out[i * c + ch] = acc.tanh();
        }
    }
    out
}

fn conv_backward(
    model: &PolicyModel,
    grads: &mut [f64],
    rows: &[ConcatRow],
    conv_out: &[f64],
    dconv: &[f64],
) {
    let k = rows.len();
    let c = model.hyper.conv_channels;
    let w = model.hyper.conv_width;
    let d = model.hyper.row_dim();
    let off = w / 2;
    let seg = &model.segments;
    for i in 0..k {
        for ch in 0..c {
            let g = dconv[i * c + ch];
            if g == 0.0 {
                continue;
            }
            let a = conv_out[i * c + ch];
            let da = g * (1.0 - a * a);
            grads[seg.conv_b.start + ch] += da;
            for tap in 0..w {
                let src = i as isize + tap as isize - off as isize;
                if src < 0 || src >= k as isize {
                    continue;
                }
                let x = &rows[src as usize].values;
                for j in 0..d {
                    grads[seg.conv_w.start + (ch * d + j) * w + tap] += da * x[j];
                }
            }
        }
    }
}

/// Heads applied to one state's features: masked softmax over the score
/// head and a value estimate from mean-pooled available features.
fn heads(
    model: &PolicyModel,
    conv_out: &[f64],
    h: &[f64],
    mask: &[bool],
) -> Result<(PolicyOutput, HeadTrace)> {
    let k = mask.len();
    let c = model.hyper.conv_channels;
    let m = h.len();
    let s = model.hyper.head_hidden;
    let head_in = c + m + POS_FEATURES;
    let seg = &model.segments;
    let avail: Vec<usize> = (0..k).filter(|&i| mask[i]).collect();
    if avail.is_empty() {
        return Err(Error::TerminalState);
    }

    let mut logits = vec![f64::NEG_INFINITY; k];
    let mut score_hidden: Vec<Vec<f64>> = Vec::with_capacity(avail.len());
    let mut feat = vec![0.0; head_in];
    feat[c..c + m].copy_from_slice(h);
    for &i in &avail {
        feat[..c].copy_from_slice(&conv_out[i * c..(i + 1) * c]);
        feat[c + m..].copy_from_slice(&position_features(i, model.hyper.k_max));
        let mut u = vec![0.0; s];
        matvec(model.seg(&seg.score_w1), s, head_in, &feat, &mut u);
        for (j, v) in u.iter_mut().enumerate() {
            *v = (*v + model.seg(&seg.score_b1)[j]).tanh();
        }
        let mut logit = model.seg(&seg.score_b2)[0];
        for (a, b) in model.seg(&seg.score_w2).iter().zip(&u) {
            logit += a * b;
        }
        logits[i] = logit;
        score_hidden.push(u);
    }

    let max_logit = avail
        .iter()
        .map(|&i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probs = vec![0.0; k];
    let mut z = 0.0;
    for &i in &avail {
        let e = (logits[i] - max_logit).exp();
        probs[i] = e;
        z += e;
    }
    let mut entropy = 0.0;
    for &i in &avail {
        probs[i] /= z;
        if probs[i] > 0.0 {
            entropy -= probs[i] * probs[i].ln();
        }
    }

    // Mean conv features and mean position over the remaining rows.
    let mut pooled = vec![0.0; c + POS_FEATURES];
    for &i in &avail {
        for ch in 0..c {
            pooled[ch] += conv_out[i * c + ch];
        }
        for (p, v) in position_features(i, model.hyper.k_max).iter().enumerate() {
            pooled[c + p] += v;
        }
    }
    for v in &mut pooled {
        *v /= avail.len() as f64;
    }
    let mut vfeat = vec![0.0; head_in];
    vfeat[..c].copy_from_slice(&pooled[..c]);
    vfeat[c..c + m].copy_from_slice(h);
    vfeat[c + m..].copy_from_slice(&pooled[c..]);
    let mut uv = vec![0.0; s];
    matvec(model.seg(&seg.value_w1), s, head_in, &vfeat, &mut uv);
    for (j, v) in uv.iter_mut().enumerate() {
        *v = (*v + model.seg(&seg.value_b1)[j]).tanh();
    }
    let mut value = model.seg(&seg.value_b2)[0];
    for (a, b) in model.seg(&seg.value_w2).iter().zip(&uv) {
        value += a * b;
    }

    let output = PolicyOutput {
        logits,
        probs,
        value,
        entropy,
    };
    let trace = HeadTrace {
        avail,
        score_hidden,
        value_hidden: uv,
        pooled,
    };
    Ok((output, trace))
}

#[derive(Debug, Clone)]
struct HeadTrace {
    avail: Vec<usize>,
    score_hidden: Vec<Vec<f64>>,
    value_hidden: Vec<f64>,
    /// Mean conv features then mean position features over `avail`.
    pooled: Vec<f64>,
}

/// Incremental per-episode evaluator: conv features are computed once and
/// the recurrent memory advances with each pick.
pub struct EpisodeForward<'m> {
    model: &'m PolicyModel,
    conv_out: Vec<f64>,
    h: Vec<f64>,
    picks: usize,
}

impl<'m> EpisodeForward<'m> {
    pub fn new(model: &'m PolicyModel, rows: &[ConcatRow]) -> Result<EpisodeForward<'m>> {
        check_rows(model, rows)?;
        Ok(EpisodeForward {
            model,
            conv_out: conv_features(model, rows),
            h: vec![0.0; model.hyper.memory_units],
            picks: 0,
        })
    }

    pub fn output(&self, state: &RankState) -> Result<PolicyOutput> {
        debug_assert_eq!(state.picked().len(), self.picks);
        let (out, _) = heads(self.model, &self.conv_out, &self.h, state.mask())?;
        Ok(out)
    }

    /// Feed the chosen row into the recurrent memory.
    pub fn advance(&mut self, rows: &[ConcatRow], action: usize) {
        let (h, _) = gru_step(self.model, &rows[action].values, &self.h);
        self.h = h;
        self.picks += 1;
    }
}

fn check_rows(model: &PolicyModel, rows: &[ConcatRow]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::EmptyEpisode);
    }
    let d = model.hyper.row_dim();
    for row in rows {
        if row.values.len() != d {
            return Err(Error::DimensionMismatch {
                id: row.path.clone(),
                expected: d,
                found: row.values.len(),
            });
        }
    }
    Ok(())
}

/// Score a state from scratch: masked logits, probabilities, value, and
/// policy entropy.
pub fn forward(model: &PolicyModel, state: &RankState) -> Result<PolicyOutput> {
    if state.is_terminal() {
        return Err(Error::TerminalState);
    }
    check_rows(model, state.rows())?;
    let conv_out = conv_features(model, state.rows());
    let mut h = vec![0.0; model.hyper.memory_units];
    for &a in state.picked() {
        let (next, _) = gru_step(model, &state.rows()[a].values, &h);
        h = next;
    }
    let (out, _) = heads(model, &conv_out, &h, state.mask())?;
    Ok(out)
}

/// Sample an action from the masked distribution.
pub fn sample_action<R: Rng>(output: &PolicyOutput, rng: &mut R) -> usize {
    let draw: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last_avail = 0;
    for (i, &p) in output.probs.iter().enumerate() {
        if p > 0.0 {
            last_avail = i;
            cumulative += p;
            if draw < cumulative {
                return i;
            }
        }
    }
    last_avail
}

/// Highest-probability action; ties break toward the lowest index.
pub fn argmax_action(output: &PolicyOutput) -> usize {
    let mut best = 0;
    let mut best_p = f64::NEG_INFINITY;
    for (i, &p) in output.probs.iter().enumerate() {
        if output.logits[i] != f64::NEG_INFINITY && p > best_p {
            best = i;
            best_p = p;
        }
    }
    best
}

/// A2C loss specification for one recorded episode. Advantages and critic
/// targets are constants w.r.t. the parameters.
#[derive(Debug, Clone)]
pub struct LossSpec<'a> {
    pub advantages: &'a [f64],
    pub critic_targets: &'a [f64],
    pub entropy_coef: f64,
    pub value_coef: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub actor: f64,
    pub critic: f64,
    pub entropy: f64,
    pub total: f64,
}

struct Replay {
    conv_out: Vec<f64>,
    steps: Vec<ReplayStep>,
    gru_traces: Vec<GruTrace>,
    parts: LossParts,
}

struct ReplayStep {
    probs: Vec<f64>,
    entropy: f64,
    value: f64,
    /// Memory vector entering this step.
    memory: Vec<f64>,
    head: HeadTrace,
}

fn replay(
    model: &PolicyModel,
    rows: &[ConcatRow],
    record: &EpisodeRecord,
    spec: &LossSpec,
) -> Result<Replay> {
    check_rows(model, rows)?;
    let t_steps = record.steps.len();
    if spec.advantages.len() != t_steps || spec.critic_targets.len() != t_steps {
        return Err(Error::Config(
            "loss spec length does not match the episode".into(),
        ));
    }
    let conv_out = conv_features(model, rows);
    let mut mask = vec![true; rows.len()];
    let mut h = vec![0.0; model.hyper.memory_units];
    let mut steps = Vec::with_capacity(t_steps);
    let mut gru_traces = Vec::new();
    let mut parts = LossParts {
        actor: 0.0,
        critic: 0.0,
        entropy: 0.0,
        total: 0.0,
    };
    for (t, step) in record.steps.iter().enumerate() {
        let (out, head) = heads(model, &conv_out, &h, &mask)?;
        let action = step.action;
        if action >= rows.len() || !mask[action] {
            return Err(Error::IllegalAction { action });
        }
        let p = out.probs[action];
        if p.is_nan() || p <= 0.0 || !out.value.is_finite() {
            return Err(Error::Numerics {
                step: t,
                detail: format!("p={p}, value={}", out.value),
            });
        }
        parts.actor -= p.ln() * spec.advantages[t];
        let diff = spec.critic_targets[t] - out.value;
        parts.critic += diff * diff;
        parts.entropy += out.entropy;
        steps.push(ReplayStep {
            probs: out.probs,
            entropy: out.entropy,
            value: out.value,
            memory: h.clone(),
            head,
        });
        mask[action] = false;
        if t + 1 < t_steps {
            let (next, trace) = gru_step(model, &rows[action].values, &h);
            h = next;
            gru_traces.push(trace);
        }
    }
    parts.total = parts.actor + spec.value_coef * parts.critic - spec.entropy_coef * parts.entropy;
    if !parts.total.is_finite() {
        return Err(Error::Numerics {
            step: t_steps,
            detail: format!("total loss {}", parts.total),
        });
    }
    Ok(Replay {
        conv_out,
        steps,
        gru_traces,
        parts,
    })
}

/// Total A2C loss of a recorded episode under the current parameters.
pub fn episode_loss(
    model: &PolicyModel,
    rows: &[ConcatRow],
    record: &EpisodeRecord,
    spec: &LossSpec,
) -> Result<LossParts> {
    Ok(replay(model, rows, record, spec)?.parts)
}

/// Exact reverse-mode gradient of `episode_loss` w.r.t. the flat
/// parameter vector.
pub fn gradients(
    model: &PolicyModel,
    rows: &[ConcatRow],
    record: &EpisodeRecord,
    spec: &LossSpec,
) -> Result<Vec<f64>> {
    let rep = replay(model, rows, record, spec)?;
    let seg = &model.segments;
    let c = model.hyper.conv_channels;
    let m = model.hyper.memory_units;
    let s = model.hyper.head_hidden;
    let mut grads = vec![0.0; model.num_params()];
    let mut dconv = vec![0.0; rep.conv_out.len()];
    let t_steps = record.steps.len();

    // dh carries the loss gradient w.r.t. the memory entering each step,
    // built backwards through the recurrent chain.
    let mut dh = vec![0.0; m];
    for t in (0..t_steps).rev() {
        if t < t_steps - 1 {
            let x = &rows[record.steps[t].action].values;
            dh = gru_backward(model, &mut grads, x, &rep.gru_traces[t], &dh);
        } else {
            dh.iter_mut().for_each(|v| *v = 0.0);
        }

        let step = &rep.steps[t];
        let head = &step.head;
        let action = record.steps[t].action;
        let adv = spec.advantages[t];

        // Score head: actor and entropy terms meet at the logits.
        let head_in = c + m + POS_FEATURES;
        let mut feat = vec![0.0; head_in];
        for (slot, &i) in head.avail.iter().enumerate() {
            let p = step.probs[i];
            let indicator = if i == action { 1.0 } else { 0.0 };
            let mut dlogit = -adv * (indicator - p);
            dlogit += spec.entropy_coef * p * (p.ln() + step.entropy);
            if dlogit == 0.0 {
                continue;
            }
            let u = &head.score_hidden[slot];
            for j in 0..s {
                grads[seg.score_w2.start + j] += dlogit * u[j];
            }
            grads[seg.score_b2.start] += dlogit;
            let w2 = model.seg(&seg.score_w2);
            let dpre: Vec<f64> = (0..s)
                .map(|j| dlogit * w2[j] * (1.0 - u[j] * u[j]))
                .collect();
            feat[..c].copy_from_slice(&rep.conv_out[i * c..(i + 1) * c]);
            feat[c..c + m].copy_from_slice(&step.memory);
            feat[c + m..].copy_from_slice(&position_features(i, model.hyper.k_max));
            outer_acc(
                &mut grads[seg.score_w1.start..seg.score_w1.end],
                &dpre,
                &feat,
            );
            add_acc(&mut grads[seg.score_b1.start..seg.score_b1.end], &dpre);
            let w1 = model.seg(&seg.score_w1);
            let mut dfeat = vec![0.0; head_in];
            matvec_t_acc(w1, s, head_in, &dpre, &mut dfeat);
            for ch in 0..c {
                dconv[i * c + ch] += dfeat[ch];
            }
            add_acc(&mut dh, &dfeat[c..c + m]);
            // Position features are inputs; no gradient flows to them.
        }

        // Value head.
        let dv = 2.0 * spec.value_coef * (step.value - spec.critic_targets[t]);
        if dv != 0.0 {
            let uv = &step.head.value_hidden;
            for j in 0..s {
                grads[seg.value_w2.start + j] += dv * uv[j];
            }
            grads[seg.value_b2.start] += dv;
            let w2 = model.seg(&seg.value_w2);
            let dpre: Vec<f64> = (0..s)
                .map(|j| dv * w2[j] * (1.0 - uv[j] * uv[j]))
                .collect();
            let mut vfeat = vec![0.0; head_in];
            vfeat[..c].copy_from_slice(&head.pooled[..c]);
            vfeat[c..c + m].copy_from_slice(&step.memory);
            vfeat[c + m..].copy_from_slice(&head.pooled[c..]);
            outer_acc(
                &mut grads[seg.value_w1.start..seg.value_w1.end],
                &dpre,
                &vfeat,
            );
            add_acc(&mut grads[seg.value_b1.start..seg.value_b1.end], &dpre);
            let w1 = model.seg(&seg.value_w1);
            let mut dfeat = vec![0.0; head_in];
            matvec_t_acc(w1, s, head_in, &dpre, &mut dfeat);
            let n_avail = head.avail.len() as f64;
            for &i in &head.avail {
                for ch in 0..c {
                    dconv[i * c + ch] += dfeat[ch] / n_avail;
                }
            }
            add_acc(&mut dh, &dfeat[c..c + m]);
        }
    }
    conv_backward(model, &mut grads, rows, &rep.conv_out, &dconv);
    Ok(grads)
}
