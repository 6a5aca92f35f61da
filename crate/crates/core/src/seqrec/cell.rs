use super::params::{dot, R, H as HH, Z};
use super::{bce, bce_logit_grad, Gradients, Result, SeqModelParams};
use crate::num::sigmoid;
use crate::sim::Event;

/// Reusable buffers for single-step inference.
pub(crate) struct StepScratch {
    x: Vec<f64>,
    a: [Vec<f64>; 3],
    rh: Vec<f64>,
}

impl StepScratch {
    pub(crate) fn new(dim: usize) -> Self {
        Self { x: vec![0.0; dim], a: [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]], rh: vec![0.0; dim] }
    }
}

#[inline]
fn embed(p: &SeqModelParams, item: usize, accepted: bool, x: &mut [f64]) {
    let d = p.dim;
    let dec = &p.dec_emb[accepted as usize * d..(accepted as usize + 1) * d];
    for ((xk, e), g) in x.iter_mut().zip(p.item_row(item)).zip(dec) {
        *xk = e + g;
    }
}

/// `out = b + M_w x + M_u v`
#[inline]
fn affine(out: &mut [f64], b: &[f64], mw: &[f64], x: &[f64], mu: &[f64], v: &[f64]) {
    let d = out.len();
    for i in 0..d {
        out[i] = b[i] + dot(&mw[i * d..(i + 1) * d], x) + dot(&mu[i * d..(i + 1) * d], v);
    }
}

/// Advances `h` by one event.
pub(crate) fn step(p: &SeqModelParams, h: &mut [f64], item: usize, accepted: bool, s: &mut StepScratch) {
    embed(p, item, accepted, &mut s.x);
    let [az, ar, ah] = &mut s.a;
    affine(az, &p.b[Z], &p.w[Z], &s.x, &p.u[Z], h);
    affine(ar, &p.b[R], &p.w[R], &s.x, &p.u[R], h);
    for k in 0..h.len() {
        s.rh[k] = sigmoid(ar[k]) * h[k];
    }
    affine(ah, &p.b[HH], &p.w[HH], &s.x, &p.u[HH], &s.rh);
    for k in 0..h.len() {
        let z = sigmoid(az[k]);
        h[k] = (1.0 - z) * h[k] + z * ah[k].tanh();
    }
}

/// Activations of one forward pass over a contiguous run of events.
pub(crate) struct Trace {
    pub start: usize,
    pub len: usize,
    x: Vec<f64>,
    /// `len + 1` states; state 0 is the zero vector.
    pub hs: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    hh: Vec<f64>,
}

impl Trace {
    pub(crate) fn state(&self, k: usize, dim: usize) -> &[f64] {
        &self.hs[k * dim..(k + 1) * dim]
    }
}

pub(crate) fn forward_pass(p: &SeqModelParams, events: &[Event], start: usize) -> Trace {
    let d = p.dim;
    let len = events.len();
    let mut t = Trace {
        start,
        len,
        x: vec![0.0; len * d],
        hs: vec![0.0; (len + 1) * d],
        z: vec![0.0; len * d],
        r: vec![0.0; len * d],
        hh: vec![0.0; len * d],
    };
    let mut a = vec![0.0; d];
    let mut rh = vec![0.0; d];
    for (k, e) in events.iter().enumerate() {
        let span = k * d..(k + 1) * d;
        embed(p, e.item, e.accepted, &mut t.x[span.clone()]);
        let (prev, next) = t.hs.split_at_mut((k + 1) * d);
        let h_prev = &prev[k * d..];
        let h_next = &mut next[..d];
        let x = &t.x[span.clone()];
        affine(&mut a, &p.b[Z], &p.w[Z], x, &p.u[Z], h_prev);
        for (o, ai) in t.z[span.clone()].iter_mut().zip(&a) {
            *o = sigmoid(*ai);
        }
        affine(&mut a, &p.b[R], &p.w[R], x, &p.u[R], h_prev);
        for i in 0..d {
            let r = sigmoid(a[i]);
            t.r[k * d + i] = r;
            rh[i] = r * h_prev[i];
        }
        affine(&mut a, &p.b[HH], &p.w[HH], x, &p.u[HH], &rh);
        for i in 0..d {
            let hh = a[i].tanh();
            let z = t.z[k * d + i];
            t.hh[k * d + i] = hh;
            h_next[i] = (1.0 - z) * h_prev[i] + z * hh;
        }
    }
    t
}

/// `g += a xᵀ`
#[inline]
fn outer_add(g: &mut [f64], a: &[f64], x: &[f64]) {
    let d = x.len();
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            for (gij, xj) in g[i * d..(i + 1) * d].iter_mut().zip(x) {
                *gij += ai * xj;
            }
        }
    }
}

/// `out += Mᵀ a`
#[inline]
fn tmatvec_add(out: &mut [f64], m: &[f64], a: &[f64]) {
    let d = out.len();
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            for (o, mij) in out.iter_mut().zip(&m[i * d..(i + 1) * d]) {
                *o += ai * mij;
            }
        }
    }
}

/// Backpropagation through time. `dh` holds external gradients on every
/// state (`len + 1` rows) and is consumed.
pub(crate) fn backward_pass(p: &SeqModelParams, events: &[Event], t: &Trace, dh: &mut [f64], g: &mut Gradients) {
    let d = p.dim;
    let mut da = [vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut dx = vec![0.0; d];
    let mut drh = vec![0.0; d];
    let mut rh = vec![0.0; d];
    for k in (0..t.len).rev() {
        let (before, cur) = dh.split_at_mut((k + 1) * d);
        let dh_prev = &mut before[k * d..];
        let dh_k = &cur[..d];
        if dh_k.iter().all(|v| *v == 0.0) {
            continue;
        }
        let h_prev = t.state(k, d);
        let x = &t.x[k * d..(k + 1) * d];
        let (z, r, hh) = (&t.z[k * d..(k + 1) * d], &t.r[k * d..(k + 1) * d], &t.hh[k * d..(k + 1) * d]);
        for i in 0..d {
            da[Z][i] = dh_k[i] * (hh[i] - h_prev[i]) * z[i] * (1.0 - z[i]);
            da[HH][i] = dh_k[i] * z[i] * (1.0 - hh[i] * hh[i]);
            dh_prev[i] += dh_k[i] * (1.0 - z[i]);
            rh[i] = r[i] * h_prev[i];
        }
        drh.fill(0.0);
        tmatvec_add(&mut drh, &p.u[HH], &da[HH]);
        for i in 0..d {
            da[R][i] = drh[i] * h_prev[i] * r[i] * (1.0 - r[i]);
            dh_prev[i] += drh[i] * r[i];
        }
        outer_add(&mut g.u[HH], &da[HH], &rh);
        outer_add(&mut g.u[Z], &da[Z], h_prev);
        outer_add(&mut g.u[R], &da[R], h_prev);
        tmatvec_add(dh_prev, &p.u[Z], &da[Z]);
        tmatvec_add(dh_prev, &p.u[R], &da[R]);
        dx.fill(0.0);
        for gate in [Z, R, HH] {
            outer_add(&mut g.w[gate], &da[gate], x);
            tmatvec_add(&mut dx, &p.w[gate], &da[gate]);
            for (gb, a) in g.b[gate].iter_mut().zip(&da[gate]) {
                *gb += a;
            }
        }
        let e = events[k];
        for (ge, v) in g.item_emb[e.item * d..(e.item + 1) * d].iter_mut().zip(&dx) {
            *ge += v;
        }
        let dec = e.accepted as usize;
        for (gd, v) in g.dec_emb[dec * d..(dec + 1) * d].iter_mut().zip(&dx) {
            *gd += v;
        }
    }
}

/// Every position `t` of a sequence predicts `events[t]` from the truncated
/// history before it. One pass covers all positions whose history fits the
/// window; later positions each get their own window pass.
pub(crate) struct SeqForward {
    pub passes: Vec<Trace>,
    /// `(pass, state)` holding the history encoding of each position.
    pub slots: Vec<(usize, usize)>,
}

pub(crate) fn sequence_forward(p: &SeqModelParams, events: &[Event]) -> SeqForward {
    let m = p.max_seq_len;
    let n = events.len();
    if n == 0 {
        return SeqForward { passes: Vec::new(), slots: Vec::new() };
    }
    let main_len = (n - 1).min(m);
    let mut passes = vec![forward_pass(p, &events[..main_len], 0)];
    let mut slots: Vec<(usize, usize)> = (0..=main_len).map(|t| (0, t)).collect();
    for t in m + 1..n {
        passes.push(forward_pass(p, &events[t - m..t], t - m));
        slots.push((passes.len() - 1, m));
    }
    SeqForward { passes, slots }
}

pub(crate) fn sequence_logits(p: &SeqModelParams, events: &[Event], fwd: &SeqForward) -> Vec<f64> {
    events
        .iter()
        .zip(&fwd.slots)
        .map(|(e, &(pass, k))| p.score(fwd.passes[pass].state(k, p.dim), e.item))
        .collect()
}

/// Per-sequence training objective. Scales fold the batch normalisation
/// (and the constraint weight) into the gradient.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    Bce { scale: f64 },
    Constrained {
        bce_scale: f64,
        /// `λ / n_constraint_terms`.
        con_scale: f64,
        detach_target: bool,
        /// `[p(accept | prev accepted), p(accept | prev rejected)]` per position.
        branches: &'a [[f64; 2]],
    },
}

/// Unscaled loss sums of one sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SequenceGrad {
    pub bce_sum: f64,
    pub n_bce: usize,
    pub residual_sq_sum: f64,
    pub n_residual: usize,
}

impl SequenceGrad {
    pub fn add(&mut self, o: &SequenceGrad) {
        self.bce_sum += o.bce_sum;
        self.n_bce += o.n_bce;
        self.residual_sq_sum += o.residual_sq_sum;
        self.n_residual += o.n_residual;
    }
}

/// Loss sums and `dloss/dlogit` for every position.
pub(crate) fn loss_and_dlogits(events: &[Event], logits: &[f64], obj: &Objective) -> (SequenceGrad, Vec<f64>) {
    let n = events.len();
    let f: Vec<f64> = logits.iter().map(|&s| sigmoid(s)).collect();
    let mut out = SequenceGrad { n_bce: n, ..Default::default() };
    let mut dlogit = vec![0.0; n];
    let bce_scale = match *obj {
        Objective::Bce { scale } => scale,
        Objective::Constrained { bce_scale, .. } => bce_scale,
    };
    for t in 0..n {
        out.bce_sum += bce(f[t], events[t].accepted);
        dlogit[t] = bce_scale * bce_logit_grad(f[t], events[t].accepted);
    }
    if let Objective::Constrained { con_scale, detach_target, branches, .. } = *obj {
        let mut df = vec![0.0; n];
        for t in 1..n {
            let [p1, p0] = branches[t];
            let target = p1 * f[t - 1] + p0 * (1.0 - f[t - 1]);
            let res = f[t] - target;
            out.residual_sq_sum += res * res;
            out.n_residual += 1;
            df[t] += con_scale * 2.0 * res;
            if !detach_target {
                df[t - 1] -= con_scale * 2.0 * res * (p1 - p0);
            }
        }
        for t in 0..n {
            dlogit[t] += df[t] * f[t] * (1.0 - f[t]);
        }
    }
    (out, dlogit)
}

/// Accumulates the gradient of one sequence's objective into `grads` and
/// returns its unscaled loss sums.
pub fn backward(p: &SeqModelParams, events: &[Event], obj: &Objective, grads: &mut Gradients) -> Result<SequenceGrad> {
    p.check_items(events.iter().map(|e| e.item))?;
    p.check_shape(grads)?;
    if let Objective::Constrained { branches, .. } = obj {
        if branches.len() != events.len() {
            return Err(super::SeqError::ShapeMismatch(format!(
                "{} branch pairs for {} events",
                branches.len(),
                events.len()
            )));
        }
    }
    let d = p.dim;
    let fwd = sequence_forward(p, events);
    let logits = sequence_logits(p, events, &fwd);
    let (stats, dlogit) = loss_and_dlogits(events, &logits, obj);
    let mut dh: Vec<Vec<f64>> = fwd.passes.iter().map(|t| vec![0.0; (t.len + 1) * d]).collect();
    for (t, &(pass, k)) in fwd.slots.iter().enumerate() {
        let gl = dlogit[t];
        if gl == 0.0 {
            continue;
        }
        let c = events[t].item;
        let h = fwd.passes[pass].state(k, d);
        for (ge, hv) in grads.item_emb[c * d..(c + 1) * d].iter_mut().zip(h) {
            *ge += gl * hv;
        }
        grads.out_bias[c] += gl;
        let row = &p.item_emb[c * d..(c + 1) * d];
        for (dv, ev) in dh[pass][k * d..(k + 1) * d].iter_mut().zip(row) {
            *dv += gl * ev;
        }
    }
    for (trace, dh) in fwd.passes.iter().zip(dh.iter_mut()) {
        let span = &events[trace.start..trace.start + trace.len];
        backward_pass(p, span, trace, dh, grads);
    }
    Ok(stats)
}

/// Loss sums without gradients.
pub(crate) fn evaluate(p: &SeqModelParams, events: &[Event], obj: &Objective) -> SequenceGrad {
    let fwd = sequence_forward(p, events);
    let logits = sequence_logits(p, events, &fwd);
    loss_and_dlogits(events, &logits, obj).0
}
