use super::cell::{self, Objective};
use super::{backward, bce, Result, SeqModelParams};
use crate::csrec::mix_target;
use crate::num::sigmoid;
use crate::sim::Event;

fn probs(p: &SeqModelParams, events: &[Event]) -> Vec<f64> {
    let fwd = cell::sequence_forward(p, events);
    cell::sequence_logits(p, events, &fwd).into_iter().map(sigmoid).collect()
}

/// Objective value recomputed from probabilities. With `frozen`, the
/// constraint targets use those `f_{t−1}` instead of the live ones.
fn value(p: &SeqModelParams, events: &[Event], obj: &Objective, frozen: Option<&[f64]>) -> f64 {
    let f = probs(p, events);
    let mut total = 0.0;
    match *obj {
        Objective::Bce { scale } => {
            for (fi, e) in f.iter().zip(events) {
                total += scale * bce(*fi, e.accepted);
            }
        }
        Objective::Constrained { bce_scale, con_scale, branches, .. } => {
            let prev = frozen.unwrap_or(&f);
            for t in 0..events.len() {
                total += bce_scale * bce(f[t], events[t].accepted);
                if t >= 1 {
                    let target = mix_target(branches[t][0], branches[t][1], prev[t - 1]);
                    total += con_scale * (f[t] - target).powi(2);
                }
            }
        }
    }
    total
}

/// Largest relative error between the analytic gradient and central
/// differences with step `eps`, over every parameter. Relative errors use
/// `max(|fd|, |analytic|, 1e−6)` as denominator.
pub fn max_gradient_error(params: &SeqModelParams, events: &[Event], obj: &Objective, eps: f64) -> Result<f64> {
    let mut g = params.zeros_like();
    backward(params, events, obj, &mut g)?;
    let frozen = match obj {
        Objective::Constrained { detach_target: true, .. } => Some(probs(params, events)),
        _ => None,
    };
    let mut q = params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..params.num_params() {
        let v = params.get_flat(i);
        q.set_flat(i, v + eps);
        let up = value(&q, events, obj, frozen.as_deref());
        q.set_flat(i, v - eps);
        let down = value(&q, events, obj, frozen.as_deref());
        q.set_flat(i, v);
        let fd = (up - down) / (2.0 * eps);
        let an = g.get_flat(i);
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
    }
    Ok(worst)
}
