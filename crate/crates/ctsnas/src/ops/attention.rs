//! Dense and sampled-query (sparse) scaled dot-product attention over the
//! time or node axis of `[B, N, T, D]` hidden tensors.

use ndarray::Axis;
use rand::seq::SliceRandom;

use crate::forward::Fwd;
use crate::rng;
use crate::scalar::Scalar;
use crate::tape::Vid;

/// Number of sampled queries: `max(1, ceil(c * ln(len)))`, capped at `len`.
pub fn sample_count(len: usize, factor: f64) -> usize {
    let u = (factor * (len as f64).ln()).ceil() as usize;
    u.max(1).min(len)
}

/// Pick the query rows with the largest sparsity score
/// `max_j <q, k_j> - mean_j <q, k_j>`, estimated on a random key subsample of
/// size `u`. One sorted index list per leading row; deterministic given the
/// seed stream.
fn select_queries<F: Scalar>(
    q: &ndarray::ArrayD<F>,
    k: &ndarray::ArrayD<F>,
    u: usize,
    seed: u64,
    op_uid: u64,
) -> Vec<Vec<usize>> {
    let shape = q.shape();
    let (bsz, n, len, d) = (shape[0], shape[1], shape[2], shape[3]);
    let mut rng = rng::stream(seed, "inf-sample", &[op_uid]);
    let mut plans = Vec::with_capacity(bsz * n);
    let all: Vec<usize> = (0..len).collect();
    for bi in 0..bsz {
        for ni in 0..n {
            let mut keys: Vec<usize> = all.clone();
            keys.shuffle(&mut rng);
            keys.truncate(u);
            keys.sort_unstable();
            let qrows = q
                .index_axis(Axis(0), bi)
                .index_axis_move(Axis(0), ni)
                .into_dimensionality::<ndarray::Ix2>()
                .expect("q row view is 2-d");
            let krows = k
                .index_axis(Axis(0), bi)
                .index_axis_move(Axis(0), ni)
                .into_dimensionality::<ndarray::Ix2>()
                .expect("k row view is 2-d");
            let mut scores: Vec<(usize, f64)> = (0..len)
                .map(|t| {
                    let mut mx = f64::NEG_INFINITY;
                    let mut sum = 0.0;
                    for &j in &keys {
                        let mut dot = 0.0;
                        for di in 0..d {
                            dot += qrows[(t, di)].to_f64_lossy() * krows[(j, di)].to_f64_lossy();
                        }
                        mx = mx.max(dot);
                        sum += dot;
                    }
                    (t, mx - sum / keys.len() as f64)
                })
                .collect();
            // ties keep the lower index
            scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let mut sel: Vec<usize> = scores[..u].iter().map(|(t, _)| *t).collect();
            sel.sort_unstable();
            plans.push(sel);
        }
    }
    plans
}

/// Scaled dot-product attention over axis 2 given projected `q`, `k`, `v`.
/// In the sparse variant only the selected queries attend; the remaining
/// positions take the mean of the value vectors.
pub fn attention_core<F: Scalar>(
    fwd: &mut Fwd<F>,
    q: Vid,
    k: Vid,
    v: Vid,
    sparse: bool,
    sample_factor: f64,
    op_uid: u64,
) -> Vid {
    let d = *fwd.tape.value(q).shape().last().unwrap();
    let len = fwd.tape.value(q).shape()[2];
    let inv_sqrt_d = F::from_f64_lossy(1.0 / (d as f64).sqrt());
    let u = sample_count(len, sample_factor);
    if !sparse || u >= len {
        let kt = fwd.tape.swap_axes(k, 2, 3);
        let scores = fwd.tape.bat_matmul(q, kt);
        let scaled = fwd.tape.scale(scores, inv_sqrt_d);
        let attn = fwd.tape.softmax_last(scaled);
        return fwd.tape.bat_matmul(attn, v);
    }
    let qv = fwd.tape.value(q).clone();
    let kv = fwd.tape.value(k).clone();
    let plan = fwd.plan_for(op_uid, |seed| select_queries(&qv, &kv, u, seed, op_uid));

    let qs = fwd.tape.gather_steps(q, plan.clone(), u);
    let kt = fwd.tape.swap_axes(k, 2, 3);
    let scores = fwd.tape.bat_matmul(qs, kt);
    let scaled = fwd.tape.scale(scores, inv_sqrt_d);
    let attn = fwd.tape.softmax_last(scaled);
    let hs = fwd.tape.bat_matmul(attn, v);

    let vmean = fwd.tape.mean_axis_keep(v, 2);
    let base = fwd.tape.broadcast_axis(vmean, 2, len);
    fwd.tape.overwrite_steps(base, hs, plan)
}

/// Project and attend over axis 2 (callers swap axes for the spatial variant).
pub fn attention_axis2<F: Scalar>(
    fwd: &mut Fwd<F>,
    z: Vid,
    wq: Vid,
    wk: Vid,
    wv: Vid,
    sparse: bool,
    sample_factor: f64,
    op_uid: u64,
) -> Vid {
    let q = fwd.tape.linear_last(z, wq);
    let k = fwd.tape.linear_last(z, wk);
    let v = fwd.tape.linear_last(z, wv);
    attention_core(fwd, q, k, v, sparse, sample_factor, op_uid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_count_formula() {
        assert_eq!(sample_count(1, 1.0), 1);
        assert_eq!(sample_count(12, 1.0), 3); // ceil(ln 12) = 3
        assert_eq!(sample_count(8, 1.0), 3); // ceil(ln 8) = 3
        assert_eq!(sample_count(4, 100.0), 4); // capped at len
    }
}
