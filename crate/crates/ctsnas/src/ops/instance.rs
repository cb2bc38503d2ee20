//! Operator instances: learnable weights plus hyperparameters, wrapped in the
//! ReLU-operator-BN order for all parametric operators.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::Rng;

use crate::error::{Error, Result};
use crate::forward::Fwd;
use crate::ops::attention::attention_axis2;
use crate::ops::kind::OperatorKind;
use crate::params::{glorot, ones, zeros, ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::Vid;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Operator hyperparameters (fixed at build time, not searched).
#[derive(Debug, Clone, Copy)]
pub struct OperatorHyper {
    pub kernel_size: usize,
    pub dilation: usize,
    pub diffusion_k: usize,
    pub heads: usize,
    pub sample_factor: f64,
}

impl Default for OperatorHyper {
    fn default() -> Self {
        OperatorHyper {
            kernel_size: 2,
            dilation: 1,
            diffusion_k: 2,
            heads: 1,
            sample_factor: 1.0,
        }
    }
}

/// Graph tensors shared by every spatial operator in a model.
#[derive(Clone)]
pub struct OpContext<F: Scalar> {
    /// `[D_O^{-1} A, D_I^{-1} A^T]`; identity pair when the dataset has no graph.
    pub supports: Vec<Arc<Array2<F>>>,
    /// Chebyshev polynomials of the scaled Laplacian, orders `0..K`.
    pub cheby: Vec<Arc<Array2<F>>>,
}

impl<F: Scalar> OpContext<F> {
    pub fn from_adjacency(adjacency: Option<&Array2<F>>, n: usize, k: usize) -> Result<Self> {
        let supports = match adjacency {
            Some(a) => crate::data::build_supports(a)?,
            None => crate::data::identity_supports(n),
        };
        let lt = match adjacency {
            Some(a) => crate::data::scaled_laplacian(a)?,
            None => {
                // no graph: scaled laplacian of the empty graph is -I
                let mut m = Array2::<F>::eye(n);
                m.mapv_inplace(|v| -v);
                m
            }
        };
        let cheby = crate::data::chebyshev_polynomials(&lt, k.max(1));
        Ok(OpContext {
            supports: supports.into_iter().map(Arc::new).collect(),
            cheby: cheby.into_iter().map(Arc::new).collect(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.supports[0].nrows()
    }
}

enum OpWeights {
    None,
    Gdcc {
        w1: ParamId,
        b1: ParamId,
        w2: ParamId,
        b2: ParamId,
    },
    Attn {
        wq: ParamId,
        wk: ParamId,
        wv: ParamId,
        sparse: bool,
        time_axis: bool,
    },
    Dgcn {
        fwd: Vec<ParamId>,
        bwd: Vec<ParamId>,
    },
    Cheby {
        w: Vec<ParamId>,
    },
}

struct BnWrap {
    gamma: ParamId,
    beta: ParamId,
    run_mean: ParamId,
    run_var: ParamId,
}

/// One searchable (or reference) operator with its learnable weights.
pub struct OperatorInstance<F: Scalar> {
    pub kind: OperatorKind,
    pub uid: u64,
    pub width: usize,
    pub hyper: OperatorHyper,
    weights: OpWeights,
    bn: Option<BnWrap>,
    _marker: std::marker::PhantomData<F>,
}

impl<F: Scalar> OperatorInstance<F> {
    /// Allocate weights in `store` under `name.*`. `uid` must be unique per
    /// instance within a model; it seeds the sparse-attention sampling.
    pub fn build<R: Rng>(
        kind: OperatorKind,
        width: usize,
        hyper: OperatorHyper,
        name: &str,
        uid: u64,
        store: &mut ParamStore<F>,
        rng: &mut R,
    ) -> Result<Self> {
        let d = width;
        let weights = match kind {
            OperatorKind::Zero | OperatorKind::Identity => OpWeights::None,
            OperatorKind::Gdcc => {
                let k = hyper.kernel_size;
                OpWeights::Gdcc {
                    w1: store.add(
                        format!("{name}.w1"),
                        ParamGroup::Weight,
                        glorot(rng, &[k, d, d], k * d, d),
                    ),
                    b1: store.add(format!("{name}.b1"), ParamGroup::Weight, zeros(&[d])),
                    w2: store.add(
                        format!("{name}.w2"),
                        ParamGroup::Weight,
                        glorot(rng, &[k, d, d], k * d, d),
                    ),
                    b2: store.add(format!("{name}.b2"), ParamGroup::Weight, zeros(&[d])),
                }
            }
            OperatorKind::InfT | OperatorKind::InfS | OperatorKind::TransformerT
            | OperatorKind::TransformerS => {
                if hyper.heads != 1 {
                    if d % hyper.heads != 0 {
                        return Err(Error::config(format!(
                            "width {d} not divisible by {} heads",
                            hyper.heads
                        )));
                    }
                }
                OpWeights::Attn {
                    wq: store.add(
                        format!("{name}.wq"),
                        ParamGroup::Weight,
                        glorot(rng, &[d, d], d, d),
                    ),
                    wk: store.add(
                        format!("{name}.wk"),
                        ParamGroup::Weight,
                        glorot(rng, &[d, d], d, d),
                    ),
                    wv: store.add(
                        format!("{name}.wv"),
                        ParamGroup::Weight,
                        glorot(rng, &[d, d], d, d),
                    ),
                    sparse: matches!(kind, OperatorKind::InfT | OperatorKind::InfS),
                    time_axis: matches!(kind, OperatorKind::InfT | OperatorKind::TransformerT),
                }
            }
            OperatorKind::Dgcn => {
                let hops = hyper.diffusion_k + 1;
                let mk = |store: &mut ParamStore<F>, rng: &mut R, dir: &str| {
                    (0..hops)
                        .map(|k| {
                            store.add(
                                format!("{name}.{dir}{k}"),
                                ParamGroup::Weight,
                                glorot(rng, &[d, d], d, d),
                            )
                        })
                        .collect::<Vec<_>>()
                };
                let fwd = mk(store, rng, "wf");
                let bwd = mk(store, rng, "wb");
                OpWeights::Dgcn { fwd, bwd }
            }
            OperatorKind::ChebyGcn => {
                let orders = hyper.diffusion_k.max(1);
                OpWeights::Cheby {
                    w: (0..orders)
                        .map(|k| {
                            store.add(
                                format!("{name}.wc{k}"),
                                ParamGroup::Weight,
                                glorot(rng, &[d, d], d, d),
                            )
                        })
                        .collect(),
                }
            }
        };
        let bn = if kind.has_weights() {
            Some(BnWrap {
                gamma: store.add(format!("{name}.bn_g"), ParamGroup::Weight, ones(&[d])),
                beta: store.add(format!("{name}.bn_b"), ParamGroup::Weight, zeros(&[d])),
                run_mean: store.add(format!("{name}.bn_rm"), ParamGroup::Buffer, zeros(&[d])),
                run_var: store.add(format!("{name}.bn_rv"), ParamGroup::Buffer, ones(&[d])),
            })
        } else {
            None
        };
        Ok(OperatorInstance {
            kind,
            uid,
            width,
            hyper,
            weights,
            bn,
            _marker: std::marker::PhantomData,
        })
    }

    /// Shape-preserving forward over `[B, N, T, width]`. Parametric operators
    /// run as activation -> operator -> normalization.
    pub fn forward(&self, fwd: &mut Fwd<F>, z: Vid, ctx: &OpContext<F>) -> Vid {
        match self.kind {
            OperatorKind::Zero => {
                let shape = fwd.tape.value(z).shape().to_vec();
                return fwd.constant(ArrayD::zeros(IxDyn(&shape)));
            }
            OperatorKind::Identity => return z,
            _ => {}
        }
        let h = fwd.tape.relu(z);
        let h = self.core(fwd, h, ctx);
        self.normalize(fwd, h)
    }

    /// The bare operator map from Table-style equations, without the
    /// activation/normalization wrapper. Zero and identity are themselves.
    pub fn core_forward(&self, fwd: &mut Fwd<F>, z: Vid, ctx: &OpContext<F>) -> Vid {
        match self.kind {
            OperatorKind::Zero => {
                let shape = fwd.tape.value(z).shape().to_vec();
                fwd.constant(ArrayD::zeros(IxDyn(&shape)))
            }
            OperatorKind::Identity => z,
            _ => self.core(fwd, z, ctx),
        }
    }

    fn core(&self, fwd: &mut Fwd<F>, h: Vid, ctx: &OpContext<F>) -> Vid {
        match &self.weights {
            OpWeights::None => unreachable!("non-parametric ops return early"),
            OpWeights::Gdcc { w1, b1, w2, b2 } => {
                let (w1, b1, w2, b2) = (
                    fwd.param(*w1),
                    fwd.param(*b1),
                    fwd.param(*w2),
                    fwd.param(*b2),
                );
                let lin = fwd.tape.conv_causal(h, w1, b1, self.hyper.dilation);
                let gate_pre = fwd.tape.conv_causal(h, w2, b2, self.hyper.dilation);
                let gate = fwd.tape.sigmoid(gate_pre);
                fwd.tape.mul(lin, gate)
            }
            OpWeights::Dgcn { fwd: wf, bwd: wb } => {
                let mut terms = Vec::new();
                for (dir, ws) in [(0usize, wf), (1usize, wb)] {
                    let support = ctx.supports[dir].clone();
                    let mut cur = h;
                    for (k, w) in ws.iter().enumerate() {
                        if k > 0 {
                            cur = fwd.tape.mix_nodes(support.clone(), cur);
                        }
                        let wid = fwd.param(*w);
                        terms.push(fwd.tape.linear_last(cur, wid));
                    }
                }
                fwd.tape.add_n(&terms)
            }
            OpWeights::Cheby { w } => {
                let mut terms = Vec::new();
                for (k, wk) in w.iter().enumerate() {
                    let mixed = if k == 0 {
                        h
                    } else {
                        fwd.tape.mix_nodes(ctx.cheby[k].clone(), h)
                    };
                    let wid = fwd.param(*wk);
                    terms.push(fwd.tape.linear_last(mixed, wid));
                }
                fwd.tape.add_n(&terms)
            }
            OpWeights::Attn {
                wq,
                wk,
                wv,
                sparse,
                time_axis,
            } => {
                let (wq, wk, wv) = (fwd.param(*wq), fwd.param(*wk), fwd.param(*wv));
                let input = if *time_axis {
                    h
                } else {
                    fwd.tape.swap_axes(h, 1, 2)
                };
                let heads = self.hyper.heads;
                let out = if heads == 1 {
                    attention_axis2(
                        fwd,
                        input,
                        wq,
                        wk,
                        wv,
                        *sparse,
                        self.hyper.sample_factor,
                        self.uid,
                    )
                } else {
                    // head h projects the full input through the h-th output
                    // slice of each projection matrix
                    let dh = self.width / heads;
                    let mut acc = None;
                    for hh in 0..heads {
                        let (lo, hi) = (hh * dh, (hh + 1) * dh);
                        let wqs = fwd.tape.slice_axis(wq, 1, lo, hi);
                        let wks = fwd.tape.slice_axis(wk, 1, lo, hi);
                        let wvs = fwd.tape.slice_axis(wv, 1, lo, hi);
                        let q = fwd.tape.linear_last(input, wqs);
                        let k = fwd.tape.linear_last(input, wks);
                        let v = fwd.tape.linear_last(input, wvs);
                        let part = crate::ops::attention::attention_core(
                            fwd,
                            q,
                            k,
                            v,
                            *sparse,
                            self.hyper.sample_factor,
                            self.uid.wrapping_add(hh as u64 + 1),
                        );
                        acc = Some(match acc {
                            None => part,
                            Some(prev) => fwd.tape.concat_axis(prev, part, 3),
                        });
                    }
                    acc.unwrap()
                };
                if *time_axis {
                    out
                } else {
                    fwd.tape.swap_axes(out, 1, 2)
                }
            }
        }
    }

    fn normalize(&self, fwd: &mut Fwd<F>, h: Vid) -> Vid {
        let bn = self.bn.as_ref().expect("parametric ops carry a norm");
        let gamma = fwd.param(bn.gamma);
        let beta = fwd.param(bn.beta);
        let (y, stats) = if fwd.train {
            fwd.tape.batch_norm(h, gamma, None, F::from_f64_lossy(BN_EPS))
        } else {
            let rm = to_arr1(fwd.store().value(bn.run_mean));
            let rv = to_arr1(fwd.store().value(bn.run_var));
            fwd.tape
                .batch_norm(h, gamma, Some((&rm, &rv)), F::from_f64_lossy(BN_EPS))
        };
        if let Some(s) = stats {
            let mom = F::from_f64_lossy(BN_MOMENTUM);
            let one = F::one();
            update_running(fwd.store_mut(), bn.run_mean, &s.mean, mom, one);
            update_running(fwd.store_mut(), bn.run_var, &s.var, mom, one);
        }
        fwd.tape.add_bias(y, beta)
    }

    /// Total number of learnable scalars in this instance.
    pub fn weight_count(&self, store: &ParamStore<F>) -> usize {
        let mut ids: Vec<ParamId> = Vec::new();
        match &self.weights {
            OpWeights::None => {}
            OpWeights::Gdcc { w1, b1, w2, b2 } => ids.extend([*w1, *b1, *w2, *b2]),
            OpWeights::Attn { wq, wk, wv, .. } => ids.extend([*wq, *wk, *wv]),
            OpWeights::Dgcn { fwd, bwd } => {
                ids.extend(fwd.iter().copied());
                ids.extend(bwd.iter().copied());
            }
            OpWeights::Cheby { w } => ids.extend(w.iter().copied()),
        }
        if let Some(bn) = &self.bn {
            ids.extend([bn.gamma, bn.beta]);
        }
        ids.iter().map(|id| store.value(*id).len()).sum()
    }
}

fn to_arr1<F: Scalar>(a: &ArrayD<F>) -> Array1<F> {
    a.view()
        .into_shape_with_order(a.len())
        .unwrap()
        .to_owned()
}

fn update_running<F: Scalar>(
    store: &mut ParamStore<F>,
    id: ParamId,
    batch: &Array1<F>,
    momentum: F,
    one: F,
) {
    let buf = store.value_mut(id);
    for (r, b) in buf.iter_mut().zip(batch.iter()) {
        *r = (one - momentum) * *r + momentum * *b;
    }
}
