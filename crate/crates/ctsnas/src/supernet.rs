//! The continuous relaxation: per-block micro-DAGs over the operator set
//! (alpha per edge, beta per node, temperature on alpha only) and a macro-DAG
//! over blocks (gamma), composed with an embedding layer and an output head
//! into a trainable forecasting supernet.

use ndarray::{Array2, Array4, ArrayD, IxDyn};

use crate::data::window::ForecastMode;
use crate::error::{Error, Result};
use crate::forward::Fwd;
use crate::ops::{OpContext, OperatorHyper, OperatorInstance, OperatorKind};
use crate::params::{arch_init, glorot, zeros, ParamGroup, ParamId, ParamStore};
use crate::rng;
use crate::scalar::Scalar;
use crate::tape::Vid;

/// Structural configuration of the supernet.
#[derive(Debug, Clone)]
pub struct SuperNetConfig {
    /// Hidden nodes per micro-DAG.
    pub m: usize,
    /// Number of ST-blocks.
    pub b: usize,
    /// Hidden width.
    pub d: usize,
    /// Fraction of channels entering the operator mixture.
    pub partial_channel_fraction: f64,
    /// Residual connection from block input to block output.
    pub residual: bool,
    /// Share one {alpha, beta} set across all blocks and fix a chain
    /// backbone (the "single block, stacked" search variant).
    pub shared_micro: bool,
    pub n_features: usize,
    pub n_nodes: usize,
    /// Output steps (Q for multi-step, 1 for single-step).
    pub out_steps: usize,
    pub mode: ForecastMode,
    pub hyper: OperatorHyper,
}

impl SuperNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::config("M must be at least 2"));
        }
        if self.b < 1 {
            return Err(Error::config("B must be at least 1"));
        }
        if !(self.partial_channel_fraction > 0.0 && self.partial_channel_fraction <= 1.0) {
            return Err(Error::config("partial_channel_fraction must lie in (0, 1]"));
        }
        if self.d == 0 || self.n_features == 0 || self.n_nodes == 0 || self.out_steps == 0 {
            return Err(Error::config("zero-sized model dimension"));
        }
        Ok(())
    }

    pub fn mixture_width(&self) -> usize {
        ((self.partial_channel_fraction * self.d as f64).ceil() as usize).clamp(1, self.d)
    }
}

/// Number of node pairs (edges) in one micro-DAG.
pub fn micro_edge_count(m: usize) -> usize {
    m * (m - 1) / 2
}

/// Cardinality of the micro search space: `|O|^(M(M-1)/2)`.
pub fn count_micro_space(m: usize, n_ops: usize) -> u128 {
    (n_ops as u128).pow(micro_edge_count(m) as u32)
}

/// One annealing step: `max(tau * factor, floor)`.
pub fn anneal_temperature<F: Scalar>(tau: F, factor: F, floor: F) -> F {
    (tau * factor).max(floor)
}

/// Temperature schedule value after `epoch` annealing steps.
pub fn tau_at_epoch<F: Scalar>(init: F, factor: F, floor: F, epoch: usize) -> F {
    let mut t = init;
    for _ in 0..epoch {
        t = anneal_temperature(t, factor, floor);
    }
    t
}

/// Softmax of `values / tau` as plain numbers (used for derivation, logging
/// and tests; the tape has its own softmax for gradient flow).
pub fn softmax_tempered(values: &[f64], tau: f64) -> Vec<f64> {
    let scaled: Vec<f64> = values.iter().map(|v| v / tau).collect();
    let mx = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|v| (v - mx).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

struct EdgeOps<F: Scalar> {
    ops: Vec<OperatorInstance<F>>,
}

struct SuperBlock<F: Scalar> {
    /// Edges in canonical order: (0,1), (0,2), (1,2), (0,3), ...
    edges: Vec<EdgeOps<F>>,
}

/// Architecture parameter handles for one block's micro-DAG.
pub struct MicroParamIds {
    /// Per edge: alpha vector of length |O|.
    pub alpha: Vec<ParamId>,
    /// Per node j in 1..M-1 (index j-1): beta vector of length j.
    pub beta: Vec<ParamId>,
}

/// Plain-number view of one block's architecture parameters.
#[derive(Debug, Clone)]
pub struct MicroParamValues {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

pub struct SuperNet<F: Scalar> {
    pub cfg: SuperNetConfig,
    ctx: OpContext<F>,
    embed_w: ParamId,
    embed_b: ParamId,
    blocks: Vec<SuperBlock<F>>,
    micro: Vec<MicroParamIds>,
    /// Per block j >= 2 (index j-2): gamma vector of length j, ordering
    /// predecessors as [embedding, b_1, ..., b_{j-1}].
    gamma: Vec<ParamId>,
    head_w: ParamId,
    head_b: ParamId,
}

impl<F: Scalar> SuperNet<F> {
    /// Build the supernet and its parameter store. Operator weights are
    /// sized to the mixture width when partial channels are active.
    pub fn build(
        cfg: SuperNetConfig,
        adjacency: Option<&Array2<F>>,
        seed: u64,
    ) -> Result<(Self, ParamStore<F>)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init_rng = rng::stream(seed, "init", &[]);
        let ctx = OpContext::from_adjacency(adjacency, cfg.n_nodes, cfg.hyper.diffusion_k)?;

        let embed_w = store.add(
            "embed.w",
            ParamGroup::Weight,
            glorot(&mut init_rng, &[cfg.n_features, cfg.d], cfg.n_features, cfg.d),
        );
        let embed_b = store.add("embed.b", ParamGroup::Weight, zeros(&[cfg.d]));

        let dp = cfg.mixture_width();
        let n_ops = OperatorKind::SEARCHABLE.len();
        let mut uid = 0u64;
        let mut blocks = Vec::with_capacity(cfg.b);
        for bi in 0..cfg.b {
            let mut edges = Vec::new();
            for j in 1..cfg.m {
                for i in 0..j {
                    let mut ops = Vec::with_capacity(n_ops);
                    for kind in OperatorKind::SEARCHABLE {
                        uid += 1;
                        ops.push(OperatorInstance::build(
                            kind,
                            dp,
                            cfg.hyper,
                            &format!("block{bi}.e{i}_{j}.{}", kind.tag()),
                            uid,
                            &mut store,
                            &mut init_rng,
                        )?);
                    }
                    edges.push(EdgeOps { ops });
                }
            }
            blocks.push(SuperBlock { edges });
        }

        let micro_sets = if cfg.shared_micro { 1 } else { cfg.b };
        let mut micro = Vec::with_capacity(micro_sets);
        for bi in 0..micro_sets {
            let mut alpha = Vec::new();
            let mut beta = Vec::new();
            for j in 1..cfg.m {
                for i in 0..j {
                    alpha.push(store.add(
                        format!("theta.block{bi}.alpha{i}_{j}"),
                        ParamGroup::Theta,
                        arch_init(&mut init_rng, n_ops),
                    ));
                }
                beta.push(store.add(
                    format!("theta.block{bi}.beta{j}"),
                    ParamGroup::Theta,
                    arch_init(&mut init_rng, j),
                ));
            }
            micro.push(MicroParamIds { alpha, beta });
        }

        let mut gamma = Vec::new();
        if !cfg.shared_micro {
            for j in 2..=cfg.b {
                gamma.push(store.add(
                    format!("theta.gamma{j}"),
                    ParamGroup::Theta,
                    arch_init(&mut init_rng, j),
                ));
            }
        }

        let head_w = store.add(
            "head.w",
            ParamGroup::Weight,
            glorot(&mut init_rng, &[cfg.d, cfg.out_steps], cfg.d, cfg.out_steps),
        );
        let head_b = store.add("head.b", ParamGroup::Weight, zeros(&[cfg.out_steps]));

        Ok((
            SuperNet {
                cfg,
                ctx,
                embed_w,
                embed_b,
                blocks,
                micro,
                gamma,
                head_w,
                head_b,
            },
            store,
        ))
    }

    fn edge_index(&self, i: usize, j: usize) -> usize {
        // edges enumerated j-major: (0,1), (0,2), (1,2), (0,3), ...
        j * (j - 1) / 2 + i
    }

    fn micro_ids(&self, block: usize) -> &MicroParamIds {
        if self.cfg.shared_micro {
            &self.micro[0]
        } else {
            &self.micro[block]
        }
    }

    /// Weighted sum of all operators on one edge, with partial channels: the
    /// mixture runs on the leading channel slice, the rest passes through,
    /// and the result is cyclically channel-shifted.
    fn mixed_edge(
        &self,
        fwd: &mut Fwd<F>,
        block: usize,
        i: usize,
        j: usize,
        h_i: Vid,
        tau: F,
    ) -> Vid {
        let dp = self.cfg.mixture_width();
        let d = self.cfg.d;
        let (xa, xb) = if dp < d {
            (
                fwd.tape.slice_axis(h_i, 3, 0, dp),
                Some(fwd.tape.slice_axis(h_i, 3, dp, d)),
            )
        } else {
            (h_i, None)
        };
        let alpha_id = self.micro_ids(block).alpha[self.edge_index(i, j)];
        let alpha = fwd.param(alpha_id);
        let inv_tau = F::one() / tau;
        let scaled = fwd.tape.scale(alpha, inv_tau);
        let weights = fwd.tape.softmax_last(scaled);

        let edge = &self.blocks[block].edges[self.edge_index(i, j)];
        let mut acc: Option<Vid> = None;
        for (o, op) in edge.ops.iter().enumerate() {
            let out = op.forward(fwd, xa, &self.ctx);
            let w_o = fwd.tape.index(weights, o);
            let term = fwd.tape.mul_scalar(out, w_o);
            acc = Some(match acc {
                None => term,
                Some(prev) => fwd.tape.add(prev, term),
            });
        }
        let mixed = acc.expect("operator set is non-empty");
        match xb {
            None => mixed,
            Some(bypass) => {
                let full = fwd.tape.concat_axis(mixed, bypass, 3);
                fwd.tape.rotate_last(full, dp)
            }
        }
    }

    /// `h_j = sum_i softmax(beta_j)_i * f_ij` (no temperature on beta).
    fn node_aggregate(&self, fwd: &mut Fwd<F>, beta_id: ParamId, transforms: &[Vid]) -> Vid {
        let beta = fwd.param(beta_id);
        let weights = fwd.tape.softmax_last(beta);
        let mut acc: Option<Vid> = None;
        for (i, f_ij) in transforms.iter().enumerate() {
            let w_i = fwd.tape.index(weights, i);
            let term = fwd.tape.mul_scalar(*f_ij, w_i);
            acc = Some(match acc {
                None => term,
                Some(prev) => fwd.tape.add(prev, term),
            });
        }
        acc.expect("nodes have at least one predecessor")
    }

    /// Evaluate one block's micro-DAG; returns `h_{M-1}` (plus the residual
    /// connection from `h_0` when enabled).
    fn micro_forward(&self, fwd: &mut Fwd<F>, block: usize, h0: Vid, tau: F) -> Vid {
        let m = self.cfg.m;
        let mut h = Vec::with_capacity(m);
        h.push(h0);
        for j in 1..m {
            let transforms: Vec<Vid> = (0..j)
                .map(|i| self.mixed_edge(fwd, block, i, j, h[i], tau))
                .collect();
            let beta_id = self.micro_ids(block).beta[j - 1];
            h.push(self.node_aggregate(fwd, beta_id, &transforms));
        }
        let out = h[m - 1];
        if self.cfg.residual {
            fwd.tape.add(out, h0)
        } else {
            out
        }
    }

    fn embed(&self, fwd: &mut Fwd<F>, inputs: &Array4<F>) -> Vid {
        let x = fwd.constant(inputs.clone().into_dyn());
        let w = fwd.param(self.embed_w);
        let b = fwd.param(self.embed_b);
        let z = fwd.tape.linear_last(x, w);
        fwd.tape.add_bias(z, b)
    }

    /// Merged block features with the learned macro topology: block `b_j`
    /// reads the gamma-weighted sum of [embedding, b_1, .., b_{j-1}] outputs;
    /// every block output feeds the merge.
    pub fn forward_features(&self, fwd: &mut Fwd<F>, inputs: &Array4<F>, tau: F) -> Vid {
        if self.cfg.shared_micro {
            return self.forward_features_chain(fwd, inputs, tau);
        }
        let z = self.embed(fwd, inputs);
        let mut outs: Vec<Vid> = Vec::with_capacity(self.cfg.b);
        for j in 1..=self.cfg.b {
            let e_in = if j == 1 {
                z
            } else {
                let gamma = fwd.param(self.gamma[j - 2]);
                let weights = fwd.tape.softmax_last(gamma);
                let mut acc: Option<Vid> = None;
                for i in 0..j {
                    let pred = if i == 0 { z } else { outs[i - 1] };
                    let w_i = fwd.tape.index(weights, i);
                    let term = fwd.tape.mul_scalar(pred, w_i);
                    acc = Some(match acc {
                        None => term,
                        Some(prev) => fwd.tape.add(prev, term),
                    });
                }
                acc.unwrap()
            };
            outs.push(self.micro_forward(fwd, j - 1, e_in, tau));
        }
        fwd.tape.add_n(&outs)
    }

    /// Merged block features with a fixed chain backbone (ignores gamma).
    pub fn forward_features_chain(&self, fwd: &mut Fwd<F>, inputs: &Array4<F>, tau: F) -> Vid {
        let z = self.embed(fwd, inputs);
        let mut outs: Vec<Vid> = Vec::with_capacity(self.cfg.b);
        let mut cur = z;
        for j in 0..self.cfg.b {
            cur = self.micro_forward(fwd, j, cur, tau);
            outs.push(cur);
        }
        fwd.tape.add_n(&outs)
    }

    /// Full forecast: `[B, N, out_steps, 1]`.
    pub fn forward(&self, fwd: &mut Fwd<F>, inputs: &Array4<F>, tau: F) -> Vid {
        let features = self.forward_features(fwd, inputs, tau);
        self.head(fwd, features, inputs.shape()[2])
    }

    /// Output head: last timestep's features through ReLU then a linear map
    /// to the output steps.
    pub fn head(&self, fwd: &mut Fwd<F>, features: Vid, t_len: usize) -> Vid {
        let last = fwd.tape.slice_axis(features, 2, t_len - 1, t_len);
        let act = fwd.tape.relu(last);
        let w = fwd.param(self.head_w);
        let b = fwd.param(self.head_b);
        let proj = fwd.tape.linear_last(act, w);
        let proj = fwd.tape.add_bias(proj, b);
        fwd.tape.swap_axes(proj, 2, 3)
    }

    /// Architecture parameter values per block, as plain numbers.
    pub fn micro_values(&self, store: &ParamStore<F>) -> Vec<MicroParamValues> {
        let sets = if self.cfg.shared_micro { 1 } else { self.cfg.b };
        (0..sets)
            .map(|bi| MicroParamValues {
                alpha: self.micro[bi]
                    .alpha
                    .iter()
                    .map(|id| store.value(*id).iter().map(|v| v.to_f64_lossy()).collect())
                    .collect(),
                beta: self.micro[bi]
                    .beta
                    .iter()
                    .map(|id| store.value(*id).iter().map(|v| v.to_f64_lossy()).collect())
                    .collect(),
            })
            .collect()
    }

    /// Gamma values per block `j >= 2`, predecessors `[embed, b_1, ..]`.
    pub fn gamma_values(&self, store: &ParamStore<F>) -> Vec<Vec<f64>> {
        self.gamma
            .iter()
            .map(|id| store.value(*id).iter().map(|v| v.to_f64_lossy()).collect())
            .collect()
    }

    /// Mean over all edges of the max tempered alpha softmax weight.
    pub fn sharpness(&self, store: &ParamStore<F>, tau: f64) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for mv in self.micro_values(store) {
            for alpha in &mv.alpha {
                let w = softmax_tempered(alpha, tau);
                total += w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                count += 1;
            }
        }
        total / count as f64
    }

    /// Force the gamma parameters to a (numerically exact) one-hot chain:
    /// block j attends only to block j-1.
    pub fn force_chain_gamma(&self, store: &mut ParamStore<F>) {
        let big = F::from_f64_lossy(1e4);
        for (idx, id) in self.gamma.iter().enumerate() {
            let j = idx + 2;
            let v = store.value_mut(*id);
            for (i, e) in v.iter_mut().enumerate() {
                *e = if i == j - 1 { big } else { -big };
            }
        }
    }

    pub fn set_alpha_one_hot(&self, store: &mut ParamStore<F>, kind: OperatorKind) {
        let big = F::from_f64_lossy(1e4);
        let o = kind.searchable_index().expect("searchable");
        for mp in &self.micro {
            for id in &mp.alpha {
                let v = store.value_mut(*id);
                for (i, e) in v.iter_mut().enumerate() {
                    *e = if i == o { big } else { -big };
                }
            }
        }
    }

    pub fn theta_param_count(&self, store: &ParamStore<F>) -> usize {
        store.scalar_count(ParamGroup::Theta)
    }

    pub fn context(&self) -> &OpContext<F> {
        &self.ctx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::PlanMode;

    fn small_cfg(m: usize, b: usize, shared: bool) -> SuperNetConfig {
        SuperNetConfig {
            m,
            b,
            d: 8,
            partial_channel_fraction: 0.25,
            residual: true,
            shared_micro: shared,
            n_features: 2,
            n_nodes: 3,
            out_steps: 4,
            mode: ForecastMode::MultiStep,
            hyper: OperatorHyper::default(),
        }
    }

    fn inputs(bt: usize, n: usize, p: usize, f: usize, salt: u64) -> Array4<f64> {
        Array4::from_shape_fn((bt, n, p, f), |(a, b, c, d)| {
            let x = (a * 131 + b * 73 + c * 17 + d * 7 + salt as usize) as f64;
            (x * 0.37).sin() * 0.8
        })
    }

    #[test]
    fn softmax_weights_examples() {
        // equal alphas, tau 1 -> each weight 1/6
        let w = softmax_tempered(&[0.3; 6], 1.0);
        for wi in &w {
            assert!((wi - 1.0 / 6.0).abs() < 1e-12);
        }
        // sharpening: tau -> 0.001 concentrates on the argmax
        let w = softmax_tempered(&[1.0, 2.0, 1.0, 1.0, 1.0, 1.0], 0.001);
        assert!((w[1] - 1.0).abs() < 1e-6);
        for (i, wi) in w.iter().enumerate() {
            if i != 1 {
                assert!(*wi < 1e-6);
            }
        }
        // hand softmax: [0, ln 2, 0] at tau 1 -> [0.25, 0.5, 0.25]
        let w = softmax_tempered(&[0.0, (2.0f64).ln(), 0.0], 1.0);
        assert!((w[0] - 0.25).abs() < 1e-12);
        assert!((w[1] - 0.5).abs() < 1e-12);
        assert!((w[2] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn anneal_examples() {
        assert_eq!(anneal_temperature(5.0, 0.9, 0.001), 4.5);
        // repeated application reaches the floor after 81 steps from 5.0
        let mut tau = 5.0f64;
        let mut steps = 0;
        while tau > 0.001 {
            tau = anneal_temperature(tau, 0.9, 0.001);
            steps += 1;
            assert!(steps < 1000);
        }
        assert_eq!(steps, 81);
        assert_eq!(anneal_temperature(0.001, 0.9, 0.001), 0.001);
        // closed-form helper agrees with iterated recurrence
        assert_eq!(tau_at_epoch(5.0, 0.9, 0.001, 81), 0.001);
        let t60: f64 = tau_at_epoch(5.0, 0.9, 0.001, 60);
        assert!((t60 - 5.0 * 0.9f64.powi(60)).abs() < 1e-12);
    }

    #[test]
    fn micro_space_cardinality() {
        assert_eq!(count_micro_space(5, 6), 60_466_176);
        assert_eq!(count_micro_space(2, 6), 6);
        assert_eq!(count_micro_space(3, 3), 27);
    }

    #[test]
    fn gamma_count_matches_invariant() {
        for b in 1..=5 {
            let cfg = small_cfg(3, b, false);
            let (net, store) = SuperNet::<f64>::build(cfg, None, 7).unwrap();
            let total: usize = net.gamma.iter().map(|id| store.value(*id).len()).sum();
            assert_eq!(total, b * (b - 1) / 2 + (b - 1), "B={b}");
        }
    }

    #[test]
    fn alpha_beta_counts_match_invariants() {
        let cfg = small_cfg(5, 2, false);
        let (net, store) = SuperNet::<f64>::build(cfg, None, 7).unwrap();
        for mp in &net.micro {
            assert_eq!(mp.alpha.len(), 5 * 4 / 2);
            for (ji, beta) in mp.beta.iter().enumerate() {
                assert_eq!(store.value(*beta).len(), ji + 1);
            }
        }
    }

    #[test]
    fn forward_shapes_multi_and_degenerate_macro() {
        // B=1: embedding -> block -> head, no gamma parameters
        let cfg = small_cfg(3, 1, false);
        let (net, mut store) = SuperNet::<f64>::build(cfg, None, 7).unwrap();
        assert!(net.gamma.is_empty());
        let x = inputs(2, 3, 6, 2, 1);
        let mut fwd = Fwd::new(&mut store, true, 7, PlanMode::Fresh);
        let pred = net.forward(&mut fwd, &x, 1.0);
        assert_eq!(fwd.tape.value(pred).shape(), &[2, 3, 4, 1]);
        assert!(fwd.tape.value(pred).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn node_aggregate_weighted_sum_example() {
        // SoftMax(beta) = (0.3, 0.3, 0.4) with constant transforms
        let mut store = ParamStore::<f64>::new();
        let beta = store.add("beta", ParamGroup::Theta, {
            let mut v = zeros(&[3]);
            let s = v.as_slice_mut().unwrap();
            s[0] = 0.3f64.ln();
            s[1] = 0.3f64.ln();
            s[2] = 0.4f64.ln();
            v
        });
        let cfg = small_cfg(3, 1, false);
        let (net, _) = SuperNet::<f64>::build(cfg, None, 7).unwrap();
        let mut fwd = Fwd::new(&mut store, false, 0, PlanMode::Fresh);
        let f0 = fwd.constant(ArrayD::from_elem(IxDyn(&[1, 1, 1, 1]), 10.0));
        let f1 = fwd.constant(ArrayD::from_elem(IxDyn(&[1, 1, 1, 1]), 20.0));
        let f2 = fwd.constant(ArrayD::from_elem(IxDyn(&[1, 1, 1, 1]), 30.0));
        let h = net.node_aggregate(&mut fwd, beta, &[f0, f1, f2]);
        let got = fwd.tape.value(h)[IxDyn(&[0, 0, 0, 0])];
        assert!((got - (0.3 * 10.0 + 0.3 * 20.0 + 0.4 * 30.0)).abs() < 1e-12);
    }

    #[test]
    fn node_aggregate_single_predecessor_is_identity_weight() {
        let mut store = ParamStore::<f64>::new();
        let beta = store.add("beta", ParamGroup::Theta, arch_init(&mut rng::stream(1, "t", &[]), 1));
        let cfg = small_cfg(3, 1, false);
        let (net, _) = SuperNet::<f64>::build(cfg, None, 7).unwrap();
        let mut fwd = Fwd::new(&mut store, false, 0, PlanMode::Fresh);
        let f0 = fwd.constant(ArrayD::from_elem(IxDyn(&[1, 1, 1, 1]), 3.5));
        let h = net.node_aggregate(&mut fwd, beta, &[f0]);
        assert_eq!(fwd.tape.value(h)[IxDyn(&[0, 0, 0, 0])], 3.5);
    }

    #[test]
    fn node_aggregate_convex_combination_of_equal_inputs() {
        let mut store = ParamStore::<f64>::new();
        let beta = store.add("beta", ParamGroup::Theta, {
            let mut v = zeros(&[3]);
            let s = v.as_slice_mut().unwrap();
            s[0] = 1.3;
            s[1] = -0.2;
            s[2] = 0.55;
            v
        });
        let cfg = small_cfg(3, 1, false);
        let (net, _) = SuperNet::<f64>::build(cfg, None, 7).unwrap();
        let mut fwd = Fwd::new(&mut store, false, 0, PlanMode::Fresh);
        let v = ArrayD::from_elem(IxDyn(&[1, 2, 2, 1]), -1.25);
        let ids: Vec<Vid> = (0..3).map(|_| fwd.constant(v.clone())).collect();
        let h = net.node_aggregate(&mut fwd, beta, &ids);
        for x in fwd.tape.value(h).iter() {
            assert!((x + 1.25).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_mixture_without_residual_passes_input_through() {
        let mut cfg = small_cfg(3, 1, false);
        cfg.residual = false;
        cfg.partial_channel_fraction = 1.0; // full-width mixture
        let (net, mut store) = SuperNet::<f64>::build(cfg, None, 7).unwrap();
        net.set_alpha_one_hot(&mut store, OperatorKind::Identity);
        let x = inputs(1, 3, 5, 2, 2);
        let mut fwd = Fwd::new(&mut store, true, 7, PlanMode::Fresh);
        let z = net.embed(&mut fwd, &x);
        let z_val = fwd.tape.value(z).clone();
        let out = net.micro_forward(&mut fwd, 0, z, 1.0);
        // identity one-hot on every edge makes every node equal h0
        for (a, b) in fwd.tape.value(out).iter().zip(z_val.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn three_node_dag_closed_form_with_identity_and_zero() {
        // edges: (0,1) identity, (0,2) zero, (1,2) identity; residual off.
        // h1 = h0; h2 = w0*0 + w1*h1 = softmax(beta2)[1] * h0.
        let mut cfg = small_cfg(3, 1, false);
        cfg.residual = false;
        cfg.partial_channel_fraction = 1.0;
        let (net, mut store) = SuperNet::<f64>::build(cfg, None, 7).unwrap();
        let big = 1e4;
        let set_edge = |store: &mut ParamStore<f64>, id: ParamId, hot: usize| {
            let v = store.value_mut(id);
            for (i, e) in v.iter_mut().enumerate() {
                *e = if i == hot { big } else { -big };
            }
        };
        let ids = &net.micro[0];
        let idx_id = OperatorKind::Identity.searchable_index().unwrap();
        let idx_zero = OperatorKind::Zero.searchable_index().unwrap();
        set_edge(&mut store, ids.alpha[net.edge_index(0, 1)], idx_id);
        set_edge(&mut store, ids.alpha[net.edge_index(0, 2)], idx_zero);
        set_edge(&mut store, ids.alpha[net.edge_index(1, 2)], idx_id);
        // beta for node 2: weights (0.25, 0.75)
        {
            let v = store.value_mut(ids.beta[1]);
            let s = v.as_slice_mut().unwrap();
            s[0] = 0.0;
            s[1] = (3.0f64).ln();
        }
        let x = inputs(1, 3, 4, 2, 3);
        let mut fwd = Fwd::new(&mut store, true, 7, PlanMode::Fresh);
        let z = net.embed(&mut fwd, &x);
        let z_val = fwd.tape.value(z).clone();
        let out = net.micro_forward(&mut fwd, 0, z, 1.0);
        for (a, b) in fwd.tape.value(out).iter().zip(z_val.iter()) {
            assert!((a - 0.75 * b).abs() < 1e-9, "{a} vs {}", 0.75 * b);
        }
    }

    #[test]
    fn uniform_gamma_identity_blocks_double_features() {
        let mut cfg = small_cfg(2, 2, false);
        cfg.residual = false;
        cfg.partial_channel_fraction = 1.0;
        let (net, mut store) = SuperNet::<f64>::build(cfg, None, 7).unwrap();
        net.set_alpha_one_hot(&mut store, OperatorKind::Identity);
        // uniform gamma: both predecessors of b2 weighted 1/2
        {
            let v = store.value_mut(net.gamma[0]);
            for e in v.iter_mut() {
                *e = 0.0;
            }
        }
        let x = inputs(1, 3, 4, 2, 4);
        let mut fwd = Fwd::new(&mut store, true, 7, PlanMode::Fresh);
        let z = net.embed(&mut fwd, &x);
        let z_val = fwd.tape.value(z).clone();
        let merged = net.forward_features(&mut fwd, &x, 1.0);
        // b1 out = Z; b2 in = (Z + Z)/2 = Z; b2 out = Z; merged = 2 Z
        for (a, b) in fwd.tape.value(merged).iter().zip(z_val.iter()) {
            assert!((a - 2.0 * b).abs() < 1e-9);
        }
    }

    #[test]
    fn one_hot_chain_gamma_equals_sequential_stacking() {
        let cfg = small_cfg(3, 3, false);
        let (net, mut store) = SuperNet::<f64>::build(cfg, None, 7).unwrap();
        net.force_chain_gamma(&mut store);
        let x = inputs(2, 3, 6, 2, 5);
        let run = |store: &mut ParamStore<f64>, chain: bool| {
            let mut fwd = Fwd::new(store, false, 7, PlanMode::Fresh);
            let out = if chain {
                net.forward_features_chain(&mut fwd, &x, 1.0)
            } else {
                net.forward_features(&mut fwd, &x, 1.0)
            };
            fwd.tape.value(out).clone()
        };
        let a = run(&mut store, false);
        let b = run(&mut store, true);
        for (x1, x2) in a.iter().zip(b.iter()) {
            assert!((x1 - x2).abs() < 1e-6, "{x1} vs {x2}");
        }
    }

    #[test]
    fn softmax_vectors_sum_to_one_throughout() {
        let cfg = small_cfg(4, 3, false);
        let (net, store) = SuperNet::<f64>::build(cfg, None, 3).unwrap();
        for mv in net.micro_values(&store) {
            for a in &mv.alpha {
                let s: f64 = softmax_tempered(a, 0.37).iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
            for b in &mv.beta {
                let s: f64 = softmax_tempered(b, 1.0).iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
        for g in net.gamma_values(&store) {
            let s: f64 = softmax_tempered(&g, 1.0).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sharpening_is_monotone_as_tau_decreases() {
        let alpha = [0.2, 0.9, -0.3, 0.1, 0.4, 0.0];
        let mut last = 0.0;
        for tau in [5.0, 2.0, 1.0, 0.5, 0.1, 0.01] {
            let w = softmax_tempered(&alpha, tau);
            let mx = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(mx >= last - 1e-12, "tau={tau}");
            last = mx;
        }
    }

    #[test]
    fn shared_micro_reduces_theta_parameters_by_factor_b() {
        let cfg_full = small_cfg(3, 4, false);
        let (_, store_full) = SuperNet::<f64>::build(cfg_full, None, 7).unwrap();
        let cfg_shared = small_cfg(3, 4, true);
        let (_, store_shared) = SuperNet::<f64>::build(cfg_shared, None, 7).unwrap();
        let full = store_full.scalar_count(ParamGroup::Theta);
        let shared = store_shared.scalar_count(ParamGroup::Theta);
        // full: B blocks of alpha/beta plus gamma; shared: one alpha/beta set
        let alpha_beta = 3 * 6 + (1 + 2);
        assert_eq!(shared, alpha_beta);
        assert_eq!(full, 4 * alpha_beta + (4 * 3 / 2 + 3));
    }

    #[test]
    fn theta_gradients_match_finite_differences_tiny_supernet() {
        use crate::check::grad_check_params;
        use std::collections::HashMap;
        let mut cfg = small_cfg(3, 2, false);
        cfg.d = 4;
        cfg.n_nodes = 3;
        cfg.out_steps = 2;
        let (net, mut store) = SuperNet::<f64>::build(cfg, None, 11).unwrap();
        let x = inputs(1, 3, 6, 2, 6);
        let target = std::sync::Arc::new(ArrayD::from_shape_fn(IxDyn(&[1, 3, 2, 1]), |ix| {
            (ix[1] as f64 * 0.3 - ix[2] as f64 * 0.2).cos()
        }));
        let theta_ids = store.ids_in_group(ParamGroup::Theta);
        let mut cache = HashMap::new();
        let tau = 0.7;
        let report = grad_check_params(
            &mut store,
            &theta_ids,
            |store, _| {
                let mut fwd = Fwd::new(store, true, 7, PlanMode::Cached(&mut cache));
                let pred = net.forward(&mut fwd, &x, tau);
                let loss = fwd.tape.mse_loss(pred, target.clone());
                let l = fwd.tape.value(loss)[IxDyn(&[0])];
                let grads = fwd.tape.backward(loss);
                (l, fwd.param_grads(&grads))
            },
            1e-5,
        );
        assert!(
            report.max_rel_err < 1e-4,
            "max rel err {} at {}",
            report.max_rel_err,
            report.worst_param
        );
    }
}
