//! Discrete forecasting models: fresh-weight networks built from a derived
//! genotype (full channels, no mixtures), or from explicit block layouts for
//! the operator-comparison harness.

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::data::window::ForecastMode;
use crate::error::{Error, Result};
use crate::forward::Fwd;
use crate::genotype::{BackboneSource, Genotype};
use crate::ops::{OpContext, OperatorHyper, OperatorInstance, OperatorKind};
use crate::params::{glorot, zeros, ParamGroup, ParamStore};
use crate::rng;
use crate::scalar::Scalar;
use crate::tape::Vid;

/// Explicit discrete layout: per block, per hidden node, the retained
/// `(source, operator)` edges; backbone as one predecessor per block
/// (`None` = embedding). Unlike [`Genotype`] this may carry reference
/// operators, which the comparison harness needs.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub m: usize,
    pub blocks: Vec<Vec<Vec<(usize, OperatorKind)>>>,
    pub backbone: Vec<Option<usize>>,
}

impl ModelSpec {
    pub fn from_genotype(g: &Genotype) -> Result<Self> {
        g.validate()?;
        let blocks = g
            .blocks
            .iter()
            .map(|b| {
                b.nodes
                    .iter()
                    .map(|edges| edges.iter().map(|e| (e.src, e.op)).collect())
                    .collect()
            })
            .collect();
        let mut backbone = vec![None; g.meta.b];
        for e in &g.backbone {
            backbone[e.dst - 1] = match e.src {
                BackboneSource::Embed => None,
                BackboneSource::Block(i) => Some(i),
            };
        }
        Ok(ModelSpec {
            m: g.meta.m,
            blocks,
            backbone,
        })
    }

    /// Single chain-backbone block scaffold used by the comparison harness:
    /// node 1 applies `first`, node 2 applies `second` plus an identity skip.
    pub fn scaffold(first: OperatorKind, second: OperatorKind, b: usize) -> Self {
        let block = vec![
            vec![(0, first)],
            vec![(1, second), (0, OperatorKind::Identity)],
        ];
        ModelSpec {
            m: 3,
            blocks: vec![block; b],
            backbone: (0..b).map(|i| if i == 0 { None } else { Some(i) }).collect(),
        }
    }
}

/// Everything needed to rebuild a discrete model deterministically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub residual: bool,
    pub n_features: usize,
    pub n_nodes: usize,
    pub out_steps: usize,
    pub mode: ForecastMode,
    pub kernel_size: usize,
    pub dilation: usize,
    pub diffusion_k: usize,
    pub heads: usize,
    pub sample_factor: f64,
}

impl ModelConfig {
    pub fn hyper(&self) -> OperatorHyper {
        OperatorHyper {
            kernel_size: self.kernel_size,
            dilation: self.dilation,
            diffusion_k: self.diffusion_k,
            heads: self.heads,
            sample_factor: self.sample_factor,
        }
    }

    pub fn from_hyper(
        d: usize,
        residual: bool,
        n_features: usize,
        n_nodes: usize,
        out_steps: usize,
        mode: ForecastMode,
        hyper: OperatorHyper,
    ) -> Self {
        ModelConfig {
            d,
            residual,
            n_features,
            n_nodes,
            out_steps,
            mode,
            kernel_size: hyper.kernel_size,
            dilation: hyper.dilation,
            diffusion_k: hyper.diffusion_k,
            heads: hyper.heads,
            sample_factor: hyper.sample_factor,
        }
    }
}

struct DiscreteBlock<F: Scalar> {
    /// Per hidden node: retained edges as (source node, operator instance).
    nodes: Vec<Vec<(usize, OperatorInstance<F>)>>,
}

pub struct DiscreteModel<F: Scalar> {
    pub cfg: ModelConfig,
    pub spec: ModelSpec,
    ctx: OpContext<F>,
    embed_w: crate::params::ParamId,
    embed_b: crate::params::ParamId,
    blocks: Vec<DiscreteBlock<F>>,
    head_w: crate::params::ParamId,
    head_b: crate::params::ParamId,
}

/// Build a model from a derived genotype with fresh weights (full channels).
pub fn build_discrete_model<F: Scalar>(
    genotype: &Genotype,
    cfg: ModelConfig,
    adjacency: Option<&Array2<F>>,
    seed: u64,
) -> Result<(DiscreteModel<F>, ParamStore<F>)> {
    if genotype.meta.d != cfg.d {
        return Err(Error::genotype(format!(
            "meta.D: genotype built for width {}, model configured with {}",
            genotype.meta.d, cfg.d
        )));
    }
    let spec = ModelSpec::from_genotype(genotype)?;
    build_from_spec(spec, cfg, adjacency, seed)
}

/// Build a model from an explicit layout (comparison harness path).
pub fn build_from_spec<F: Scalar>(
    spec: ModelSpec,
    cfg: ModelConfig,
    adjacency: Option<&Array2<F>>,
    seed: u64,
) -> Result<(DiscreteModel<F>, ParamStore<F>)> {
    let mut store = ParamStore::new();
    let mut init_rng = rng::stream(seed, "model-init", &[]);
    let ctx = OpContext::from_adjacency(adjacency, cfg.n_nodes, cfg.diffusion_k)?;
    let embed_w = store.add(
        "embed.w",
        ParamGroup::Weight,
        glorot(&mut init_rng, &[cfg.n_features, cfg.d], cfg.n_features, cfg.d),
    );
    let embed_b = store.add("embed.b", ParamGroup::Weight, zeros(&[cfg.d]));
    let mut uid = 0u64;
    let mut blocks = Vec::with_capacity(spec.blocks.len());
    for (bi, bspec) in spec.blocks.iter().enumerate() {
        let mut nodes = Vec::with_capacity(bspec.len());
        for (ji, edges) in bspec.iter().enumerate() {
            let j = ji + 1;
            let mut built = Vec::with_capacity(edges.len());
            for (src, kind) in edges {
                uid += 1;
                built.push((
                    *src,
                    OperatorInstance::build(
                        *kind,
                        cfg.d,
                        cfg.hyper(),
                        &format!("block{bi}.n{j}e{src}.{}", kind.tag()),
                        uid,
                        &mut store,
                        &mut init_rng,
                    )?,
                ));
            }
            nodes.push(built);
        }
        blocks.push(DiscreteBlock { nodes });
    }
    let head_w = store.add(
        "head.w",
        ParamGroup::Weight,
        glorot(&mut init_rng, &[cfg.d, cfg.out_steps], cfg.d, cfg.out_steps),
    );
    let head_b = store.add("head.b", ParamGroup::Weight, zeros(&[cfg.out_steps]));
    Ok((
        DiscreteModel {
            cfg,
            spec,
            ctx,
            embed_w,
            embed_b,
            blocks,
            head_w,
            head_b,
        },
        store,
    ))
}

impl<F: Scalar> DiscreteModel<F> {
    fn embed(&self, fwd: &mut Fwd<F>, inputs: &Array4<F>) -> Vid {
        let x = fwd.constant(inputs.clone().into_dyn());
        let w = fwd.param(self.embed_w);
        let b = fwd.param(self.embed_b);
        let z = fwd.tape.linear_last(x, w);
        fwd.tape.add_bias(z, b)
    }

    fn block_forward(&self, fwd: &mut Fwd<F>, block: &DiscreteBlock<F>, h0: Vid) -> Vid {
        let m = self.spec.m;
        let mut h = Vec::with_capacity(m);
        h.push(h0);
        for edges in &block.nodes {
            // discrete node: unweighted sum of its retained edges' outputs
            let mut acc: Option<Vid> = None;
            for (src, op) in edges {
                let out = op.forward(fwd, h[*src], &self.ctx);
                acc = Some(match acc {
                    None => out,
                    Some(prev) => fwd.tape.add(prev, out),
                });
            }
            h.push(acc.expect("nodes keep at least one edge"));
        }
        let out = h[m - 1];
        if self.cfg.residual {
            fwd.tape.add(out, h0)
        } else {
            out
        }
    }

    /// Merged features: every block output summed, as in the supernet.
    pub fn forward_features(&self, fwd: &mut Fwd<F>, inputs: &Array4<F>) -> Vid {
        let z = self.embed(fwd, inputs);
        let mut outs: Vec<Vid> = Vec::with_capacity(self.blocks.len());
        for (bi, block) in self.blocks.iter().enumerate() {
            let input = match self.spec.backbone[bi] {
                None => z,
                Some(p) => outs[p - 1],
            };
            outs.push(self.block_forward(fwd, block, input));
        }
        fwd.tape.add_n(&outs)
    }

    pub fn forward(&self, fwd: &mut Fwd<F>, inputs: &Array4<F>) -> Vid {
        let features = self.forward_features(fwd, inputs);
        let t_len = inputs.shape()[2];
        let last = fwd.tape.slice_axis(features, 2, t_len - 1, t_len);
        let act = fwd.tape.relu(last);
        let w = fwd.param(self.head_w);
        let b = fwd.param(self.head_b);
        let proj = fwd.tape.linear_last(act, w);
        let proj = fwd.tape.add_bias(proj, b);
        fwd.tape.swap_axes(proj, 2, 3)
    }
}
