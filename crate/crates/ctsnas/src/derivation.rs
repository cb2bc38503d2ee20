//! Discrete architecture derivation from learned continuous parameters:
//! per-edge operator selection by the combined softmax product, per-node
//! edge retention, and backbone predecessor selection by largest gamma.

use crate::genotype::{
    BackboneEdge, BackboneSource, BlockGenotype, EdgeGene, Genotype, GenotypeMeta, OPSET_VERSION,
};
use crate::ops::OperatorKind;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::supernet::{softmax_tempered, MicroParamValues, SuperNet};

fn softmax(xs: &[f64]) -> Vec<f64> {
    softmax_tempered(xs, 1.0)
}

/// Combined weight of operator `o` on edge `(i, j)`:
/// `softmax(beta_j)[i] * softmax(alpha_ij)[o]` (untempered).
pub fn edge_weight(alpha_ij: &[f64], beta_j: &[f64], i: usize, o: usize) -> f64 {
    assert!(i < beta_j.len(), "source index in range");
    assert!(o < alpha_ij.len(), "operator index in range");
    softmax(beta_j)[i] * softmax(alpha_ij)[o]
}

fn edge_index(i: usize, j: usize) -> usize {
    j * (j - 1) / 2 + i
}

/// Index-level block derivation. For each node `j`: keep the best operator on
/// the mandatory edge from `j-1`, plus the best `(source, operator)` among
/// the remaining predecessors when `j >= 2`. Ties break to the lowest
/// operator index, then the lowest source index.
pub fn derive_block_indices(
    alpha_per_edge: &[Vec<f64>],
    beta_per_node: &[Vec<f64>],
    m: usize,
    tau: f64,
) -> Vec<Vec<(usize, usize)>> {
    let weight = |i: usize, j: usize, o: usize| -> f64 {
        let alpha = &alpha_per_edge[edge_index(i, j)];
        let beta = &beta_per_node[j - 1];
        softmax(beta)[i] * softmax_tempered(alpha, tau)[o]
    };
    let mut nodes = Vec::with_capacity(m - 1);
    for j in 1..m {
        let n_ops = alpha_per_edge[edge_index(j - 1, j)].len();
        // mandatory edge from the immediate predecessor
        let mut best_o = 0;
        let mut best_w = weight(j - 1, j, 0);
        for o in 1..n_ops {
            let w = weight(j - 1, j, o);
            if w > best_w {
                best_w = w;
                best_o = o;
            }
        }
        let mut edges = vec![(j - 1, best_o)];
        if j >= 2 {
            let mut best: Option<(usize, usize, f64)> = None; // (o, i, w)
            for i in 0..=j - 2 {
                for o in 0..n_ops {
                    let w = weight(i, j, o);
                    let replace = match best {
                        None => true,
                        Some((bo, bi, bw)) => w > bw || (w == bw && (o, i) < (bo, bi)),
                    };
                    if replace {
                        best = Some((o, i, w));
                    }
                }
            }
            let (o, i, _) = best.expect("j >= 2 has candidates");
            edges.push((i, o));
        }
        nodes.push(edges);
    }
    nodes
}

/// Derive one block's genotype from its architecture parameters.
pub fn derive_st_block(micro: &MicroParamValues, m: usize) -> BlockGenotype {
    let nodes = derive_block_indices(&micro.alpha, &micro.beta, m, 1.0)
        .into_iter()
        .map(|edges| {
            edges
                .into_iter()
                .map(|(src, o)| EdgeGene {
                    src,
                    op: OperatorKind::SEARCHABLE[o],
                })
                .collect()
        })
        .collect();
    BlockGenotype { nodes }
}

/// Backbone derivation: block 1 reads the embedding; every later block keeps
/// its largest-gamma predecessor (embedding is predecessor index 0); ties
/// break to the lowest index.
pub fn derive_backbone(gamma_values: &[Vec<f64>], b: usize) -> Vec<BackboneEdge> {
    let mut edges = vec![BackboneEdge {
        src: BackboneSource::Embed,
        dst: 1,
    }];
    for j in 2..=b {
        let gamma = &gamma_values[j - 2];
        assert_eq!(gamma.len(), j, "gamma for block {j}");
        let mut best = 0usize;
        for (i, g) in gamma.iter().enumerate() {
            if *g > gamma[best] {
                best = i;
            }
        }
        let src = if best == 0 {
            BackboneSource::Embed
        } else {
            BackboneSource::Block(best)
        };
        edges.push(BackboneEdge { src, dst: j });
    }
    edges
}

/// Full derivation outcome. `tempered_agrees` reports whether deriving with
/// the current temperature on alpha would have produced the same genotype;
/// near the temperature floor the rankings coincide.
pub struct DerivationOutcome {
    pub genotype: Genotype,
    pub tempered_agrees: bool,
}

pub fn derive_genotype<F: Scalar>(
    net: &SuperNet<F>,
    store: &ParamStore<F>,
    dataset: &str,
    tau: f64,
) -> DerivationOutcome {
    let cfg = &net.cfg;
    let micro_values = net.micro_values(store);
    let mut blocks = Vec::with_capacity(cfg.b);
    let mut tempered_agrees = true;
    for bi in 0..cfg.b {
        let mv = if cfg.shared_micro {
            &micro_values[0]
        } else {
            &micro_values[bi]
        };
        let untempered = derive_block_indices(&mv.alpha, &mv.beta, cfg.m, 1.0);
        let tempered = derive_block_indices(&mv.alpha, &mv.beta, cfg.m, tau);
        if untempered != tempered {
            tempered_agrees = false;
        }
        blocks.push(BlockGenotype {
            nodes: untempered
                .into_iter()
                .map(|edges| {
                    edges
                        .into_iter()
                        .map(|(src, o)| EdgeGene {
                            src,
                            op: OperatorKind::SEARCHABLE[o],
                        })
                        .collect()
                })
                .collect(),
        });
    }
    let backbone = if cfg.shared_micro {
        crate::genotype::chain_backbone(cfg.b)
    } else {
        derive_backbone(&net.gamma_values(store), cfg.b)
    };
    let genotype = Genotype {
        meta: GenotypeMeta {
            m: cfg.m,
            b: cfg.b,
            d: cfg.d,
            opset: OPSET_VERSION.into(),
            dataset: dataset.into(),
        },
        blocks,
        backbone,
    };
    debug_assert!(genotype.validate().is_ok());
    DerivationOutcome {
        genotype,
        tempered_agrees,
    }
}
