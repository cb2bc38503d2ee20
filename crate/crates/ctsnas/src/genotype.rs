//! Discrete derived architectures and their JSON wire format.
//!
//! The serialized layout is fixed:
//! `{"meta":{"M":..,"B":..,"D":..,"opset":"autocts-v1","dataset":".."},
//!   "blocks":[{"nodes":[[{"src":0,"op":"GDCC"}],..]}],
//!   "backbone":[{"src":"EMBED","dst":1},..]}`
//! Unknown keys are rejected on parse.

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ops::kind::OperatorKind;

pub const OPSET_VERSION: &str = "autocts-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenotypeMeta {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub opset: String,
    pub dataset: String,
}

/// One retained incoming edge of a hidden node: source node plus operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeGene {
    pub src: usize,
    pub op: OperatorKind,
}

/// Per-node retained edges for hidden nodes `1..M-1` of one block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockGenotype {
    pub nodes: Vec<Vec<EdgeGene>>,
}

/// Predecessor of a block in the derived backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneSource {
    Embed,
    /// 1-based block index.
    Block(usize),
}

impl Serialize for BackboneSource {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BackboneSource::Embed => s.serialize_str("EMBED"),
            BackboneSource::Block(i) => s.serialize_u64(*i as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BackboneSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> de::Visitor<'de> for V {
            type Value = BackboneSource;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                write!(f, "\"EMBED\" or a block index")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Self::Value, E> {
                Ok(BackboneSource::Block(v as usize))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Self::Value, E> {
                if v < 0 {
                    return Err(E::custom("backbone src must be nonnegative"));
                }
                Ok(BackboneSource::Block(v as usize))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Self::Value, E> {
                if v == "EMBED" {
                    Ok(BackboneSource::Embed)
                } else {
                    Err(E::custom(format!("backbone src: expected \"EMBED\", got {v:?}")))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneEdge {
    pub src: BackboneSource,
    pub dst: usize,
}

/// Discrete derived architecture: per-block wiring plus backbone topology.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Genotype {
    pub meta: GenotypeMeta,
    pub blocks: Vec<BlockGenotype>,
    pub backbone: Vec<BackboneEdge>,
}

impl Genotype {
    pub fn validate(&self) -> Result<()> {
        if self.meta.opset != OPSET_VERSION {
            return Err(Error::genotype(format!(
                "meta.opset: expected {OPSET_VERSION:?}, got {:?}",
                self.meta.opset
            )));
        }
        let (m, b) = (self.meta.m, self.meta.b);
        if m < 2 {
            return Err(Error::genotype("meta.M: must be at least 2"));
        }
        if b < 1 {
            return Err(Error::genotype("meta.B: must be at least 1"));
        }
        if self.blocks.len() != b {
            return Err(Error::genotype(format!(
                "blocks: expected {b} entries, got {}",
                self.blocks.len()
            )));
        }
        for (bi, block) in self.blocks.iter().enumerate() {
            if block.nodes.len() != m - 1 {
                return Err(Error::genotype(format!(
                    "blocks[{bi}].nodes: expected {} entries, got {}",
                    m - 1,
                    block.nodes.len()
                )));
            }
            for (ji, edges) in block.nodes.iter().enumerate() {
                let j = ji + 1;
                let want = j.min(2);
                if edges.len() != want {
                    return Err(Error::genotype(format!(
                        "blocks[{bi}].nodes[{ji}]: node {j} must keep exactly {want} edges, got {}",
                        edges.len()
                    )));
                }
                if !edges.iter().any(|e| e.src == j - 1) {
                    return Err(Error::genotype(format!(
                        "blocks[{bi}].nodes[{ji}]: missing the mandatory edge from node {}",
                        j - 1
                    )));
                }
                for (ei, e) in edges.iter().enumerate() {
                    if e.src >= j {
                        return Err(Error::genotype(format!(
                            "blocks[{bi}].nodes[{ji}][{ei}].src: {} is not earlier than node {j}",
                            e.src
                        )));
                    }
                    if !e.op.is_searchable() {
                        return Err(Error::genotype(format!(
                            "blocks[{bi}].nodes[{ji}][{ei}].op: {} is not in the searchable set",
                            e.op.tag()
                        )));
                    }
                }
                if edges.len() == 2 && edges[0].src == edges[1].src {
                    return Err(Error::genotype(format!(
                        "blocks[{bi}].nodes[{ji}]: duplicate source {}",
                        edges[0].src
                    )));
                }
            }
        }
        if self.backbone.len() != b {
            return Err(Error::genotype(format!(
                "backbone: expected {b} edges, got {}",
                self.backbone.len()
            )));
        }
        let mut seen = vec![false; b + 1];
        for (ei, edge) in self.backbone.iter().enumerate() {
            if edge.dst < 1 || edge.dst > b {
                return Err(Error::genotype(format!(
                    "backbone[{ei}].dst: {} out of range 1..={b}",
                    edge.dst
                )));
            }
            if seen[edge.dst] {
                return Err(Error::genotype(format!(
                    "backbone[{ei}].dst: block {} has more than one incoming edge",
                    edge.dst
                )));
            }
            seen[edge.dst] = true;
            match edge.src {
                BackboneSource::Embed => {}
                BackboneSource::Block(s) => {
                    if s < 1 || s >= edge.dst {
                        return Err(Error::genotype(format!(
                            "backbone[{ei}].src: block {s} is not earlier than block {}",
                            edge.dst
                        )));
                    }
                }
            }
        }
        if let Some(e1) = self.backbone.iter().find(|e| e.dst == 1) {
            if e1.src != BackboneSource::Embed {
                return Err(Error::genotype(
                    "backbone: block 1 must be fed by the embedding",
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("genotype serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: Genotype =
            serde_json::from_str(text).map_err(|e| Error::genotype(format!("parse: {e}")))?;
        g.validate()?;
        Ok(g)
    }

    /// SHA-256 of the compact canonical serialization.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("genotype serializes"));
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replicate one block `B` times with a pure chain backbone.
    pub fn chain_of(meta: GenotypeMeta, block: BlockGenotype) -> Self {
        let b = meta.b;
        let blocks = vec![block; b];
        let backbone = chain_backbone(b);
        Genotype {
            meta,
            blocks,
            backbone,
        }
    }

    /// All-IDENTITY blocks with a chain backbone (degenerate baseline).
    pub fn all_identity(m: usize, b: usize, d: usize, dataset: impl Into<String>) -> Self {
        let block = uniform_block(m, OperatorKind::Identity);
        Genotype::chain_of(
            GenotypeMeta {
                m,
                b,
                d,
                opset: OPSET_VERSION.into(),
                dataset: dataset.into(),
            },
            block,
        )
    }
}

/// Chain backbone `EMBED -> b1 -> b2 -> ...`.
pub fn chain_backbone(b: usize) -> Vec<BackboneEdge> {
    (1..=b)
        .map(|dst| BackboneEdge {
            src: if dst == 1 {
                BackboneSource::Embed
            } else {
                BackboneSource::Block(dst - 1)
            },
            dst,
        })
        .collect()
}

/// A block whose every retained edge carries the same operator; node `j` keeps
/// the mandatory edge from `j-1` plus one from node 0 when `j >= 2`.
pub fn uniform_block(m: usize, op: OperatorKind) -> BlockGenotype {
    let nodes = (1..m)
        .map(|j| {
            let mut edges = vec![EdgeGene { src: j - 1, op }];
            if j >= 2 {
                edges.push(EdgeGene { src: 0, op });
            }
            edges
        })
        .collect();
    BlockGenotype { nodes }
}

/// Uniformly random genotype over the searchable set (baseline sampling).
pub fn random_genotype<R: rand::Rng>(
    rng: &mut R,
    m: usize,
    b: usize,
    d: usize,
    dataset: impl Into<String>,
) -> Genotype {
    let ops = OperatorKind::SEARCHABLE;
    let blocks = (0..b)
        .map(|_| {
            let nodes = (1..m)
                .map(|j| {
                    let mut edges = vec![EdgeGene {
                        src: j - 1,
                        op: ops[rng.gen_range(0..ops.len())],
                    }];
                    if j >= 2 {
                        edges.push(EdgeGene {
                            src: rng.gen_range(0..j - 1),
                            op: ops[rng.gen_range(0..ops.len())],
                        });
                    }
                    edges
                })
                .collect();
            BlockGenotype { nodes }
        })
        .collect();
    let backbone = (1..=b)
        .map(|dst| {
            let src = if dst == 1 {
                BackboneSource::Embed
            } else {
                match rng.gen_range(0..dst) {
                    0 => BackboneSource::Embed,
                    i => BackboneSource::Block(i),
                }
            };
            BackboneEdge { src, dst }
        })
        .collect();
    Genotype {
        meta: GenotypeMeta {
            m,
            b,
            d,
            opset: OPSET_VERSION.into(),
            dataset: dataset.into(),
        },
        blocks,
        backbone,
    }
}
