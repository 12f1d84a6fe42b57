//! Cell search space: choice edges, candidate operations, discrete genotypes and
//! the continuous relaxation over them.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Candidate operation applied on a choice edge. Every operation preserves the
/// shape of its input feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum OpKind {
    Zero,
    Skip,
    SepConv3,
    SepConv5,
    AvgPool3,
    MaxPool3,
}

impl OpKind {
    pub const ALL: [OpKind; 6] = [
        OpKind::Zero,
        OpKind::Skip,
        OpKind::SepConv3,
        OpKind::SepConv5,
        OpKind::AvgPool3,
        OpKind::MaxPool3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Zero => "zero",
            OpKind::Skip => "skip-connect",
            OpKind::SepConv3 => "separable-conv-3x3",
            OpKind::SepConv5 => "separable-conv-5x5",
            OpKind::AvgPool3 => "avg-pool-3x3",
            OpKind::MaxPool3 => "max-pool-3x3",
        }
    }

    /// Kernel size of the depthwise stage, for separable convolutions.
    pub fn kernel(self) -> Option<usize> {
        match self {
            OpKind::SepConv3 => Some(3),
            OpKind::SepConv5 => Some(5),
            _ => None,
        }
    }

    pub fn has_params(self) -> bool {
        self.kernel().is_some()
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let op = match s {
            "zero" | "none" => OpKind::Zero,
            "skip-connect" | "skip" => OpKind::Skip,
            "separable-conv-3x3" | "sep-conv-3x3" => OpKind::SepConv3,
            "separable-conv-5x5" | "sep-conv-5x5" => OpKind::SepConv5,
            "avg-pool-3x3" => OpKind::AvgPool3,
            "max-pool-3x3" => OpKind::MaxPool3,
            other => return Err(Error::Config(format!("unknown candidate operation `{other}`"))),
        };
        Ok(op)
    }
}

impl TryFrom<String> for OpKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<OpKind> for String {
    fn from(op: OpKind) -> String {
        op.name().to_string()
    }
}

/// An edge of a cell DAG that selects among the candidate operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceEdge {
    pub cell: usize,
    pub source: usize,
    pub target: usize,
}

/// The architecture search space.
///
/// Each cell is a DAG over `nodes_per_cell` nodes where every pair
/// `source < target` is a choice edge. Node 0 receives the cell input, every
/// other node sums its incoming edges, and the last node is the cell output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub num_cells: usize,
    pub nodes_per_cell: usize,
    pub choice_edges: Vec<ChoiceEdge>,
    pub candidate_ops: Vec<OpKind>,
    pub channel_width: usize,
    pub num_classes: usize,
    pub input_channels: usize,
}

pub const DEFAULT_INPUT_CHANNELS: usize = 3;

/// Builds a search space from operation names.
pub fn build_search_space<S: AsRef<str>>(
    num_cells: usize,
    nodes_per_cell: usize,
    candidate_ops: &[S],
    channel_width: usize,
    num_classes: usize,
) -> Result<SearchSpace> {
    let ops = candidate_ops
        .iter()
        .enumerate()
        .map(|(i, name)| {
            name.as_ref().parse::<OpKind>().map_err(|_| {
                Error::Config(format!(
                    "candidate_ops[{i}]: unknown operation `{}`",
                    name.as_ref()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SearchSpace::new(num_cells, nodes_per_cell, ops, channel_width, num_classes)
}

impl SearchSpace {
    pub fn new(
        num_cells: usize,
        nodes_per_cell: usize,
        candidate_ops: Vec<OpKind>,
        channel_width: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if num_cells == 0 {
            return Err(Error::Config("num_cells must be positive".into()));
        }
        if nodes_per_cell < 2 {
            return Err(Error::Config("nodes_per_cell must be at least 2".into()));
        }
        if candidate_ops.is_empty() {
            return Err(Error::Config("candidate_ops must not be empty".into()));
        }
        if channel_width == 0 {
            return Err(Error::Config("channel_width must be positive".into()));
        }
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        let mut choice_edges = Vec::new();
        for cell in 0..num_cells {
            for source in 0..nodes_per_cell {
                for target in source + 1..nodes_per_cell {
                    choice_edges.push(ChoiceEdge {
                        cell,
                        source,
                        target,
                    });
                }
            }
        }
        Ok(SearchSpace {
            num_cells,
            nodes_per_cell,
            choice_edges,
            candidate_ops,
            channel_width,
            num_classes,
            input_channels: DEFAULT_INPUT_CHANNELS,
        })
    }

    pub fn with_input_channels(mut self, channels: usize) -> Self {
        assert!(channels > 0);
        self.input_channels = channels;
        self
    }

    /// Same space with a different classifier width.
    pub fn with_num_classes(mut self, num_classes: usize) -> Self {
        assert!(num_classes > 0);
        self.num_classes = num_classes;
        self
    }

    pub fn genotype_len(&self) -> usize {
        self.choice_edges.len()
    }

    pub fn num_ops(&self) -> usize {
        self.candidate_ops.len()
    }

    /// `|ops|^edges`, or `None` if it overflows `u128`.
    pub fn num_genotypes(&self) -> Option<u128> {
        (self.num_ops() as u128).checked_pow(self.genotype_len() as u32)
    }

    /// Every genotype in index order. Only sensible for small spaces.
    pub fn enumerate_genotypes(&self) -> Vec<Genotype> {
        let total = self
            .num_genotypes()
            .expect("space too large to enumerate") as usize;
        let k = self.num_ops();
        (0..total)
            .map(|mut code| {
                let mut ops = vec![0; self.genotype_len()];
                for slot in ops.iter_mut().rev() {
                    *slot = code % k;
                    code /= k;
                }
                Genotype(ops)
            })
            .collect()
    }

    pub fn validate(&self, g: &Genotype) -> Result<()> {
        if g.len() != self.genotype_len() {
            return Err(Error::Shape(format!(
                "genotype has {} entries but the space has {} choice edges",
                g.len(),
                self.genotype_len()
            )));
        }
        if let Some((pos, &op)) = g.0.iter().enumerate().find(|(_, &op)| op >= self.num_ops()) {
            return Err(Error::Shape(format!(
                "genotype entry {pos} = {op} exceeds the {} candidate ops",
                self.num_ops()
            )));
        }
        Ok(())
    }

    /// Edges (by global index) entering node `target` of `cell`.
    pub fn incoming(&self, cell: usize, target: usize) -> impl Iterator<Item = usize> + '_ {
        self.choice_edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.cell == cell && e.target == target)
            .map(|(i, _)| i)
    }

    /// Uniformly samples one operation per choice edge.
    pub fn random_genotype<R: Rng + ?Sized>(&self, rng: &mut R) -> Genotype {
        random_genotype(self, rng)
    }
}

pub fn random_genotype<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> Genotype {
    let k = space.num_ops();
    Genotype((0..space.genotype_len()).map(|_| rng.random_range(0..k)).collect())
}

/// A discrete architecture: one operation index per choice edge.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Genotype(pub Vec<usize>);

impl Genotype {
    pub fn ops(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Hyphen-joined decimal indices, e.g. `3-0-5-1`.
    pub fn encode(&self) -> String {
        self.0
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }

    /// Parses a token without checking its length against a space.
    pub fn parse(token: &str, num_ops: usize) -> Result<Genotype> {
        if token.is_empty() {
            return Ok(Genotype(Vec::new()));
        }
        token
            .split('-')
            .enumerate()
            .map(|(position, part)| {
                let op: usize = part.parse().map_err(|_| Error::Parse {
                    position,
                    message: format!("`{part}` is not a non-negative integer"),
                })?;
                if op >= num_ops {
                    return Err(Error::Parse {
                        position,
                        message: format!("op index {op} out of range for {num_ops} candidate ops"),
                    });
                }
                Ok(op)
            })
            .collect::<Result<Vec<_>>>()
            .map(Genotype)
    }

    /// Parses a token and checks it against `space`.
    pub fn decode(token: &str, space: &SearchSpace) -> Result<Genotype> {
        let g = Genotype::parse(token, space.num_ops())?;
        if g.len() != space.genotype_len() {
            return Err(Error::Parse {
                position: g.len().min(space.genotype_len()),
                message: format!(
                    "expected {} entries, found {}",
                    space.genotype_len(),
                    g.len()
                ),
            });
        }
        Ok(g)
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

/// Continuous architecture parameters: one row of logits per choice edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    edges: usize,
    ops: usize,
    alpha: Vec<f64>,
}

impl MixtureParams {
    pub fn zeros(space: &SearchSpace) -> Self {
        MixtureParams {
            edges: space.genotype_len(),
            ops: space.num_ops(),
            alpha: vec![0.0; space.genotype_len() * space.num_ops()],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let ops = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ops) {
            return Err(Error::Shape("mixture rows have unequal lengths".into()));
        }
        let m = MixtureParams {
            edges: rows.len(),
            ops,
            alpha: rows.into_iter().flatten().collect(),
        };
        m.check_finite()?;
        Ok(m)
    }

    /// Rows with `logit` at the genotype's op and `-logit` elsewhere.
    pub fn one_hot(g: &Genotype, num_ops: usize, logit: f64) -> Self {
        let rows = g
            .ops()
            .iter()
            .map(|&k| (0..num_ops).map(|o| if o == k { logit } else { -logit }).collect())
            .collect();
        MixtureParams::from_rows(rows).expect("finite one-hot rows")
    }

    pub fn num_edges(&self) -> usize {
        self.edges
    }

    pub fn num_ops(&self) -> usize {
        self.ops
    }

    pub fn row(&self, edge: usize) -> &[f64] {
        &self.alpha[edge * self.ops..(edge + 1) * self.ops]
    }

    pub fn row_mut(&mut self, edge: usize) -> &mut [f64] {
        &mut self.alpha[edge * self.ops..(edge + 1) * self.ops]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.alpha
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.alpha
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.alpha.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Numeric(format!(
                "mixture parameter at edge {}, op {} is {}",
                i / self.ops.max(1),
                i % self.ops.max(1),
                self.alpha[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn matches(&self, space: &SearchSpace) -> bool {
        self.edges == space.genotype_len() && self.ops == space.num_ops()
    }

    /// Softmax of every row.
    pub fn probabilities(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.edges).map(|e| mixture_weights(self.row(e))).collect()
    }
}

/// Softmax over one row of mixture logits.
pub fn mixture_weights(alpha_row: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = alpha_row.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite mixture logit {v}")));
    }
    let max = alpha_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = alpha_row.iter().map(|a| (a - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Pulls a gradient with respect to softmax outputs back to the logits.
pub fn softmax_backward(probs: &[f64], grad_probs: &[f64]) -> Vec<f64> {
    let inner: f64 = probs.iter().zip(grad_probs).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(grad_probs)
        .map(|(p, g)| p * (g - inner))
        .collect()
}

/// Most likely operation per edge. Ties go to the lowest op index, and `zero`
/// is kept if it wins.
pub fn derive_genotype(mix: &MixtureParams) -> Genotype {
    Genotype(
        (0..mix.num_edges())
            .map(|e| {
                let row = mix.row(e);
                let mut best = 0;
                for (i, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect(),
    )
}
