use std::collections::BTreeMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::kernels::{self, ChannelStats};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::space::{ChoiceEdge, OpKind, SearchSpace};
use crate::tensor::Tensor;

/// Rounds every value to the nearest `f32` so parameters survive a 32-bit
/// checkpoint unchanged.
pub(crate) fn round_f32(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

fn uniform_f32<R: Rng + ?Sized>(rng: &mut R, len: usize, bound: f64) -> Vec<f64> {
    (0..len)
        .map(|_| rng.random_range(-bound..bound) as f32 as f64)
        .collect()
}

fn unit_stats(channels: usize) -> ChannelStats {
    ChannelStats {
        mean: vec![0.0; channels],
        var: vec![1.0; channels],
    }
}

/// Trainable tensors of one candidate operation.
#[derive(Debug, Clone, PartialEq)]
pub enum OpParams {
    None,
    SepConv {
        /// `[c, k, k]`
        depthwise: Vec<f64>,
        /// `[c, c]`
        pointwise: Vec<f64>,
        running: ChannelStats,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpBlock {
    pub kind: OpKind,
    pub params: OpParams,
}

impl OpBlock {
    fn init<R: Rng + ?Sized>(kind: OpKind, channels: usize, rng: &mut R) -> Self {
        let params = match kind.kernel() {
            Some(k) => OpParams::SepConv {
                depthwise: uniform_f32(rng, channels * k * k, 1.0 / (k as f64)),
                pointwise: uniform_f32(rng, channels * channels, 1.0 / (channels as f64).sqrt()),
                running: unit_stats(channels),
            },
            None => OpParams::None,
        };
        OpBlock { kind, params }
    }

    pub fn num_params(&self) -> usize {
        match &self.params {
            OpParams::None => 0,
            OpParams::SepConv {
                depthwise,
                pointwise,
                ..
            } => depthwise.len() + pointwise.len(),
        }
    }
}

/// Identifies one trainable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    StemWeight,
    Depthwise { edge: usize, slot: usize },
    Pointwise { edge: usize, slot: usize },
    HeadWeight,
    HeadBias,
}

impl ParamId {
    pub fn is_backbone(self) -> bool {
        !matches!(self, ParamId::HeadWeight | ParamId::HeadBias)
    }

    pub fn name(self) -> String {
        match self {
            ParamId::StemWeight => "stem.weight".into(),
            ParamId::Depthwise { edge, slot } => format!("edge{edge}.op{slot}.depthwise"),
            ParamId::Pointwise { edge, slot } => format!("edge{edge}.op{slot}.pointwise"),
            ParamId::HeadWeight => "head.weight".into(),
            ParamId::HeadBias => "head.bias".into(),
        }
    }
}

/// Gradients for the tensors touched by one backward pass.
pub type Gradients = BTreeMap<ParamId, Vec<f64>>;

fn accumulate(grads: &mut Gradients, id: ParamId, g: Vec<f64>) {
    match grads.get_mut(&id) {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        None => {
            grads.insert(id, g);
        }
    }
}

/// Which candidate(s) each edge evaluates.
#[derive(Debug, Clone, Copy)]
pub enum Selection<'a> {
    /// One slot per edge.
    Path(&'a [usize]),
    /// Softmax weights over every slot of every edge.
    Mixture(&'a [Vec<f64>]),
}

/// Source of normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Statistics of the current batch.
    Batch,
    /// Stored running statistics.
    Running,
}

#[derive(Debug, Clone)]
enum OpCache {
    None,
    Sep {
        relu_out: Tensor,
        dw_out: Tensor,
        stats: ChannelStats,
    },
    Max {
        argmax: Vec<u32>,
    },
}

#[derive(Debug, Clone)]
struct OpTrace {
    slot: usize,
    weight: f64,
    /// `None` for the zero operation.
    output: Option<Tensor>,
    cache: OpCache,
}

/// Intermediate values of a forward pass, consumed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    mode: NormMode,
    mixture: bool,
    input: Tensor,
    stem_stats: ChannelStats,
    /// `[cell][node]`
    nodes: Vec<Vec<Tensor>>,
    /// `[edge]`
    ops: Vec<Vec<OpTrace>>,
    features: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Trace {
    pub fn batch_size(&self) -> usize {
        self.input.n
    }
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backward {
    pub grads: Gradients,
    /// Gradient with respect to the mixture weights, `[edge][slot]`; only for
    /// mixture forwards with backbone gradients enabled.
    pub mixture_grads: Option<Vec<Vec<f64>>>,
}

/// A cell network whose edges each hold one or more candidate operation
/// blocks, a 1x1 stem with normalization, and a linear classifier over
/// globally pooled features.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub num_cells: usize,
    pub nodes_per_cell: usize,
    pub channels: usize,
    pub input_channels: usize,
    pub num_classes: usize,
    pub edges: Vec<ChoiceEdge>,
    /// `[channels, input_channels]`
    pub stem_weight: Vec<f64>,
    pub stem_running: ChannelStats,
    /// `[edge][slot]`
    pub blocks: Vec<Vec<OpBlock>>,
    /// `[num_classes, channels]`
    pub head_weight: Vec<f64>,
    pub head_bias: Vec<f64>,
}

impl Network {
    /// A network with every candidate op of `space` on every edge.
    ///
    /// Weights are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, the
    /// classifier bias is zero and running statistics start at mean 0,
    /// variance 1.
    pub fn init<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> Self {
        let edge_ops = vec![space.candidate_ops.clone(); space.genotype_len()];
        Network::with_edge_ops(space, &edge_ops, rng)
    }

    /// A network whose edge `e` holds one block per entry of `edge_ops[e]`.
    pub fn with_edge_ops<R: Rng + ?Sized>(space: &SearchSpace, edge_ops: &[Vec<OpKind>], rng: &mut R) -> Self {
        assert_eq!(edge_ops.len(), space.genotype_len());
        let c = space.channel_width;
        let stem_weight = uniform_f32(rng, c * space.input_channels, 1.0 / (space.input_channels as f64).sqrt());
        let blocks = edge_ops
            .iter()
            .map(|ops| ops.iter().map(|&op| OpBlock::init(op, c, rng)).collect())
            .collect();
        let head_weight = uniform_f32(rng, space.num_classes * c, 1.0 / (c as f64).sqrt());
        Network {
            num_cells: space.num_cells,
            nodes_per_cell: space.nodes_per_cell,
            channels: c,
            input_channels: space.input_channels,
            num_classes: space.num_classes,
            edges: space.choice_edges.clone(),
            stem_weight,
            stem_running: unit_stats(c),
            blocks,
            head_weight,
            head_bias: vec![0.0; space.num_classes],
        }
    }

    /// Copy holding only the blocks named by `path`.
    pub fn restrict(&self, path: &[usize]) -> Network {
        let blocks = self
            .blocks
            .iter()
            .zip(path)
            .map(|(slots, &s)| vec![slots[s].clone()])
            .collect();
        Network {
            blocks,
            ..self.clone_without_blocks()
        }
    }

    fn clone_without_blocks(&self) -> Network {
        Network {
            num_cells: self.num_cells,
            nodes_per_cell: self.nodes_per_cell,
            channels: self.channels,
            input_channels: self.input_channels,
            num_classes: self.num_classes,
            edges: self.edges.clone(),
            stem_weight: self.stem_weight.clone(),
            stem_running: self.stem_running.clone(),
            blocks: Vec::new(),
            head_weight: self.head_weight.clone(),
            head_bias: self.head_bias.clone(),
        }
    }

    /// Replaces the classifier with a freshly initialized one.
    pub fn reset_head<R: Rng + ?Sized>(&mut self, num_classes: usize, rng: &mut R) {
        self.num_classes = num_classes;
        self.head_weight = uniform_f32(rng, num_classes * self.channels, 1.0 / (self.channels as f64).sqrt());
        self.head_bias = vec![0.0; num_classes];
    }

    pub fn slot_count(&self, edge: usize) -> usize {
        self.blocks[edge].len()
    }

    /// Every trainable tensor id in declaration order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![ParamId::StemWeight];
        for (edge, slots) in self.blocks.iter().enumerate() {
            for (slot, b) in slots.iter().enumerate() {
                if let OpParams::SepConv { .. } = b.params {
                    ids.push(ParamId::Depthwise { edge, slot });
                    ids.push(ParamId::Pointwise { edge, slot });
                }
            }
        }
        ids.push(ParamId::HeadWeight);
        ids.push(ParamId::HeadBias);
        ids
    }

    pub fn param(&self, id: ParamId) -> &[f64] {
        match id {
            ParamId::StemWeight => &self.stem_weight,
            ParamId::HeadWeight => &self.head_weight,
            ParamId::HeadBias => &self.head_bias,
            ParamId::Depthwise { edge, slot } | ParamId::Pointwise { edge, slot } => {
                match &self.blocks[edge][slot].params {
                    OpParams::SepConv {
                        depthwise,
                        pointwise,
                        ..
                    } => {
                        if matches!(id, ParamId::Depthwise { .. }) {
                            depthwise
                        } else {
                            pointwise
                        }
                    }
                    OpParams::None => panic!("{} does not exist", id.name()),
                }
            }
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Vec<f64> {
        match id {
            ParamId::StemWeight => &mut self.stem_weight,
            ParamId::HeadWeight => &mut self.head_weight,
            ParamId::HeadBias => &mut self.head_bias,
            ParamId::Depthwise { edge, slot } | ParamId::Pointwise { edge, slot } => {
                match &mut self.blocks[edge][slot].params {
                    OpParams::SepConv {
                        depthwise,
                        pointwise,
                        ..
                    } => {
                        if matches!(id, ParamId::Depthwise { .. }) {
                            depthwise
                        } else {
                            pointwise
                        }
                    }
                    OpParams::None => panic!("{} does not exist", id.name()),
                }
            }
        }
    }

    /// Number of trainable scalars.
    pub fn num_params(&self) -> usize {
        self.param_ids().into_iter().map(|id| self.param(id).len()).sum()
    }

    /// SHA-256 over every backbone tensor and running statistic.
    pub fn backbone_digest(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |v: &[f64]| {
            for x in v {
                h.update(x.to_le_bytes());
            }
        };
        feed(&self.stem_weight);
        feed(&self.stem_running.mean);
        feed(&self.stem_running.var);
        for slots in &self.blocks {
            for b in slots {
                if let OpParams::SepConv {
                    depthwise,
                    pointwise,
                    running,
                } = &b.params
                {
                    feed(depthwise);
                    feed(pointwise);
                    feed(&running.mean);
                    feed(&running.var);
                }
            }
        }
        hex::encode(h.finalize())
    }

    fn check_selection(&self, sel: Selection<'_>) -> Result<()> {
        match sel {
            Selection::Path(path) => {
                if path.len() != self.edges.len() {
                    return Err(Error::Shape(format!(
                        "path has {} entries for {} edges",
                        path.len(),
                        self.edges.len()
                    )));
                }
                if let Some(e) = (0..path.len()).find(|&e| path[e] >= self.slot_count(e)) {
                    return Err(Error::Shape(format!(
                        "edge {e} has no slot {}",
                        path[e]
                    )));
                }
            }
            Selection::Mixture(probs) => {
                if probs.len() != self.edges.len()
                    || probs.iter().enumerate().any(|(e, p)| p.len() != self.slot_count(e))
                {
                    return Err(Error::Shape("mixture weights do not match the edges".into()));
                }
                if probs.iter().flatten().any(|p| !p.is_finite()) {
                    return Err(Error::Numeric("non-finite mixture weight".into()));
                }
            }
        }
        Ok(())
    }

    fn incoming(&self, cell: usize, target: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.cell == cell && e.target == target)
            .map(|(i, _)| i)
    }

    fn apply_op(&self, block: &OpBlock, x: &Tensor, mode: NormMode) -> (Option<Tensor>, OpCache) {
        match (block.kind, &block.params) {
            (OpKind::Zero, _) => (None, OpCache::None),
            (OpKind::Skip, _) => (Some(x.clone()), OpCache::None),
            (OpKind::AvgPool3, _) => (Some(kernels::avg_pool3(x)), OpCache::None),
            (OpKind::MaxPool3, _) => {
                let (y, argmax) = kernels::max_pool3(x);
                (Some(y), OpCache::Max { argmax })
            }
            (
                kind,
                OpParams::SepConv {
                    depthwise,
                    pointwise,
                    running,
                },
            ) => {
                let k = kind.kernel().expect("separable conv kernel");
                let relu_out = kernels::relu(x);
                let dw_out = kernels::depthwise_conv(&relu_out, depthwise, k);
                let pre = kernels::pointwise_conv(&dw_out, pointwise, self.channels);
                let stats = match mode {
                    NormMode::Batch => kernels::channel_stats(&pre),
                    NormMode::Running => running.clone(),
                };
                let y = kernels::normalize(&pre, &stats);
                (
                    Some(y),
                    OpCache::Sep {
                        relu_out,
                        dw_out,
                        stats,
                    },
                )
            }
            (kind, OpParams::None) => unreachable!("{kind} block without parameters"),
        }
    }

    /// Runs the network on `x`.
    pub fn forward(&self, x: &Tensor, sel: Selection<'_>, mode: NormMode) -> Result<Trace> {
        self.check_selection(sel)?;
        if x.c != self.input_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, network expects {}",
                x.c, self.input_channels
            )));
        }
        let stem_pre = kernels::pointwise_conv(x, &self.stem_weight, self.channels);
        let stem_stats = match mode {
            NormMode::Batch => kernels::channel_stats(&stem_pre),
            NormMode::Running => self.stem_running.clone(),
        };
        let mut h = kernels::normalize(&stem_pre, &stem_stats);
        drop(stem_pre);

        let mut nodes = Vec::with_capacity(self.num_cells);
        let mut ops: Vec<Vec<OpTrace>> = vec![Vec::new(); self.edges.len()];
        for cell in 0..self.num_cells {
            let mut cell_nodes = vec![h];
            for target in 1..self.nodes_per_cell {
                let mut acc = Tensor::zeros_like(&cell_nodes[0]);
                for e in self.incoming(cell, target) {
                    let src = &cell_nodes[self.edges[e].source];
                    let slots: Vec<(usize, f64)> = match sel {
                        Selection::Path(path) => vec![(path[e], 1.0)],
                        Selection::Mixture(p) => p[e].iter().copied().enumerate().collect(),
                    };
                    for (slot, weight) in slots {
                        let (output, cache) = self.apply_op(&self.blocks[e][slot], src, mode);
                        if let Some(out) = &output {
                            if weight == 1.0 {
                                acc.add_assign(out);
                            } else {
                                acc.axpy(weight, out);
                            }
                        }
                        ops[e].push(OpTrace {
                            slot,
                            weight,
                            output,
                            cache,
                        });
                    }
                }
                cell_nodes.push(acc);
            }
            h = cell_nodes.last().expect("cell has nodes").clone();
            nodes.push(cell_nodes);
        }
        let features = kernels::global_avg_pool(&h);
        let logits = kernels::linear(&features, self.channels, &self.head_weight, &self.head_bias);
        Ok(Trace {
            mode,
            mixture: matches!(sel, Selection::Mixture(_)),
            input: x.clone(),
            stem_stats,
            nodes,
            ops,
            features,
            logits,
        })
    }

    /// Convenience: logits only.
    pub fn logits(&self, x: &Tensor, sel: Selection<'_>, mode: NormMode) -> Result<Vec<f64>> {
        Ok(self.forward(x, sel, mode)?.logits)
    }

    fn op_backward(
        &self,
        edge: usize,
        op: &OpTrace,
        input: &Tensor,
        grad: &Tensor,
        mode: NormMode,
        grads: &mut Gradients,
    ) -> Option<Tensor> {
        let block = &self.blocks[edge][op.slot];
        match (&op.cache, &block.params) {
            _ if block.kind == OpKind::Zero => None,
            (OpCache::None, _) if block.kind == OpKind::Skip => Some(grad.clone()),
            (OpCache::None, _) => Some(kernels::avg_pool3_backward(grad)),
            (OpCache::Max { argmax }, _) => Some(kernels::max_pool3_backward(argmax, grad)),
            (
                OpCache::Sep {
                    relu_out,
                    dw_out,
                    stats,
                },
                OpParams::SepConv {
                    depthwise,
                    pointwise,
                    ..
                },
            ) => {
                let k = block.kind.kernel().expect("kernel");
                let y = op.output.as_ref().expect("sep conv output");
                let g_pre = match mode {
                    NormMode::Batch => kernels::normalize_batch_backward(y, stats, grad),
                    NormMode::Running => kernels::normalize_fixed_backward(stats, grad),
                };
                let (g_dw_out, g_pw) = kernels::pointwise_conv_backward(dw_out, pointwise, self.channels, &g_pre);
                let (g_relu, g_dw) = kernels::depthwise_conv_backward(relu_out, depthwise, k, &g_dw_out);
                accumulate(grads, ParamId::Depthwise { edge, slot: op.slot }, g_dw);
                accumulate(grads, ParamId::Pointwise { edge, slot: op.slot }, g_pw);
                let _ = input;
                Some(kernels::relu_backward(relu_out, &g_relu))
            }
            (OpCache::Sep { .. }, OpParams::None) => unreachable!(),
        }
    }

    /// Gradients of a scalar loss given `grad_logits`. With `backbone` false
    /// only the classifier receives gradients.
    pub fn backward(&self, trace: &Trace, grad_logits: &[f64], backbone: bool) -> Backward {
        let mut grads = Gradients::new();
        let (g_feat, g_w, g_b) = kernels::linear_backward(
            &trace.features,
            self.channels,
            &self.head_weight,
            grad_logits,
            backbone,
        );
        grads.insert(ParamId::HeadWeight, g_w);
        grads.insert(ParamId::HeadBias, g_b);
        if !backbone {
            return Backward {
                grads,
                mixture_grads: None,
            };
        }
        let mut mixture_grads: Vec<Vec<f64>> = self.blocks.iter().map(|s| vec![0.0; s.len()]).collect();
        let last = trace.nodes.last().and_then(|c| c.last()).expect("trace has nodes");
        let mut g_h = kernels::global_avg_pool_backward(last, &g_feat);
        for cell in (0..self.num_cells).rev() {
            let cell_nodes = &trace.nodes[cell];
            let mut node_grads: Vec<Option<Tensor>> = vec![None; self.nodes_per_cell];
            node_grads[self.nodes_per_cell - 1] = Some(g_h);
            for target in (1..self.nodes_per_cell).rev() {
                let Some(g_t) = node_grads[target].take() else {
                    continue;
                };
                for e in self.incoming(cell, target) {
                    let source = self.edges[e].source;
                    for op in &trace.ops[e] {
                        if trace.mixture {
                            if let Some(out) = &op.output {
                                mixture_grads[e][op.slot] = g_t.dot(out);
                            }
                        }
                        let g_out = if op.weight == 1.0 { g_t.clone() } else { g_t.scaled(op.weight) };
                        if let Some(g_in) =
                            self.op_backward(e, op, &cell_nodes[source], &g_out, trace.mode, &mut grads)
                        {
                            match &mut node_grads[source] {
                                Some(acc) => acc.add_assign(&g_in),
                                slot @ None => *slot = Some(g_in),
                            }
                        }
                    }
                }
            }
            g_h = node_grads[0]
                .take()
                .unwrap_or_else(|| Tensor::zeros_like(&cell_nodes[0]));
        }
        let stem_out = &trace.nodes[0][0];
        let g_pre = match trace.mode {
            NormMode::Batch => kernels::normalize_batch_backward(stem_out, &trace.stem_stats, &g_h),
            NormMode::Running => kernels::normalize_fixed_backward(&trace.stem_stats, &g_h),
        };
        let (_, g_stem) = kernels::pointwise_conv_backward(&trace.input, &self.stem_weight, self.channels, &g_pre);
        grads.insert(ParamId::StemWeight, g_stem);
        Backward {
            grads,
            mixture_grads: trace.mixture.then_some(mixture_grads),
        }
    }

    /// Folds the batch statistics of a [`NormMode::Batch`] trace into the
    /// running statistics: exact replacement with `momentum = None`, otherwise
    /// an exponential moving average.
    pub fn absorb_stats(&mut self, trace: &Trace, momentum: Option<f64>) {
        if trace.mode != NormMode::Batch {
            return;
        }
        fn fold(running: &mut ChannelStats, batch: &ChannelStats, momentum: Option<f64>) {
            match momentum {
                None => *running = batch.clone(),
                Some(m) => {
                    for (r, b) in running.mean.iter_mut().zip(&batch.mean) {
                        *r = (1.0 - m) * *r + m * b;
                    }
                    for (r, b) in running.var.iter_mut().zip(&batch.var) {
                        *r = (1.0 - m) * *r + m * b;
                    }
                }
            }
            round_f32(&mut running.mean);
            round_f32(&mut running.var);
        }
        fold(&mut self.stem_running, &trace.stem_stats, momentum);
        for (e, ops) in trace.ops.iter().enumerate() {
            for op in ops {
                if let (OpCache::Sep { stats, .. }, OpParams::SepConv { running, .. }) =
                    (&op.cache, &mut self.blocks[e][op.slot].params)
                {
                    fold(running, stats, momentum);
                }
            }
        }
    }

    /// Sets the running statistics along `path` to the exact statistics of
    /// `data`.
    pub fn calibrate(&mut self, path: &[usize], data: &LabeledDataset) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Config("calibration set is empty".into()));
        }
        let (x, _) = data.all();
        let trace = self.forward(&x, Selection::Path(path), NormMode::Batch)?;
        self.absorb_stats(&trace, None);
        Ok(())
    }

    /// Logits for every example of `data` under running statistics.
    pub fn predict_logits(&self, path: &[usize], data: &LabeledDataset) -> Result<Vec<f64>> {
        const CHUNK: usize = 256;
        let mut out = Vec::with_capacity(data.len() * self.num_classes);
        let idx: Vec<usize> = (0..data.len()).collect();
        for chunk in idx.chunks(CHUNK) {
            let (x, _) = data.batch(chunk);
            out.extend(self.logits(&x, Selection::Path(path), NormMode::Running)?);
        }
        Ok(out)
    }

    /// Top-1 accuracy on `data` under running statistics.
    pub fn accuracy(&self, path: &[usize], data: &LabeledDataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Config("evaluation set is empty".into()));
        }
        if data.num_classes() != self.num_classes {
            return Err(Error::Shape(format!(
                "dataset has {} classes, classifier has {}",
                data.num_classes(),
                self.num_classes
            )));
        }
        let logits = self.predict_logits(path, data)?;
        let correct = logits
            .chunks_exact(self.num_classes)
            .zip(data.labels())
            .filter(|(row, &y)| argmax(row) == y)
            .count();
        Ok(correct as f64 / data.len() as f64)
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// SGD with momentum and L2 weight decay. Only tensors present in the
/// gradient map are updated.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<ParamId, Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    /// Applies one update and returns the number of scalars updated.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients, lr: f64) -> u64 {
        let mut updated = 0u64;
        for (&id, g) in grads {
            let p = net.param_mut(id);
            let mut d: Vec<f64> = g.iter().zip(p.iter()).map(|(g, w)| g + self.weight_decay * w).collect();
            if self.momentum != 0.0 {
                match self.velocity.get_mut(&id) {
                    Some(v) => {
                        for (vi, di) in v.iter_mut().zip(&mut d) {
                            *vi = self.momentum * *vi + *di;
                            *di = *vi;
                        }
                    }
                    None => {
                        self.velocity.insert(id, d.clone());
                    }
                }
            }
            for (w, di) in p.iter_mut().zip(&d) {
                *w -= lr * di;
            }
            round_f32(p);
            updated += p.len() as u64;
        }
        updated
    }
}
