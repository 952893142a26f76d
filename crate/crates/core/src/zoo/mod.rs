//! Declarative model graphs for the ten challenge architectures.
//!
//! A [`ModelGraph`] is an ordered list of [`LayerNode`]s. Each node names the
//! ids of its inputs, which must precede it, so the list is already in
//! topological order. Inputs enter through [`LayerOp::Input`] nodes bound to
//! a named [`Slot`]; recurrent graphs additionally export hidden states.

mod arch;
mod exec;
mod init;
mod transfer;

pub use arch::{arch_card, build_model, render_cards, ArchCard, ArchConfig, ARCH_IDS};
pub(crate) use exec::window_at;
pub use exec::{
    bind_params, forward_model, forward_recurrent, infer_dims, record, record_with, run_sequence, Recorded,
    RecurrentState,
};
pub use init::{init_weights, InitScheme};
pub use transfer::{repeat_weights_2x_to_4x, transfer_2x_to_4x};

use crate::error::{Error, Result};
use crate::reparam::BranchBlock;
use crate::tensor::{Activation, Dims, Tensor};
use crate::ConvParams;

/// Named graph inputs and recurrent state slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    PrevFrame,
    Frame,
    NextFrame,
    Hidden,
    HiddenFwd,
    HiddenBwd,
}

impl Slot {
    pub fn name(self) -> &'static str {
        match self {
            Slot::PrevFrame => "prev_frame",
            Slot::Frame => "frame",
            Slot::NextFrame => "next_frame",
            Slot::Hidden => "hidden",
            Slot::HiddenFwd => "hidden_fwd",
            Slot::HiddenBwd => "hidden_bwd",
        }
    }

    pub fn is_state(self) -> bool {
        matches!(self, Slot::Hidden | Slot::HiddenFwd | Slot::HiddenBwd)
    }

    /// Frame offset relative to the current time step; `None` for states.
    pub fn time_offset(self) -> Option<isize> {
        match self {
            Slot::PrevFrame => Some(-1),
            Slot::Frame => Some(0),
            Slot::NextFrame => Some(1),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerOp {
    Input(Slot),
    Conv(ConvParams),
    TransposedConv(ConvParams),
    Activation(Activation),
    PixelShuffle { r: usize, inverse: bool },
    BilinearResize { scale: usize },
    Concat,
    Add,
    Clip { lo: f32, hi: f32 },
    /// Interleaved channel replication: output `c·r + k` copies input `c`.
    ChannelRepeat { r: usize },
    ChannelSlice { start: usize, len: usize },
    /// Multi-branch training block; see [`crate::reparam`].
    Block(BranchBlock),
}

impl LayerOp {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerOp::Input(_) => "input",
            LayerOp::Conv(_) => "conv",
            LayerOp::TransposedConv(_) => "transposed_conv",
            LayerOp::Activation(_) => "activation",
            LayerOp::PixelShuffle { inverse: false, .. } => "pixel_shuffle",
            LayerOp::PixelShuffle { inverse: true, .. } => "pixel_unshuffle",
            LayerOp::BilinearResize { .. } => "bilinear_resize",
            LayerOp::Concat => "concat",
            LayerOp::Add => "add",
            LayerOp::Clip { .. } => "clip",
            LayerOp::ChannelRepeat { .. } => "channel_repeat",
            LayerOp::ChannelSlice { .. } => "channel_slice",
            LayerOp::Block(_) => "branch_block",
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            LayerOp::Conv(p) | LayerOp::TransposedConv(p) => p.param_count(),
            LayerOp::Activation(Activation::Prelu(a)) => a.len(),
            LayerOp::Block(b) => b.param_count(),
            _ => 0,
        }
    }

    /// Accepted number of inputs as `(min, max)`.
    fn arity(&self) -> (usize, usize) {
        match self {
            LayerOp::Input(_) => (0, 0),
            LayerOp::Concat => (1, usize::MAX),
            LayerOp::Add => (2, 2),
            _ => (1, 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNode {
    pub id: usize,
    pub name: String,
    pub op: LayerOp,
    pub inputs: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    pub arch: String,
    pub scale: usize,
    /// Declared input slots with their channel counts.
    pub slots: Vec<(Slot, usize)>,
    pub nodes: Vec<LayerNode>,
    pub output: usize,
    /// Next-step hidden states, keyed by the slot they feed.
    pub state_outputs: Vec<(Slot, usize)>,
    /// Intermediate feature map exposed for distillation.
    pub feature_tap: Option<usize>,
}

/// Role of a learnable tensor, used by initializers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    PreluSlope,
    EdgeScale,
    EdgeBias,
}

/// Read-only view of one learnable tensor.
#[derive(Clone, Debug)]
pub struct ParamView<'a> {
    pub name: String,
    /// Rank 4 for kernels, rank 1 for per-channel vectors.
    pub shape: Vec<usize>,
    pub data: &'a [f32],
    /// Kernel fan-in (`c_in/groups·k·k`), shared with the bias; 0 for vectors.
    pub fan_in: usize,
    pub kind: ParamKind,
}

impl<'a> ParamView<'a> {
    pub(crate) fn conv(prefix: &str, p: &'a ConvParams) -> Vec<ParamView<'a>> {
        let [o, i, kh, kw] = p.weight.dims();
        let fan_in = i * kh * kw;
        let mut out = vec![ParamView {
            name: format!("{prefix}.weight"),
            shape: vec![o, i, kh, kw],
            data: p.weight.data(),
            fan_in,
            kind: ParamKind::Weight,
        }];
        if let Some(b) = &p.bias {
            out.push(ParamView {
                name: format!("{prefix}.bias"),
                shape: vec![b.len()],
                data: b,
                fan_in,
                kind: ParamKind::Bias,
            });
        }
        out
    }

    pub(crate) fn vector(name: String, data: &'a [f32], kind: ParamKind) -> Self {
        ParamView {
            name,
            shape: vec![data.len()],
            data,
            fan_in: 0,
            kind,
        }
    }

    /// Tensor form used on the tape: vectors become `(1, c, 1, 1)`.
    pub fn to_tensor(&self) -> Tensor {
        let dims: Dims = match self.shape.as_slice() {
            [c] => [1, *c, 1, 1],
            [a, b, c, d] => [*a, *b, *c, *d],
            other => unreachable!("parameter rank {}", other.len()),
        };
        Tensor::new(dims, self.data.to_vec()).expect("parameter view dims")
    }
}

/// Parameter count and serialized size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Description {
    pub param_count: usize,
    pub model_bytes: usize,
}

impl ModelGraph {
    /// A graph with no nodes; useful as the neutral element for tooling.
    pub fn empty(arch: &str) -> Self {
        Self {
            arch: arch.to_string(),
            scale: 1,
            slots: Vec::new(),
            nodes: Vec::new(),
            output: 0,
            state_outputs: Vec::new(),
            feature_tap: None,
        }
    }

    pub fn is_recurrent(&self) -> bool {
        !self.state_outputs.is_empty()
    }

    pub fn slot_channels(&self, slot: Slot) -> Option<usize> {
        self.slots.iter().find(|(s, _)| *s == slot).map(|&(_, c)| c)
    }

    /// Frame slots ordered by time offset.
    pub fn frame_slots(&self) -> Vec<Slot> {
        let mut v: Vec<Slot> = self.slots.iter().map(|&(s, _)| s).filter(|s| !s.is_state()).collect();
        v.sort_by_key(|s| s.time_offset());
        v
    }

    pub fn state_slots(&self) -> Vec<(Slot, usize)> {
        self.slots.iter().copied().filter(|(s, _)| s.is_state()).collect()
    }

    /// Checks ordering, arity and slot declarations.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Ok(());
        }
        for (pos, node) in self.nodes.iter().enumerate() {
            if node.id != pos {
                return Err(Error::Graph(format!("node `{}` has id {} at position {pos}", node.name, node.id)));
            }
            if let Some(&bad) = node.inputs.iter().find(|&&i| i >= pos) {
                return Err(Error::Graph(format!("node `{}` uses {bad} before it is defined", node.name)));
            }
            let (lo, hi) = node.op.arity();
            if node.inputs.len() < lo || node.inputs.len() > hi {
                return Err(Error::Graph(format!(
                    "node `{}` ({}) has {} inputs",
                    node.name,
                    node.op.kind(),
                    node.inputs.len()
                )));
            }
            if let LayerOp::Input(slot) = node.op {
                if self.slot_channels(slot).is_none() {
                    return Err(Error::Graph(format!("input slot `{}` is not declared", slot.name())));
                }
            }
        }
        let last = self.nodes.len();
        if self.output >= last {
            return Err(Error::Graph("output node out of range".into()));
        }
        for &(slot, node) in &self.state_outputs {
            if node >= last || !slot.is_state() || self.slot_channels(slot).is_none() {
                return Err(Error::Graph(format!("bad state output for `{}`", slot.name())));
            }
        }
        let declared_states = self.state_slots().len();
        if declared_states != self.state_outputs.len() {
            return Err(Error::Graph("every state slot needs exactly one state output".into()));
        }
        Ok(())
    }

    /// All learnable tensors in the fixed visit order used everywhere.
    pub fn param_views(&self) -> Vec<ParamView<'_>> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                LayerOp::Conv(p) | LayerOp::TransposedConv(p) => out.extend(ParamView::conv(&node.name, p)),
                LayerOp::Activation(Activation::Prelu(a)) => {
                    out.push(ParamView::vector(format!("{}.slope", node.name), a, ParamKind::PreluSlope))
                }
                LayerOp::Block(b) => out.extend(b.param_views(&node.name)),
                _ => {}
            }
        }
        out
    }

    /// Mutable parameter buffers, same order as [`ModelGraph::param_views`].
    pub fn params_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for node in &mut self.nodes {
            match &mut node.op {
                LayerOp::Conv(p) | LayerOp::TransposedConv(p) => {
                    out.push(p.weight.data_mut());
                    if let Some(b) = p.bias.as_mut() {
                        out.push(b.as_mut_slice());
                    }
                }
                LayerOp::Activation(Activation::Prelu(a)) => out.push(a.as_mut_slice()),
                LayerOp::Block(b) => out.extend(b.params_mut()),
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.nodes.iter().map(|n| n.op.param_count()).sum()
    }

    pub fn describe(&self) -> Description {
        Description {
            param_count: self.param_count(),
            model_bytes: crate::weights::encoded_len(self),
        }
    }

    pub fn node_by_name(&self, name: &str) -> Option<&LayerNode> {
        self.nodes.iter().find(|n| n.name == name)
    }
}

/// Incremental graph construction used by the architecture builders.
pub(crate) struct Builder {
    g: ModelGraph,
}

impl Builder {
    pub fn new(arch: &str, scale: usize) -> Self {
        let mut g = ModelGraph::empty(arch);
        g.scale = scale;
        Self { g }
    }

    pub fn input(&mut self, slot: Slot, channels: usize) -> usize {
        self.g.slots.push((slot, channels));
        self.push(slot.name(), LayerOp::Input(slot), &[])
    }

    pub fn push(&mut self, name: &str, op: LayerOp, inputs: &[usize]) -> usize {
        let id = self.g.nodes.len();
        self.g.nodes.push(LayerNode {
            id,
            name: name.to_string(),
            op,
            inputs: inputs.to_vec(),
        });
        id
    }

    /// Same-padded stride-1 convolution with bias.
    pub fn conv(&mut self, name: &str, x: usize, c_in: usize, c_out: usize, k: usize) -> usize {
        self.push(name, LayerOp::Conv(ConvParams::same(c_in, c_out, k, 1)), &[x])
    }

    pub fn conv_groups(&mut self, name: &str, x: usize, c_in: usize, c_out: usize, k: usize, groups: usize) -> usize {
        self.push(name, LayerOp::Conv(ConvParams::same(c_in, c_out, k, groups)), &[x])
    }

    pub fn relu(&mut self, name: &str, x: usize) -> usize {
        self.push(name, LayerOp::Activation(Activation::Relu), &[x])
    }

    pub fn conv_relu(&mut self, name: &str, x: usize, c_in: usize, c_out: usize, k: usize) -> usize {
        let y = self.conv(name, x, c_in, c_out, k);
        self.relu(&format!("{name}.relu"), y)
    }

    pub fn shuffle(&mut self, name: &str, x: usize, r: usize) -> usize {
        self.push(name, LayerOp::PixelShuffle { r, inverse: false }, &[x])
    }

    pub fn add(&mut self, name: &str, a: usize, b: usize) -> usize {
        self.push(name, LayerOp::Add, &[a, b])
    }

    pub fn concat(&mut self, name: &str, xs: &[usize]) -> usize {
        self.push(name, LayerOp::Concat, xs)
    }

    pub fn finish(mut self, output: usize, states: Vec<(Slot, usize)>, tap: Option<usize>) -> Result<ModelGraph> {
        self.g.output = output;
        self.g.state_outputs = states;
        self.g.feature_tap = tap;
        self.g.validate()?;
        Ok(self.g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_rejects_forward_reference() {
        let mut b = Builder::new("t", 1);
        let x = b.input(Slot::Frame, 3);
        b.push("bad", LayerOp::Add, &[x, 5]);
        assert!(b.finish(0, vec![], None).is_err());
    }

    #[test]
    fn validate_rejects_wrong_arity() {
        let mut b = Builder::new("t", 1);
        let x = b.input(Slot::Frame, 3);
        let y = b.push("bad", LayerOp::Add, &[x]);
        assert!(b.finish(y, vec![], None).is_err());
    }

    #[test]
    fn empty_graph_describes_as_zero() {
        let g = ModelGraph::empty("none");
        assert!(g.validate().is_ok());
        assert_eq!(g.describe().param_count, 0);
        assert!(g.param_views().is_empty());
    }

    #[test]
    fn views_and_mut_buffers_align() {
        let mut b = Builder::new("t", 1);
        let x = b.input(Slot::Frame, 3);
        let y = b.conv("c1", x, 3, 6, 3);
        let y = b.push("act", LayerOp::Activation(Activation::Prelu(vec![0.25; 6])), &[y]);
        let y = b.push("blk", LayerOp::Block(BranchBlock::ecb(6, 6, 12)), &[y]);
        let mut g = b.finish(y, vec![], None).unwrap();
        let lens: Vec<usize> = g.param_views().iter().map(|p| p.data.len()).collect();
        let mut_lens: Vec<usize> = g.params_mut().iter().map(|p| p.len()).collect();
        assert_eq!(lens, mut_lens);
        assert_eq!(lens.iter().sum::<usize>(), g.param_count());
    }
}
