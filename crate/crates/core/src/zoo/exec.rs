//! Graph execution on a [`Tape`], shape inference and sequence driving.

use super::{LayerOp, ModelGraph, Slot};
use crate::error::{Error, Result};
use crate::tensor::kernels::ConvGeom;
use crate::tensor::{Activation, Dims, Real, Tape, Tensor, Var};

/// Handles produced by recording a graph.
#[derive(Clone, Debug)]
pub struct Recorded {
    pub sr: Var,
    pub states: Vec<(Slot, Var)>,
    /// One entry per graph node.
    pub nodes: Vec<Var>,
    /// One entry per learnable tensor, in `param_views` order.
    pub params: Vec<Var>,
}

impl Recorded {
    pub fn feature(&self, g: &ModelGraph) -> Option<Var> {
        g.feature_tap.map(|i| self.nodes[i])
    }
}

/// Puts every learnable tensor of `g` on the tape, in `param_views` order.
/// They become gradient-tracking leaves when `trainable` is set.
pub fn bind_params<T: Real>(g: &ModelGraph, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
    g.param_views()
        .iter()
        .map(|p| {
            let t = p.to_tensor().cast::<T>();
            if trainable {
                tape.param(t)
            } else {
                tape.constant(t)
            }
        })
        .collect()
}

/// Records the forward pass of `g` with freshly bound parameters.
pub fn record<T: Real>(g: &ModelGraph, tape: &mut Tape<T>, inputs: &[(Slot, Var)], trainable: bool) -> Result<Recorded> {
    let params = bind_params(g, tape, trainable);
    record_with(g, tape, inputs, params)
}

/// Records the forward pass reusing already bound parameters, so several
/// time steps can share (and accumulate gradients into) the same leaves.
pub fn record_with<T: Real>(g: &ModelGraph, tape: &mut Tape<T>, inputs: &[(Slot, Var)], params: Vec<Var>) -> Result<Recorded> {
    if g.nodes.is_empty() {
        return Err(Error::Graph("cannot execute an empty graph".into()));
    }
    let mut cursor = 0usize;
    let mut take = |n: usize| -> Result<&[Var]> {
        let s = params
            .get(cursor..cursor + n)
            .ok_or_else(|| Error::Graph("parameter list exhausted".into()))?;
        cursor += n;
        Ok(s)
    };
    let mut vals: Vec<Var> = Vec::with_capacity(g.nodes.len());
    for node in &g.nodes {
        let ins: Vec<Var> = node.inputs.iter().map(|&i| vals[i]).collect();
        let v = match &node.op {
            LayerOp::Input(slot) => {
                let v = inputs
                    .iter()
                    .find(|(s, _)| s == slot)
                    .map(|&(_, v)| v)
                    .ok_or_else(|| Error::Graph(format!("no value bound to slot `{}`", slot.name())))?;
                let want = g.slot_channels(*slot).unwrap_or(0);
                if tape.value(v).c() != want {
                    return Err(Error::shape(
                        "forward",
                        format!("slot `{}` expects {want} channels, got {}", slot.name(), tape.value(v).c()),
                    ));
                }
                v
            }
            LayerOp::Conv(p) | LayerOp::TransposedConv(p) => {
                let ps = take(1 + p.bias.is_some() as usize)?;
                let (w, b) = (ps[0], ps.get(1).copied());
                if matches!(node.op, LayerOp::Conv(_)) {
                    tape.conv2d(ins[0], w, b, p.stride, p.padding, p.groups)?
                } else {
                    tape.transposed_conv2d(ins[0], w, b, p.stride, p.padding, p.groups)?
                }
            }
            LayerOp::Activation(Activation::Relu) => tape.relu(ins[0])?,
            LayerOp::Activation(Activation::LeakyRelu(a)) => tape.leaky_relu(ins[0], *a as f64)?,
            LayerOp::Activation(Activation::Prelu(_)) => {
                let a = take(1)?[0];
                tape.prelu(ins[0], a)?
            }
            LayerOp::PixelShuffle { r, inverse: false } => tape.pixel_shuffle(ins[0], *r)?,
            LayerOp::PixelShuffle { r, inverse: true } => tape.pixel_unshuffle(ins[0], *r)?,
            LayerOp::BilinearResize { scale } => tape.bilinear(ins[0], *scale)?,
            LayerOp::Concat => tape.concat(&ins)?,
            LayerOp::Add => tape.add(ins[0], ins[1])?,
            LayerOp::Clip { lo, hi } => tape.clip(ins[0], *lo as f64, *hi as f64)?,
            LayerOp::ChannelRepeat { r } => tape.channel_repeat(ins[0], *r)?,
            LayerOp::ChannelSlice { start, len } => tape.channel_slice(ins[0], *start, *len)?,
            LayerOp::Block(b) => {
                let n = b.param_views("").len();
                let ps = take(n)?.to_vec();
                b.record(tape, ins[0], &ps)?
            }
        };
        vals.push(v);
    }
    if cursor != params.len() {
        return Err(Error::Graph(format!("{} parameters bound, {cursor} used", params.len())));
    }
    let states = g.state_outputs.iter().map(|&(s, i)| (s, vals[i])).collect();
    Ok(Recorded {
        sr: vals[g.output],
        states,
        nodes: vals,
        params,
    })
}

/// Hidden states carried between time steps.
pub type RecurrentState = Vec<(Slot, Tensor)>;

/// Single-frame inference for non-recurrent graphs.
pub fn forward_model(g: &ModelGraph, frame: &Tensor) -> Result<Tensor> {
    if g.is_recurrent() {
        return Err(Error::Graph(format!("{} is recurrent; use forward_recurrent", g.arch)));
    }
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(frame.clone());
    let r = record(g, &mut tape, &[(Slot::Frame, x)], false)?;
    Ok(tape.value(r.sr).clone())
}

/// One step of a recurrent graph. `window` holds the frames in time order
/// (e.g. `x_t, x_t+1`); a missing `state` means all-zero hidden states.
pub fn forward_recurrent(
    g: &ModelGraph,
    window: &[Tensor],
    state: Option<&RecurrentState>,
) -> Result<(Tensor, RecurrentState)> {
    let frames = g.frame_slots();
    if window.len() != frames.len() {
        return Err(Error::invalid(
            "forward_recurrent",
            format!("{} expects a window of {} frames, got {}", g.arch, frames.len(), window.len()),
        ));
    }
    let [n, _, h, w] = window[0].dims();
    let mut tape = Tape::<f32>::new();
    let mut inputs: Vec<(Slot, Var)> = frames
        .iter()
        .zip(window)
        .map(|(&s, t)| (s, tape.constant(t.clone())))
        .collect();
    for (slot, c) in g.state_slots() {
        let t = match state {
            None => Tensor::zeros([n, c, h, w]),
            Some(st) => {
                let t = st
                    .iter()
                    .find(|(s, _)| *s == slot)
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| Error::invalid("forward_recurrent", format!("missing state `{}`", slot.name())))?;
                if t.dims() != [n, c, h, w] {
                    return Err(Error::shape(
                        "forward_recurrent",
                        format!("state `{}` has dims {:?}, expected {:?}", slot.name(), t.dims(), [n, c, h, w]),
                    ));
                }
                t
            }
        };
        inputs.push((slot, tape.constant(t)));
    }
    let r = record(g, &mut tape, &inputs, false)?;
    let next = r.states.iter().map(|&(s, v)| (s, tape.value(v).clone())).collect();
    Ok((tape.value(r.sr).clone(), next))
}

/// Frame window for step `t` with boundary frames clamped.
pub(crate) fn window_at<T: Clone>(frames: &[T], offsets: &[isize], t: usize) -> Vec<T> {
    let last = frames.len() as isize - 1;
    offsets
        .iter()
        .map(|&o| frames[(t as isize + o).clamp(0, last) as usize].clone())
        .collect()
}

/// Super-resolves a whole sequence, threading hidden state from a zero start.
pub fn run_sequence(g: &ModelGraph, frames: &[Tensor]) -> Result<Vec<Tensor>> {
    if !g.is_recurrent() {
        return frames.iter().map(|f| forward_model(g, f)).collect();
    }
    let offsets: Vec<isize> = g.frame_slots().iter().filter_map(|s| s.time_offset()).collect();
    let mut state: Option<RecurrentState> = None;
    let mut out = Vec::with_capacity(frames.len());
    for t in 0..frames.len() {
        let (sr, next) = forward_recurrent(g, &window_at(frames, &offsets, t), state.as_ref())?;
        out.push(sr);
        state = Some(next);
    }
    Ok(out)
}

/// Output dims of every node for an `(n, 3, h, w)` frame, without running
/// any arithmetic. State slots take the frame's spatial size.
pub fn infer_dims(g: &ModelGraph, frame: Dims) -> Result<Vec<Dims>> {
    let [n, _, h, w] = frame;
    let mut dims: Vec<Dims> = Vec::with_capacity(g.nodes.len());
    for node in &g.nodes {
        let ins: Vec<Dims> = node.inputs.iter().map(|&i| dims[i]).collect();
        let d = match &node.op {
            LayerOp::Input(slot) => [n, g.slot_channels(*slot).unwrap_or(0), h, w],
            LayerOp::Conv(p) => ConvGeom::conv(ins[0], p.weight.dims(), p.stride, p.padding, p.groups)?.out_dims(),
            LayerOp::TransposedConv(p) => {
                ConvGeom::transposed(ins[0], p.weight.dims(), p.stride, p.padding, p.groups)?.out_dims()
            }
            LayerOp::Block(b) => {
                if ins[0][1] != b.c_in {
                    return Err(Error::shape("branch_block", format!("{} channels into {}", ins[0][1], b.c_in)));
                }
                [ins[0][0], b.c_out, ins[0][2], ins[0][3]]
            }
            LayerOp::Activation(Activation::Prelu(a)) if a.len() != ins[0][1] => {
                return Err(Error::shape("prelu", format!("{} slopes for {} channels", a.len(), ins[0][1])))
            }
            LayerOp::Activation(_) | LayerOp::Clip { .. } => ins[0],
            LayerOp::PixelShuffle { r, inverse } => {
                crate::tensor::tape::check_shuffle(ins[0], *r, *inverse)?;
                let [n, c, h, w] = ins[0];
                if *inverse {
                    [n, c * r * r, h / r, w / r]
                } else {
                    [n, c / (r * r), h * r, w * r]
                }
            }
            LayerOp::BilinearResize { scale } => [ins[0][0], ins[0][1], ins[0][2] * scale, ins[0][3] * scale],
            LayerOp::Concat => {
                let first = ins[0];
                if ins.iter().any(|d| d[0] != first[0] || d[2..] != first[2..]) {
                    return Err(Error::shape("concat", format!("{ins:?}")));
                }
                [first[0], ins.iter().map(|d| d[1]).sum(), first[2], first[3]]
            }
            LayerOp::Add => {
                if ins[0] != ins[1] {
                    return Err(Error::shape("add", format!("{:?} vs {:?}", ins[0], ins[1])));
                }
                ins[0]
            }
            LayerOp::ChannelRepeat { r } => [ins[0][0], ins[0][1] * r, ins[0][2], ins[0][3]],
            LayerOp::ChannelSlice { start, len } => {
                if start + len > ins[0][1] {
                    return Err(Error::shape("channel_slice", "range exceeds channels"));
                }
                [ins[0][0], *len, ins[0][2], ins[0][3]]
            }
        };
        dims.push(d);
    }
    Ok(dims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build_model, init_weights, ArchConfig, InitScheme};

    #[test]
    fn window_clamps_edges() {
        let f = [0, 1, 2, 3];
        assert_eq!(window_at(&f, &[-1, 0, 1], 0), vec![0, 0, 1]);
        assert_eq!(window_at(&f, &[-1, 0, 1], 3), vec![2, 3, 3]);
        assert_eq!(window_at(&f, &[0, 1], 2), vec![2, 3]);
    }

    #[test]
    fn recurrent_needs_matching_window() {
        let g = build_model("redcat", &ArchConfig::default()).unwrap();
        let x = Tensor::zeros([1, 3, 4, 4]);
        assert!(forward_recurrent(&g, &[x.clone()], None).is_err());
        assert!(forward_model(&g, &x).is_err());
        let bad = vec![(Slot::Hidden, Tensor::zeros([1, 3, 4, 4]))];
        assert!(forward_recurrent(&g, &[x.clone(), x], Some(&bad)).is_err());
    }

    #[test]
    fn inferred_dims_match_execution() {
        let g = init_weights(&build_model("genmedia", &ArchConfig::default()).unwrap(), InitScheme::FixedForTest, 1);
        let x = Tensor::full([1, 3, 6, 5], 0.5);
        let mut tape = Tape::<f32>::new();
        let xv = tape.constant(x);
        let r = record(&g, &mut tape, &[(Slot::Frame, xv)], false).unwrap();
        let d = infer_dims(&g, [1, 3, 6, 5]).unwrap();
        for (i, v) in r.nodes.iter().enumerate() {
            assert_eq!(tape.value(*v).dims(), d[i], "node {}", g.nodes[i].name);
        }
    }
}
