//! Warm start of a ×4 model from a trained ×2 model.
//!
//! With depth-to-space in DCR order, output channel `c·r² + i·r + j` lands
//! at subpixel `(i, j)` of colour `c`. Tiling the ×2 tail so that ×4
//! subpixel `(i, j)` reads ×2 subpixel `(i/2, j/2)` makes every ×2 subpixel
//! cover a 2×2 patch of the ×4 output:
//!
//! ```text
//! ×2 block      ×4 block
//!  a b           a a b b
//!  c d           a a b b
//!                c c d d
//!                c c d d
//! ```

use super::{LayerOp, ModelGraph};
use crate::error::{Error, Result};
use crate::{ConvParams, Tensor};

fn source_channel(o: usize) -> usize {
    let (c, i, j) = (o / 16, (o % 16) / 4, o % 4);
    c * 4 + (i / 2) * 2 + j / 2
}

/// Expands a `(12, c_in, k, k)` ×2 tail convolution to 48 output channels.
pub fn repeat_weights_2x_to_4x(p: &ConvParams) -> Result<ConvParams> {
    let [c_out, c_in, kh, kw] = p.weight.dims();
    if c_out != 12 || p.groups != 1 {
        return Err(Error::shape(
            "repeat_weights_2x_to_4x",
            format!("source must be a dense conv with 12 output channels, got {c_out}"),
        ));
    }
    let per = c_in * kh * kw;
    let src = p.weight.data();
    let mut w = Vec::with_capacity(48 * per);
    for o in 0..48 {
        let s = source_channel(o);
        w.extend_from_slice(&src[s * per..(s + 1) * per]);
    }
    Ok(ConvParams {
        weight: Tensor::new([48, c_in, kh, kw], w)?,
        bias: p.bias.as_ref().map(|b| (0..48).map(|o| b[source_channel(o)]).collect()),
        stride: p.stride,
        padding: p.padding,
        groups: 1,
    })
}

/// Turns a ×2 graph into its ×4 counterpart: every 12-channel conv feeding a
/// depth-to-space by 2 is repeated and the shuffle widened to 4.
pub fn transfer_2x_to_4x(g: &ModelGraph) -> Result<ModelGraph> {
    if g.scale != 2 {
        return Err(Error::invalid("transfer_2x_to_4x", format!("source graph has scale {}", g.scale)));
    }
    let mut out = g.clone();
    let mut changed = 0;
    for id in 0..out.nodes.len() {
        if !matches!(out.nodes[id].op, LayerOp::PixelShuffle { r: 2, inverse: false }) {
            continue;
        }
        let src = out.nodes[id].inputs[0];
        let LayerOp::Conv(p) = &out.nodes[src].op else {
            return Err(Error::Graph("depth-to-space input is not a convolution".into()));
        };
        out.nodes[src].op = LayerOp::Conv(repeat_weights_2x_to_4x(p)?);
        out.nodes[id].op = LayerOp::PixelShuffle { r: 4, inverse: false };
        changed += 1;
    }
    if changed == 0 {
        return Err(Error::Graph("no ×2 depth-to-space tail found".into()));
    }
    out.scale = 4;
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_map_duplicates_2x2() {
        let map: Vec<usize> = (0..16).map(source_channel).collect();
        assert_eq!(map, vec![0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3]);
        assert_eq!(source_channel(47), 11);
    }

    #[test]
    fn rejects_non_12_sources() {
        let p = ConvParams::same(6, 12, 3, 1);
        let q = repeat_weights_2x_to_4x(&p).unwrap();
        assert_eq!(q.weight.dims(), [48, 6, 3, 3]);
        assert_eq!(q.bias.as_ref().unwrap().len(), 48);
        assert!(repeat_weights_2x_to_4x(&q).is_err());
    }
}
