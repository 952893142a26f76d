//! Builders for the ten architectures and their reference cards.
//!
//! Every builder produces a graph at the training topology (branch blocks
//! unfused). Weights are zero until [`super::init_weights`] runs.

use serde::{Deserialize, Serialize};

use super::{Builder, LayerOp, ModelGraph, Slot};
use crate::error::{Error, Result};
use crate::reparam::BranchBlock;
use crate::tensor::Activation;
use crate::ConvParams;

pub const ARCH_IDS: [&str; 10] = [
    "mvideosr", "rcbsr", "fighter", "xjtu", "boe", "genmedia", "ncut", "mortar", "redcat", "team221b",
];

/// Knobs the architectures leave open. `None` picks the per-arch default.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// Feature channels.
    pub width: Option<usize>,
    /// Repeated body units (blocks or layers, depending on the arch).
    pub blocks: Option<usize>,
    /// Expansion channels of the ECB `1×1→3×3` branch.
    pub mid: Option<usize>,
    /// Upscaling factor; only `mvideosr` accepts 2 (for its pre-training stage).
    pub scale: Option<usize>,
}

struct Knobs {
    width: usize,
    blocks: usize,
    mid: usize,
    scale: usize,
}

fn knobs(arch: &str, cfg: &ArchConfig) -> Result<Knobs> {
    let (w, b) = match arch {
        "mvideosr" => (6, 0),
        "rcbsr" => (8, 1),
        "fighter" => (8, 2),
        "xjtu" => (16, 0),
        "boe" => (25, 0),
        "genmedia" => (28, 3),
        "ncut" => (28, 0),
        "mortar" => (32, 8),
        "redcat" => (8, 5),
        "team221b" => (16, 0),
        other => return Err(Error::UnknownArch(other.to_string())),
    };
    let k = Knobs {
        width: cfg.width.unwrap_or(w),
        blocks: cfg.blocks.unwrap_or(b),
        mid: cfg.mid.unwrap_or(2 * cfg.width.unwrap_or(w)),
        scale: cfg.scale.unwrap_or(4),
    };
    if k.width == 0 || k.mid == 0 {
        return Err(Error::Config(format!("{arch}: width must be positive")));
    }
    match (arch, k.scale) {
        (_, 4) | ("mvideosr", 2) => {}
        _ => return Err(Error::Config(format!("{arch}: unsupported scale {}", k.scale))),
    }
    match arch {
        "mortar" if k.blocks < 2 => return Err(Error::Config("mortar needs at least 2 layers".into())),
        "redcat" if k.width % 2 != 0 => return Err(Error::Config("redcat width must be even".into())),
        "rcbsr" | "fighter" | "redcat" if k.blocks == 0 => {
            return Err(Error::Config(format!("{arch}: at least one block required")))
        }
        _ => {}
    }
    Ok(k)
}

pub fn build_model(arch: &str, cfg: &ArchConfig) -> Result<ModelGraph> {
    let k = knobs(arch, cfg)?;
    match arch {
        "mvideosr" => mvideosr(&k),
        "rcbsr" => rcbsr(&k),
        "fighter" => fighter(&k),
        "xjtu" => xjtu(&k),
        "boe" => boe(&k),
        "genmedia" => genmedia(&k),
        "ncut" => ncut(&k),
        "mortar" => mortar(&k),
        "redcat" => redcat(&k),
        "team221b" => team221b(&k),
        _ => unreachable!(),
    }
}

/// Output channels feeding a depth-to-space by `s`.
fn sub(s: usize) -> usize {
    3 * s * s
}

fn mvideosr(k: &Knobs) -> Result<ModelGraph> {
    let (c, s) = (k.width, k.scale);
    let mut b = Builder::new("mvideosr", s);
    let x = b.input(Slot::Frame, 3);
    let y = b.conv("conv1", x, 3, c, 3);
    let y = b.conv("conv2", y, c, c, 3);
    let tap = b.push("prelu", LayerOp::Activation(Activation::Prelu(vec![0.25; c])), &[y]);
    let y = b.conv("conv3", tap, c, c, 3);
    let y = b.conv("conv4", y, c, sub(s), 3);
    let y = b.shuffle("d2s", y, s);
    b.finish(y, vec![], Some(tap))
}

fn rcbsr(k: &Knobs) -> Result<ModelGraph> {
    let c = k.width;
    let mut b = Builder::new("rcbsr", 4);
    let x = b.input(Slot::Frame, 3);
    let mut y = b.conv("head", x, 3, c, 3);
    for i in 0..k.blocks {
        y = b.push(&format!("ecb{i}"), LayerOp::Block(BranchBlock::ecb(c, c, k.mid)), &[y]);
        y = b.relu(&format!("ecb{i}.relu"), y);
    }
    let tap = y;
    let y = b.conv("tail", y, c, 48, 3);
    let y = b.shuffle("d2s", y, 4);
    b.finish(y, vec![], Some(tap))
}

fn fighter(k: &Knobs) -> Result<ModelGraph> {
    let c = k.width;
    let mut b = Builder::new("fighter", 4);
    let x = b.input(Slot::Frame, 3);
    let mut y = b.conv("head", x, 3, c, 3);
    let mut first = None;
    for i in 0..k.blocks {
        let d = b.conv_groups(&format!("block{i}.dw"), y, c, c, 3, c);
        let p = b.conv(&format!("block{i}.pw"), d, c, c, 1);
        y = b.relu(&format!("block{i}.relu"), p);
        first.get_or_insert(y);
    }
    if k.blocks > 1 {
        y = b.add("skip", first.unwrap(), y);
    }
    let tap = y;
    let y = b.conv("tail", y, c, 48, 3);
    let y = b.shuffle("d2s", y, 4);
    b.finish(y, vec![], Some(tap))
}

fn xjtu(k: &Knobs) -> Result<ModelGraph> {
    let c = k.width;
    let mut b = Builder::new("xjtu", 4);
    let x = b.input(Slot::Frame, 3);
    let y = b.conv("conv1", x, 3, c, 3);
    let y = b.conv_relu("conv2", y, c, c, 3);
    let tap = b.conv_relu("conv3", y, c, c, 3);
    let y = b.conv("conv4", tap, c, 48, 3);
    let y = b.shuffle("d2s", y, 4);
    b.finish(y, vec![], Some(tap))
}

fn boe(k: &Knobs) -> Result<ModelGraph> {
    let c = k.width;
    let mut b = Builder::new("boe", 4);
    let x = b.input(Slot::Frame, 3);
    let mut y = b.conv_relu("conv1", x, 3, c, 3);
    for i in 2..=4 {
        y = b.conv_relu(&format!("conv{i}"), y, c, c, 3);
    }
    y = b.conv("conv5", y, c, c, 3);
    let tap = b.conv_relu("conv6", y, c, c, 3);
    let up = ConvParams {
        weight: crate::Tensor::zeros([3, c, 4, 4]),
        bias: Some(vec![0.0; 3]),
        stride: 4,
        padding: 0,
        groups: 1,
    };
    let y = b.push("upsample", LayerOp::TransposedConv(up), &[tap]);
    b.finish(y, vec![], Some(tap))
}

fn genmedia(k: &Knobs) -> Result<ModelGraph> {
    let c = k.width;
    let mut b = Builder::new("genmedia", 4);
    let x = b.input(Slot::Frame, 3);
    let f1 = b.conv_relu("conv1", x, 3, c, 3);
    let mut y = f1;
    for i in 0..k.blocks {
        y = b.conv_relu(&format!("body{i}"), y, c, c, 3);
    }
    let tap = b.add("skip", y, f1);
    let y = b.conv("tail", tap, c, 48, 3);
    let anchor = b.push("anchor", LayerOp::ChannelRepeat { r: 16 }, &[x]);
    let y = b.concat("merge", &[y, anchor]);
    let y = b.conv("fuse", y, 96, 48, 1);
    let y = b.push("clip", LayerOp::Clip { lo: 0.0, hi: 1.0 }, &[y]);
    let y = b.shuffle("d2s", y, 4);
    b.finish(y, vec![], Some(tap))
}

fn ncut(k: &Knobs) -> Result<ModelGraph> {
    let c = k.width;
    let mut b = Builder::new("ncut", 4);
    let x = b.input(Slot::Frame, 3);
    let y = b.conv_relu("conv1", x, 3, c, 3);
    let tap = b.conv_relu("conv2", y, c, c, 3);
    let y = b.conv("conv3", tap, c, 48, 3);
    let y = b.shuffle("d2s", y, 4);
    b.finish(y, vec![], Some(tap))
}

fn mortar(k: &Knobs) -> Result<ModelGraph> {
    let c = k.width;
    let layers = k.blocks;
    let mut b = Builder::new("mortar", 4);
    let mut y = b.input(Slot::Frame, 3);
    let mut tap = y;
    for i in 0..layers {
        let c_in = if i == 0 { 3 } else { c };
        let c_out = if i + 1 == layers { 48 } else { c };
        y = b.push(&format!("rep{i}"), LayerOp::Block(BranchBlock::conv3_conv1(c_in, c_out)), &[y]);
        if i + 1 < layers {
            y = b.relu(&format!("rep{i}.relu"), y);
            tap = y;
        }
    }
    let y = b.shuffle("d2s", y, 4);
    b.finish(y, vec![], Some(tap))
}

fn imdb_lite(b: &mut Builder, name: &str, x: usize, c: usize) -> usize {
    let h = c / 2;
    let act = |b: &mut Builder, n: &str, y: usize| b.push(n, LayerOp::Activation(Activation::LeakyRelu(0.05)), &[y]);
    let s1 = b.conv(&format!("{name}.c1"), x, c, c, 3);
    let s1 = act(b, &format!("{name}.c1.act"), s1);
    let d1 = b.push(&format!("{name}.d1"), LayerOp::ChannelSlice { start: 0, len: h }, &[s1]);
    let r1 = b.push(&format!("{name}.r1"), LayerOp::ChannelSlice { start: h, len: c - h }, &[s1]);
    let s2 = b.conv(&format!("{name}.c2"), r1, c - h, c, 3);
    let s2 = act(b, &format!("{name}.c2.act"), s2);
    let d2 = b.push(&format!("{name}.d2"), LayerOp::ChannelSlice { start: 0, len: h }, &[s2]);
    let r2 = b.push(&format!("{name}.r2"), LayerOp::ChannelSlice { start: h, len: c - h }, &[s2]);
    let d3 = b.conv(&format!("{name}.c3"), r2, c - h, h, 3);
    let d3 = act(b, &format!("{name}.c3.act"), d3);
    let cat = b.concat(&format!("{name}.cat"), &[d1, d2, d3]);
    let f = b.conv(&format!("{name}.fuse"), cat, 3 * h, c, 1);
    b.add(&format!("{name}.res"), f, x)
}

fn redcat(k: &Knobs) -> Result<ModelGraph> {
    let c = k.width;
    let mut b = Builder::new("redcat", 4);
    let xt = b.input(Slot::Frame, 3);
    let xn = b.input(Slot::NextFrame, 3);
    let h = b.input(Slot::Hidden, c);
    let cat = b.concat("in.cat", &[xt, xn, h]);
    let mut y = b.conv_relu("in", cat, 6 + c, c, 3);
    for i in 0..k.blocks {
        y = imdb_lite(&mut b, &format!("imdb{i}"), y, c);
    }
    let hidden = y;
    let y = b.conv("tail", y, c, 48, 3);
    let y = b.shuffle("d2s", y, 4);
    let skip = b.push("skip", LayerOp::BilinearResize { scale: 4 }, &[xt]);
    let y = b.add("out", y, skip);
    b.finish(y, vec![(Slot::Hidden, hidden)], Some(hidden))
}

fn team221b(k: &Knobs) -> Result<ModelGraph> {
    let c = k.width;
    let mut b = Builder::new("team221b", 4);
    let xp = b.input(Slot::PrevFrame, 3);
    let xt = b.input(Slot::Frame, 3);
    let xn = b.input(Slot::NextFrame, 3);
    let hf = b.input(Slot::HiddenFwd, c);
    let hb = b.input(Slot::HiddenBwd, c);
    let group = |b: &mut Builder, name: &str, other: usize, h: usize| {
        let cat = b.concat(&format!("{name}.cat"), &[other, xt, h]);
        let y = b.conv_relu(&format!("{name}.conv1"), cat, 6 + c, c, 3);
        b.conv_relu(&format!("{name}.conv2"), y, c, c, 3)
    };
    let ff = group(&mut b, "fwd", xp, hf);
    let fb = group(&mut b, "bwd", xn, hb);
    let cat = b.concat("merge", &[ff, fb]);
    let y = b.conv_relu("rec1", cat, 2 * c, c, 3);
    let y = b.conv("rec2", y, c, 48, 3);
    let y = b.shuffle("d2s", y, 4);
    let skip = b.push("skip", LayerOp::BilinearResize { scale: 4 }, &[xt]);
    let y = b.add("out", y, skip);
    b.finish(y, vec![(Slot::HiddenFwd, ff), (Slot::HiddenBwd, fb)], Some(cat))
}

/// Reference description with a closed-form parameter count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ArchCard {
    pub arch: String,
    pub team: &'static str,
    pub structure: String,
    /// Learnable parameters of the training topology.
    pub params: usize,
    /// Learnable parameters after branch fusion.
    pub fused_params: usize,
    pub notes: &'static str,
}

/// `k×k` convolution with bias.
fn conv_p(c_in: usize, c_out: usize, k: usize) -> usize {
    c_in * c_out * k * k + c_out
}

pub fn arch_card(arch: &str, cfg: &ArchConfig) -> Result<ArchCard> {
    let k = knobs(arch, cfg)?;
    let (c, n) = (k.width, k.blocks);
    let card = |team, structure: String, params, fused_params, notes| ArchCard {
        arch: arch.to_string(),
        team,
        structure,
        params,
        fused_params,
        notes,
    };
    Ok(match arch {
        "mvideosr" => {
            let p = conv_p(3, c, 3) + 2 * conv_p(c, c, 3) + c + conv_p(c, sub(k.scale), 3);
            card(
                "MVideoSR",
                format!("conv3x3 3→{c}, conv3x3 {c}→{c}, PReLU({c}), conv3x3 {c}→{c}, conv3x3 {c}→{}, depth-to-space ×{}", sub(k.scale), k.scale),
                p,
                p,
                "The PReLU position is not stated by the team; it is placed after the second convolution.",
            )
        }
        "rcbsr" => {
            let ecb = conv_p(c, c, 3) + conv_p(c, k.mid, 1) + conv_p(k.mid, c, 3) + 3 * (conv_p(c, c, 1) + 2 * c);
            let shell = conv_p(3, c, 3) + conv_p(c, 48, 3);
            card(
                "ZX VIP",
                format!(
                    "conv3x3 3→{c}, {n}× [ECB {c}→{c} (3x3 | 1x1→{m}→3x3 | 1x1→Sobel-x | 1x1→Sobel-y | 1x1→Laplacian) + ReLU], conv3x3 {c}→48, depth-to-space ×4",
                    m = k.mid
                ),
                shell + n * ecb,
                shell + n * conv_p(c, c, 3),
                "Each ECB fuses to one 3x3 convolution for inference.",
            )
        }
        "fighter" => {
            let block = (9 * c + c) + conv_p(c, c, 1);
            card(
                "Fighter",
                format!("conv3x3 3→{c}, {n}× [depthwise 3x3 + pointwise 1x1 + ReLU], residual add first→last block, conv3x3 {c}→48, depth-to-space ×4"),
                conv_p(3, c, 3) + n * block + conv_p(c, 48, 3),
                conv_p(3, c, 3) + n * block + conv_p(c, 48, 3),
                "Block count and the head/tail convolutions are not stated by the team.",
            )
        }
        "xjtu" => {
            let p = conv_p(3, c, 3) + 2 * conv_p(c, c, 3) + conv_p(c, 48, 3);
            card(
                "XJTU-MIGU SUPER",
                format!("conv3x3 3→{c}, conv3x3 {c}→{c} + ReLU, conv3x3 {c}→{c} + ReLU, conv3x3 {c}→48, depth-to-space ×4"),
                p,
                p,
                "",
            )
        }
        "boe" => {
            let p = conv_p(3, c, 3) + 5 * conv_p(c, c, 3) + (c * 3 * 16 + 3);
            card(
                "BOE-IOT-AIBD",
                format!("6× conv3x3 at {c} channels (ReLU after 1-4 and 6), transposed conv 4x4 stride 4 {c}→3"),
                p,
                p,
                "Distillation tap is the sixth convolution's activation, not a 50-channel concat.",
            )
        }
        "genmedia" => {
            let p = conv_p(3, c, 3) + n * conv_p(c, c, 3) + conv_p(c, 48, 3) + conv_p(96, 48, 1);
            card(
                "GenMedia Group",
                format!("conv3x3 3→{c} + ReLU, {n}× conv3x3 + ReLU, skip add, conv3x3 {c}→48, concat with 16× channel anchor, conv1x1 96→48, clip, depth-to-space ×4"),
                p,
                p,
                "Single-frame input; the team's ten-frame variant is not reproduced.",
            )
        }
        "ncut" => {
            let p = conv_p(3, c, 3) + conv_p(c, c, 3) + conv_p(c, 48, 3);
            card(
                "NCUT VGroup",
                format!("conv3x3 3→{c} + ReLU, conv3x3 {c}→{c} + ReLU, conv3x3 {c}→48, depth-to-space ×4"),
                p,
                p,
                "Width is a free knob.",
            )
        }
        "mortar" => {
            let (mut p, mut f) = (0, 0);
            for i in 0..n {
                let ci = if i == 0 { 3 } else { c };
                let co = if i + 1 == n { 48 } else { c };
                p += conv_p(ci, co, 3) + conv_p(ci, co, 1);
                f += conv_p(ci, co, 3);
            }
            card(
                "Mortar ICT",
                format!("{n}× [3x3 ‖ 1x1 branch block] at {c} channels with ReLU between, last emits 48, depth-to-space ×4"),
                p,
                f,
                "Branch blocks fuse to plain 3x3 convolutions for inference.",
            )
        }
        "redcat" => {
            let h = c / 2;
            let block = conv_p(c, c, 3) + conv_p(c - h, c, 3) + conv_p(c - h, h, 3) + conv_p(3 * h, c, 1);
            let p = conv_p(6 + c, c, 3) + n * block + conv_p(c, 48, 3);
            card(
                "RedCat AutoX",
                format!("concat(x_t, x_t+1, h) → conv3x3 → {n}× IMDB-lite({c}) → hidden; conv3x3 {c}→48, depth-to-space ×4, + bilinear x_t"),
                p,
                p,
                "IMDB-lite: three progressive 1:1 splits, concat of the distilled parts, 1x1 fuse, residual.",
            )
        }
        "team221b" => {
            let group = conv_p(6 + c, c, 3) + conv_p(c, c, 3);
            let p = 2 * group + conv_p(2 * c, c, 3) + conv_p(c, 48, 3);
            card(
                "221B",
                format!("forward group (x_t-1, x_t, h_fwd) and backward group (x_t+1, x_t, h_bwd) each 2× conv3x3 + ReLU at {c}; concat → conv3x3 + ReLU → conv3x3 →48, depth-to-space ×4, + bilinear x_t"),
                p,
                p,
                "Layer counts per group are not stated by the team.",
            )
        }
        _ => unreachable!(),
    })
}

/// Markdown page with one section per architecture at default knobs.
pub fn render_cards() -> Result<String> {
    let mut s = String::from("# Architectures\n\nParameter counts are closed-form and checked against the built graphs by the test suite.\n");
    for id in ARCH_IDS {
        let c = arch_card(id, &ArchConfig::default())?;
        s.push_str(&format!("\n## {} ({})\n\n{}\n\n", c.arch, c.team, c.structure));
        s.push_str(&format!("- parameters (training topology): {}\n", c.params));
        s.push_str(&format!("- parameters (fused): {}\n", c.fused_params));
        if !c.notes.is_empty() {
            s.push_str(&format!("- note: {}\n", c.notes));
        }
    }
    Ok(s)
}
