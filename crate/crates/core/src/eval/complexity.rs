//! Multiply-accumulate counts and wall-clock runtime.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::reparam::Branch;
use crate::tensor::Dims;
use crate::zoo::{forward_model, forward_recurrent, infer_dims, LayerOp, ModelGraph};
use crate::{ConvParams, Tensor};

fn conv_macs(p: &ConvParams, out_hw: usize) -> u64 {
    let [c_out, cin_g, kh, kw] = p.weight.dims();
    (kh * kw * cin_g * c_out * out_hw) as u64
}

/// MACs of one forward pass; only convolutions contribute.
pub fn count_macs(g: &ModelGraph, frame: Dims) -> Result<u64> {
    let dims = infer_dims(g, frame)?;
    let mut total = 0u64;
    for node in &g.nodes {
        let out = dims[node.id];
        let out_hw = out[0] * out[2] * out[3];
        total += match &node.op {
            LayerOp::Conv(p) => conv_macs(p, out_hw),
            LayerOp::TransposedConv(p) => {
                let i = dims[node.inputs[0]];
                conv_macs(p, i[0] * i[2] * i[3])
            }
            LayerOp::Block(b) => b
                .branches
                .iter()
                .map(|br| match br {
                    Branch::Conv(p) => conv_macs(p, out_hw),
                    Branch::Seq { expand, conv } => conv_macs(expand, out_hw) + conv_macs(conv, out_hw),
                    Branch::Edge { expand, scale, .. } => conv_macs(expand, out_hw) + (9 * scale.len() * out_hw) as u64,
                })
                .sum(),
            _ => 0,
        };
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuntimeStats {
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub iters: usize,
    pub host: String,
}

pub fn host_descriptor() -> String {
    format!(
        "{}-{} threads={}",
        std::env::consts::OS,
        std::env::consts::ARCH,
        rayon::current_num_threads()
    )
}

/// Median wall-clock of `iters` forward passes after `warmup` discarded
/// ones. Host timings say nothing about the challenge's NPU numbers.
pub fn measure_runtime(g: &ModelGraph, frame: Dims, warmup: usize, iters: usize) -> Result<RuntimeStats> {
    if iters == 0 {
        return Err(Error::invalid("measure_runtime", "iters must be at least 1"));
    }
    let x = Tensor::from_fn(frame, |[_, c, y, x]| ((c * 7 + y * 3 + x) % 17) as f32 / 17.0);
    let window = vec![x.clone(); g.frame_slots().len()];
    let run = || -> Result<()> {
        if g.is_recurrent() {
            forward_recurrent(g, &window, None)?;
        } else {
            forward_model(g, &x)?;
        }
        Ok(())
    };
    for _ in 0..warmup {
        run()?;
    }
    let mut times = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        run()?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let median_ms = if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    };
    Ok(RuntimeStats {
        median_ms,
        min_ms: times[0],
        max_ms: times[times.len() - 1],
        iters,
        host: host_descriptor(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build_model, ArchConfig};

    #[test]
    fn single_conv_macs() {
        let mut g = build_model("ncut", &ArchConfig::default()).unwrap();
        g.nodes.truncate(2);
        g.nodes[1].op = LayerOp::Conv(ConvParams::same(3, 6, 3, 1));
        g.output = 1;
        assert_eq!(count_macs(&g, [1, 3, 10, 7]).unwrap(), 162 * 70);
    }

    #[test]
    fn shuffle_only_graph_is_free() {
        let mut g = build_model("ncut", &ArchConfig::default()).unwrap();
        g.nodes.truncate(2);
        g.nodes[1].op = LayerOp::PixelShuffle { r: 4, inverse: true };
        g.output = 1;
        assert_eq!(count_macs(&g, [1, 3, 8, 8]).unwrap(), 0);
    }

    #[test]
    fn zero_iters_rejected() {
        let g = build_model("xjtu", &ArchConfig::default()).unwrap();
        assert!(measure_runtime(&g, [1, 3, 8, 8], 0, 0).is_err());
        let s = measure_runtime(&g, [1, 3, 8, 8], 1, 3).unwrap();
        assert!(s.median_ms > 0.0 && s.min_ms <= s.median_ms && s.median_ms <= s.max_ms);
    }
}
