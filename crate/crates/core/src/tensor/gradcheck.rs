//! Central finite-difference checks of tape gradients in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor64, Var};
use crate::error::{Error, Result};

/// Worst disagreement found by [`check_gradients`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub points: usize,
}

/// Builds a graph over leaves holding `inputs` and returns its output.
pub type Builder<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

fn objective(build: &Builder, inputs: &[Tensor64], proj: Option<&Tensor64>) -> Result<(f64, Tape<f64>, Vec<Var>, Var)> {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let y = tape.value(out);
    let value = match proj {
        Some(p) => y.data().iter().zip(p.data()).map(|(a, b)| a * b).sum(),
        None => 0.0,
    };
    Ok((value, tape, vars, out))
}

/// Compares the reverse-mode gradient of `Σ out ⊙ R` (with `R` a fixed
/// random projection) against central differences with step `h`, at
/// `points` random coordinates of every input. Relative error is
/// `|a − n| / max(|a|, |n|)`; coordinates where both are below `1e-9`
/// count as exact.
pub fn check_gradients(build: &Builder, inputs: &[Tensor64], points: usize, h: f64, seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, tape, vars, out) = objective(build, inputs, None)?;
    let dims = tape.value(out).dims();
    let proj = Tensor64::from_fn(dims, |_| rng.random_range(-1.0..1.0));
    let grads = tape.backward(out, proj.clone())?;
    let mut worst = 0.0f64;
    let mut count = 0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor64::zeros(inputs[i].dims()));
        for _ in 0..points {
            let k = rng.random_range(0..inputs[i].numel());
            let mut shifted = inputs.to_vec();
            shifted[i].data_mut()[k] += h;
            let up = objective(build, &shifted, Some(&proj))?.0;
            shifted[i].data_mut()[k] -= 2.0 * h;
            let down = objective(build, &shifted, Some(&proj))?.0;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[k];
            let scale = a.abs().max(numeric.abs());
            let rel = if scale < 1e-9 { 0.0 } else { (a - numeric).abs() / scale };
            if !rel.is_finite() {
                return Err(Error::invalid("check_gradients", format!("non-finite error at input {i}[{k}]")));
            }
            worst = worst.max(rel);
            count += 1;
        }
    }
    Ok(GradReport {
        max_rel_err: worst,
        points: count,
    })
}

/// A named differentiable function with its check inputs.
pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor64>,
    pub build: Box<Builder<'static>>,
}

fn uniform(rng: &mut ChaCha8Rng, dims: super::Dims) -> Tensor64 {
    Tensor64::from_fn(dims, |_| rng.random_range(-1.0..1.0))
}

/// Values at least `gap` away from every point in `kinks`.
fn away_from(rng: &mut ChaCha8Rng, dims: super::Dims, kinks: &[f64], gap: f64) -> Tensor64 {
    Tensor64::from_fn(dims, |_| loop {
        let v: f64 = rng.random_range(-1.0..1.0);
        if kinks.iter().all(|k| (v - k).abs() > gap) {
            break v;
        }
    })
}

fn case(name: &'static str, inputs: Vec<Tensor64>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static) -> GradCase {
    GradCase {
        name,
        inputs,
        build: Box::new(build),
    }
}

/// Every differentiable tape op plus the two branch-block kinds.
pub fn op_cases(seed: u64) -> Vec<GradCase> {
    use crate::reparam::BranchBlock;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut cases = vec![
        case(
            "conv2d",
            vec![uniform(r, [2, 4, 7, 5]), uniform(r, [6, 2, 3, 3]), uniform(r, [1, 6, 1, 1])],
            |t, v| t.conv2d(v[0], v[1], Some(v[2]), 2, 1, 2),
        ),
        case("conv2d_1x1", vec![uniform(r, [1, 3, 4, 4]), uniform(r, [5, 3, 1, 1])], |t, v| {
            t.conv2d(v[0], v[1], None, 1, 0, 1)
        }),
        case(
            "transposed_conv2d",
            vec![uniform(r, [1, 4, 3, 4]), uniform(r, [3, 4, 4, 4]), uniform(r, [1, 3, 1, 1])],
            |t, v| t.transposed_conv2d(v[0], v[1], Some(v[2]), 4, 0, 1),
        ),
        case(
            "transposed_conv2d_grouped",
            vec![uniform(r, [1, 4, 3, 3]), uniform(r, [4, 2, 3, 3])],
            |t, v| t.transposed_conv2d(v[0], v[1], None, 2, 1, 2),
        ),
        case("relu", vec![away_from(r, [1, 3, 4, 4], &[0.0], 0.01)], |t, v| t.relu(v[0])),
        case("leaky_relu", vec![away_from(r, [1, 3, 4, 4], &[0.0], 0.01)], |t, v| t.leaky_relu(v[0], 0.05)),
        case(
            "prelu",
            vec![away_from(r, [1, 3, 4, 4], &[0.0], 0.01), uniform(r, [1, 3, 1, 1])],
            |t, v| t.prelu(v[0], v[1]),
        ),
        case("pixel_shuffle", vec![uniform(r, [1, 8, 2, 3])], |t, v| t.pixel_shuffle(v[0], 2)),
        case("pixel_unshuffle", vec![uniform(r, [1, 2, 4, 6])], |t, v| t.pixel_unshuffle(v[0], 2)),
        case("bilinear", vec![uniform(r, [1, 2, 3, 4])], |t, v| t.bilinear(v[0], 4)),
        case("concat", vec![uniform(r, [1, 2, 3, 3]), uniform(r, [1, 3, 3, 3])], |t, v| t.concat(&[v[0], v[1]])),
        case("add", vec![uniform(r, [1, 2, 3, 3]), uniform(r, [1, 2, 3, 3])], |t, v| t.add(v[0], v[1])),
        case("clip", vec![away_from(r, [1, 3, 4, 4], &[-0.5, 0.5], 0.01)], |t, v| t.clip(v[0], -0.5, 0.5)),
        case("channel_repeat", vec![uniform(r, [1, 3, 2, 2])], |t, v| t.channel_repeat(v[0], 4)),
        case("channel_slice", vec![uniform(r, [1, 5, 2, 2])], |t, v| t.channel_slice(v[0], 1, 3)),
        case("pad_const", vec![uniform(r, [1, 3, 3, 4]), uniform(r, [1, 3, 1, 1])], |t, v| {
            t.pad_const(v[0], v[1], 1)
        }),
        case("scale_kernel", vec![uniform(r, [1, 4, 1, 1])], |t, v| {
            t.scale_kernel(v[0], 3, vec![1.0, 0.0, -1.0, 2.0, 0.0, -2.0, 1.0, 0.0, -1.0])
        }),
        case("sum", vec![uniform(r, [2, 3, 2, 2])], |t, v| t.sum(v[0])),
    ];
    for (name, block) in [
        ("ecb_block", BranchBlock::ecb(3, 4, 6)),
        ("conv3_conv1_block", BranchBlock::conv3_conv1(3, 4)),
    ] {
        let mut inputs = vec![uniform(r, [1, 3, 5, 5])];
        inputs.extend(block.param_views("").iter().map(|p| uniform(r, p.to_tensor().dims())));
        cases.push(case(name, inputs, move |t, v| block.record(t, v[0], &v[1..])));
    }
    cases
}
