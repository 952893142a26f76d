use nanosr::reparam::{embed_to_3x3, fuse_block, fuse_model, fuse_parallel, fuse_sequential, Branch, BranchBlock, EdgeKind};
use nanosr::tensor::{conv2d, ConvParams};
use nanosr::zoo::{build_model, forward_model, init_weights, ArchConfig, InitScheme, LayerOp, ModelGraph};
use nanosr::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_conv(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, k: usize) -> ConvParams {
    let w = Tensor::from_fn([c_out, c_in, k, k], |_| rng.random_range(-0.5..0.5));
    let b = (0..c_out).map(|_| rng.random_range(-0.5..0.5)).collect();
    ConvParams::new(w, Some(b), 1, k / 2, 1).unwrap()
}

fn unit_input(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
    Tensor::from_fn([1, c, h, w], |_| rng.random::<f32>())
}

fn five_branch(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize) -> BranchBlock {
    let mid = 5;
    let mut edge = |kind| Branch::Edge {
        expand: rand_conv(rng, c_in, c_out, 1),
        kind,
        scale: (0..c_out).map(|_| rng.random_range(-0.5..0.5)).collect(),
        bias: (0..c_out).map(|_| rng.random_range(-0.5..0.5)).collect(),
    };
    let e1 = edge(EdgeKind::SobelX);
    let e2 = edge(EdgeKind::Laplacian);
    let branches = vec![
        Branch::Conv(rand_conv(rng, c_in, c_out, 3)),
        Branch::Conv(rand_conv(rng, c_in, c_out, 1)),
        Branch::Seq {
            expand: rand_conv(rng, c_in, mid, 1),
            conv: rand_conv(rng, mid, c_out, 3),
        },
        e1,
        e2,
    ];
    BranchBlock::new(c_in, c_out, branches).unwrap()
}

fn conv_count(g: &ModelGraph) -> usize {
    g.nodes.iter().filter(|n| matches!(n.op, LayerOp::Conv(_))).count()
}

#[test]
fn five_branch_block_fuses_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = five_branch(&mut rng, 4, 6);
    let fused = fuse_block(&b).unwrap();
    assert_eq!(fused.kernel(), 3);
    for _ in 0..20 {
        let x = unit_input(&mut rng, 4, 9, 11);
        let err = conv2d(&x, &fused).unwrap().max_abs_diff(&b.forward(&x).unwrap());
        assert!(err <= 1e-5, "{err:.3e}");
    }
}

#[test]
fn parallel_fusion_equals_summed_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let branches: Vec<ConvParams> = (0..5).map(|_| rand_conv(&mut rng, 3, 4, 3)).collect();
    let fused = fuse_parallel(&branches).unwrap();
    for _ in 0..20 {
        let x = unit_input(&mut rng, 3, 7, 6);
        let mut sum = Tensor::zeros([1, 4, 7, 6]);
        for p in &branches {
            let y = conv2d(&x, p).unwrap();
            sum.data_mut().iter_mut().zip(y.data()).for_each(|(s, v)| *s += v);
        }
        assert!(conv2d(&x, &fused).unwrap().max_abs_diff(&sum) <= 1e-5);
    }
}

#[test]
fn sequential_fusion_with_bias_padding_is_exact_at_borders() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let first = rand_conv(&mut rng, 3, 5, 1);
    let second = rand_conv(&mut rng, 5, 4, 3);
    let fused = fuse_sequential(&first, &second).unwrap();
    let block = BranchBlock::new(
        3,
        4,
        vec![Branch::Seq {
            expand: first.clone(),
            conv: second.clone(),
        }],
    )
    .unwrap();
    let x = unit_input(&mut rng, 3, 6, 6);
    let two_stage = block.forward(&x).unwrap();
    let err = conv2d(&x, &fused).unwrap().max_abs_diff(&two_stage);
    assert!(err <= 1e-5, "{err:.3e}");
    // Zero padding of the intermediate would disagree on the border.
    let mid = conv2d(&x, &first).unwrap();
    let zero_padded = conv2d(&mid, &second).unwrap();
    assert!(zero_padded.max_abs_diff(&two_stage) > 1e-3);
}

#[test]
fn embedded_1x1_matches_everywhere() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = rand_conv(&mut rng, 3, 2, 1);
    let e = embed_to_3x3(&p).unwrap();
    let x = unit_input(&mut rng, 3, 5, 4);
    assert!(conv2d(&x, &e).unwrap().max_abs_diff(&conv2d(&x, &p).unwrap()) <= 1e-6);
    assert_eq!(embed_to_3x3(&e).unwrap(), e);
}

#[test]
fn ecb_block_fuses_exactly() {
    let g = init_weights(&build_model("rcbsr", &ArchConfig::default()).unwrap(), InitScheme::FixedForTest, 8);
    let b = g
        .nodes
        .iter()
        .find_map(|n| match &n.op {
            LayerOp::Block(b) => Some(b.clone()),
            _ => None,
        })
        .unwrap();
    assert_eq!(b.branches.len(), 5);
    let fused = fuse_block(&b).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let x = unit_input(&mut rng, b.c_in, 10, 10);
        assert!(conv2d(&x, &fused).unwrap().max_abs_diff(&b.forward(&x).unwrap()) <= 1e-5);
    }
}

#[test]
fn fused_models_match_and_shrink() {
    for (arch, convs_after) in [("rcbsr", 3), ("mortar", 8)] {
        let g = init_weights(&build_model(arch, &ArchConfig::default()).unwrap(), InitScheme::FixedForTest, 21);
        let f = fuse_model(&g).unwrap();
        assert!(f.nodes.iter().all(|n| !matches!(n.op, LayerOp::Block(_))));
        assert_eq!(conv_count(&f), convs_after, "{arch}");
        assert!(f.param_count() <= g.param_count());
        assert_eq!(fuse_model(&f).unwrap(), f);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..5 {
            let x = unit_input(&mut rng, 3, 16, 16);
            let err = forward_model(&f, &x).unwrap().max_abs_diff(&forward_model(&g, &x).unwrap());
            assert!(err <= 1e-5, "{arch}: {err:.3e}");
        }
    }
}

#[test]
fn block_free_graph_is_unchanged() {
    let g = init_weights(&build_model("xjtu", &ArchConfig::default()).unwrap(), InitScheme::FixedForTest, 1);
    assert_eq!(fuse_model(&g).unwrap(), g);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_supported_block_fuses_within_tolerance(seed in 0u64..100_000, c_in in 1usize..5, c_out in 1usize..5, h in 1usize..8, w in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = five_branch(&mut rng, c_in, c_out);
        let fused = fuse_block(&b).unwrap();
        let x = unit_input(&mut rng, c_in, h, w);
        prop_assert!(conv2d(&x, &fused).unwrap().max_abs_diff(&b.forward(&x).unwrap()) <= 1e-5);
    }
}
