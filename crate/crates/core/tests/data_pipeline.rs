use nanosr::data::{
    augment, bicubic_upscale, crop, make_fixtures, make_lr, render_frame, DatasetIndex, FixtureSpec, FrameStore,
    PatchPair, Split,
};
use nanosr::eval::psnr;
use nanosr::Tensor;
use proptest::prelude::*;
use std::sync::OnceLock;

fn fixtures() -> &'static (tempfile::TempDir, DatasetIndex) {
    static CELL: OnceLock<(tempfile::TempDir, DatasetIndex)> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let spec = FixtureSpec {
            train: 4,
            val: 1,
            test: 1,
            frames: 4,
            height: 64,
            width: 96,
        };
        let idx = make_fixtures(dir.path(), 5, &spec).unwrap();
        (dir, idx)
    })
}

/// Keys cubic kernel written out for a = −0.5.
fn keys(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        1.5 * x * x * x - 2.5 * x * x + 1.0
    } else if x < 2.0 {
        -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0
    } else {
        0.0
    }
}

/// Quarter-size resample as one 2-D weighted sum per output pixel, with the
/// kernel stretched ×4 and out-of-range taps clamped to the edge.
fn quarter_oracle(hr: &Tensor) -> Tensor {
    let [n, c, h, w] = hr.dims();
    Tensor::from_fn([n, c, h / 4, w / 4], |[b, ch, oy, ox]| {
        let cy = 4.0 * oy as f64 + 1.5;
        let cx = 4.0 * ox as f64 + 1.5;
        let (mut acc, mut norm) = (0.0, 0.0);
        for sy in (cy as isize - 9)..=(cy as isize + 9) {
            for sx in (cx as isize - 9)..=(cx as isize + 9) {
                let wt = keys((sy as f64 - cy) / 4.0) * keys((sx as f64 - cx) / 4.0);
                let y = sy.clamp(0, h as isize - 1) as usize;
                let x = sx.clamp(0, w as isize - 1) as usize;
                acc += wt * hr.at([b, ch, y, x]) as f64;
                norm += wt;
            }
        }
        (acc / norm) as f32
    })
}

#[test]
fn every_hr_frame_has_a_quarter_lr_frame() {
    let (_, idx) = fixtures();
    assert_eq!(idx.sequences.len(), 6);
    assert_eq!(idx.frame_size, (64, 96));
    for s in &idx.sequences {
        for f in 0..s.frames {
            let (w, h) = image::image_dimensions(s.lr_path(f)).unwrap();
            assert_eq!((h, w), (16, 24));
        }
    }
}

#[test]
fn reds_counts_are_enforced_outside_desk_mode() {
    let (dir, _) = fixtures();
    assert!(DatasetIndex::scan(dir.path(), false).is_err());
    assert!(DatasetIndex::scan(dir.path(), true).is_ok());
}

#[test]
fn make_lr_matches_the_direct_resampler_on_fixtures() {
    for (seq, t) in [(0, 0), (3, 2), (5, 3)] {
        let hr = render_frame(5, seq, t, 64, 96);
        let err = make_lr(&hr).unwrap().max_abs_diff(&quarter_oracle(&hr));
        assert!(err <= 1e-6, "{err:.3e}");
    }
}

#[test]
fn challenge_frame_size_degrades_to_180x320() {
    let hr = Tensor::from_fn([1, 3, 720, 1280], |[_, c, y, x]| ((c + y + x) % 11) as f32 / 10.0);
    assert_eq!(make_lr(&hr).unwrap().dims(), [1, 3, 180, 320]);
    let flat = Tensor::full([1, 3, 720, 1280], 0.25);
    assert!(make_lr(&flat).unwrap().data().iter().all(|v| (v - 0.25).abs() < 1e-6));
}

#[test]
fn bicubic_round_trip_clears_the_sanity_floor() {
    let hr = render_frame(5, 1, 0, 64, 96);
    let back = bicubic_upscale(&make_lr(&hr).unwrap(), 4).unwrap();
    assert!(psnr(&back, &hr, 1.0).unwrap() >= 20.0);
}

#[test]
fn sampling_is_seeded() {
    let (_, idx) = fixtures();
    let store = FrameStore::new(idx);
    let a = store.sample_patches(Split::Train, (32, 32), 12, 9).unwrap();
    let b = store.sample_patches(Split::Train, (32, 32), 12, 9).unwrap();
    assert_eq!(a, b);
    let c = store.sample_patches(Split::Train, (32, 32), 12, 10).unwrap();
    assert_ne!(
        a.iter().map(|p| &p.provenance).collect::<Vec<_>>(),
        c.iter().map(|p| &p.provenance).collect::<Vec<_>>()
    );
}

#[test]
fn full_frame_patch_is_the_frame_pair() {
    let (_, idx) = fixtures();
    let store = FrameStore::new(idx);
    let p = store.sample_patches(Split::Val, (64, 96), 1, 3).unwrap().remove(0);
    assert_eq!((p.provenance.y, p.provenance.x), (0, 0));
    let seq = idx.sequences.iter().find(|s| s.id == p.provenance.sequence).unwrap();
    let hr = nanosr::data::decode_image(&seq.hr_path(p.provenance.frame)).unwrap();
    let lr = nanosr::data::decode_image(&seq.lr_path(p.provenance.frame)).unwrap();
    assert_eq!(p.hr, hr);
    assert_eq!(p.lr, lr);
    assert!(store.sample_patches(Split::Val, (68, 96), 1, 3).is_err());
    assert!(store.sample_patches(Split::Val, (30, 32), 1, 3).is_err());
}

#[test]
fn patches_are_cut_at_matching_positions() {
    let (_, idx) = fixtures();
    let store = FrameStore::new(idx);
    for p in store.sample_patches(Split::Train, (16, 24), 20, 4).unwrap() {
        let seq = idx.sequences.iter().find(|s| s.id == p.provenance.sequence).unwrap();
        let hr = nanosr::data::decode_image(&seq.hr_path(p.provenance.frame)).unwrap();
        let lr = nanosr::data::decode_image(&seq.lr_path(p.provenance.frame)).unwrap();
        let (y, x) = (p.provenance.y, p.provenance.x);
        assert_eq!(p.hr, crop(&hr, y, x, 16, 24));
        assert_eq!(p.lr, crop(&lr, y / 4, x / 4, 4, 6));
    }
}

#[test]
fn upscaled_lr_patch_tracks_its_own_hr_patch() {
    let (_, idx) = fixtures();
    let store = FrameStore::new(idx);
    let ps = store.sample_patches(Split::Train, (32, 32), 101, 17).unwrap();
    let mut wins = 0;
    for i in 0..100 {
        let up = bicubic_upscale(&ps[i].lr, 4).unwrap();
        let own = psnr(&up, &ps[i].hr, 1.0).unwrap();
        let other = psnr(&up, &ps[i + 1].hr, 1.0).unwrap();
        wins += usize::from(own > other);
    }
    assert_eq!(wins, 100);
}

fn unit_pair(seed: u64) -> PatchPair {
    let (_, idx) = fixtures();
    FrameStore::new(idx).sample_patches(Split::Train, (16, 16), 1, seed).unwrap().remove(0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn augmentation_keeps_the_pair_aligned(seed in 0u64..1000, fh: bool, fv: bool, rot in 0u8..4) {
        let p = unit_pair(seed);
        let a = augment(&p, fh, fv, rot);
        prop_assert_eq!(&a.hr, &nanosr::data::transform(&p.hr, fh, fv, rot));
        prop_assert_eq!(a.lr, nanosr::data::transform(&p.lr, fh, fv, rot));
        prop_assert!(a.hr.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let mut sorted_a: Vec<f32> = a.hr.data().to_vec();
        let mut sorted_p: Vec<f32> = p.hr.data().to_vec();
        sorted_a.sort_by(f32::total_cmp);
        sorted_p.sort_by(f32::total_cmp);
        prop_assert_eq!(sorted_a, sorted_p);
    }
}
