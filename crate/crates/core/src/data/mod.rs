//! Dataset layout, degradation, patch sampling and augmentation.
//!
//! Frames live at `<root>/<split>/<seq>/<frame:08>.png` with the bicubic
//! ×4 LR counterparts under `<root>/<split>_lr/<seq>/<frame:08>.png`.

mod bicubic;
mod io;
mod synth;

pub use bicubic::{axis_taps, bicubic_resize, bicubic_upscale, cubic, make_lr};
pub use io::{decode_image, encode_image, quantize, to_rgb8};
pub use synth::{make_fixtures, render_frame, FixtureSpec};

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// Sequence counts of the full REDS release.
    fn reds_count(self) -> usize {
        match self {
            Split::Train => 240,
            Split::Val | Split::Test => 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sequence {
    pub id: String,
    pub split: Split,
    pub frames: usize,
    pub hr_dir: PathBuf,
    pub lr_dir: PathBuf,
}

impl Sequence {
    pub fn hr_path(&self, frame: usize) -> PathBuf {
        self.hr_dir.join(format!("{frame:08}.png"))
    }

    pub fn lr_path(&self, frame: usize) -> PathBuf {
        self.lr_dir.join(format!("{frame:08}.png"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub sequences: Vec<Sequence>,
    /// HR `(h, w)` shared by every frame.
    pub frame_size: (usize, usize),
}

fn sorted_dirs(p: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(p)
        .map_err(|e| Error::io(p, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    v.sort();
    Ok(v)
}

fn image_size(p: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(p).map_err(|e| Error::Image {
        path: p.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok((h as usize, w as usize))
}

impl DatasetIndex {
    /// Walks the layout and checks LR/HR pairing. Outside desk mode the
    /// REDS sequence counts are enforced too.
    pub fn scan(root: &Path, desk: bool) -> Result<Self> {
        let mut sequences = Vec::new();
        let mut frame_size: Option<(usize, usize)> = None;
        for split in Split::ALL {
            let hr_root = root.join(split.dir_name());
            if !hr_root.is_dir() {
                continue;
            }
            let lr_root = root.join(format!("{}_lr", split.dir_name()));
            for hr_dir in sorted_dirs(&hr_root)? {
                let id = hr_dir.file_name().unwrap().to_string_lossy().into_owned();
                let lr_dir = lr_root.join(&id);
                let mut names: Vec<String> = std::fs::read_dir(&hr_dir)
                    .map_err(|e| Error::io(&hr_dir, e))?
                    .filter_map(|e| e.ok())
                    .map(|e| e.file_name().to_string_lossy().into_owned())
                    .filter(|n| n.ends_with(".png"))
                    .collect();
                names.sort();
                for (i, n) in names.iter().enumerate() {
                    if *n != format!("{i:08}.png") {
                        return Err(Error::Dataset(format!("{}: unexpected frame name {n}", hr_dir.display())));
                    }
                }
                let seq = Sequence {
                    id,
                    split,
                    frames: names.len(),
                    hr_dir,
                    lr_dir,
                };
                for f in 0..seq.frames {
                    let (h, w) = image_size(&seq.hr_path(f))?;
                    match frame_size {
                        None => frame_size = Some((h, w)),
                        Some(s) if s != (h, w) => {
                            return Err(Error::Dataset(format!(
                                "{}: frame size {h}x{w} differs from {}x{}",
                                seq.hr_path(f).display(),
                                s.0,
                                s.1
                            )))
                        }
                        _ => {}
                    }
                    let lr = seq.lr_path(f);
                    if !lr.exists() {
                        return Err(Error::Dataset(format!("missing LR frame {}", lr.display())));
                    }
                    if h % 4 != 0 || w % 4 != 0 || image_size(&lr)? != (h / 4, w / 4) {
                        return Err(Error::Dataset(format!("{} is not a quarter of its HR frame", lr.display())));
                    }
                }
                sequences.push(seq);
            }
        }
        if !desk {
            for split in Split::ALL {
                let n = sequences.iter().filter(|s| s.split == split).count();
                if n != split.reds_count() {
                    return Err(Error::Dataset(format!(
                        "{} split has {n} sequences, REDS has {} (use desk mode for other datasets)",
                        split.dir_name(),
                        split.reds_count()
                    )));
                }
            }
        }
        let frame_size = frame_size.ok_or_else(|| Error::Dataset(format!("no frames under {}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            sequences,
            frame_size,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&Sequence> {
        self.sequences.iter().filter(|s| s.split == split).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub sequence: String,
    pub frame: usize,
    pub y: usize,
    pub x: usize,
}

/// Aligned LR/HR crops; `hr` is exactly 4× `lr` in each spatial dim.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub lr: Tensor,
    pub hr: Tensor,
    pub provenance: Provenance,
}

/// Consecutive aligned crops for recurrent training.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipPair {
    pub lr: Vec<Tensor>,
    pub hr: Vec<Tensor>,
    pub provenance: Provenance,
}

/// Spatial crop of a `(1, c, h, w)` tensor.
pub fn crop(t: &Tensor, y: usize, x: usize, h: usize, w: usize) -> Tensor {
    Tensor::from_fn([t.n(), t.c(), h, w], |[n, c, yy, xx]| t.at([n, c, y + yy, x + xx]))
}

type FramePair = Arc<(Tensor, Tensor)>;

/// Decoded-frame cache shared by the samplers. Holds at most `capacity`
/// frame pairs and simply starts over when full, so results never depend
/// on cache state.
pub struct FrameStore<'a> {
    idx: &'a DatasetIndex,
    cache: Mutex<HashMap<(usize, usize), FramePair>>,
    capacity: usize,
}

impl<'a> FrameStore<'a> {
    pub fn new(idx: &'a DatasetIndex) -> Self {
        Self::with_capacity(idx, 1024)
    }

    pub fn with_capacity(idx: &'a DatasetIndex, capacity: usize) -> Self {
        Self {
            idx,
            cache: Mutex::new(HashMap::new()),
            capacity,
        }
    }

    pub fn index(&self) -> &DatasetIndex {
        self.idx
    }

    /// `(lr, hr)` for one frame of sequence number `seq` in the index.
    pub fn pair(&self, seq: usize, frame: usize) -> Result<FramePair> {
        if let Some(p) = self.cache.lock().unwrap().get(&(seq, frame)) {
            return Ok(p.clone());
        }
        let s = &self.idx.sequences[seq];
        let p = Arc::new((decode_image(&s.lr_path(frame))?, decode_image(&s.hr_path(frame))?));
        let mut cache = self.cache.lock().unwrap();
        if cache.len() >= self.capacity {
            cache.clear();
        }
        cache.insert((seq, frame), p.clone());
        Ok(p)
    }

    fn split_ids(&self, split: Split) -> Result<Vec<usize>> {
        let ids: Vec<usize> = (0..self.idx.sequences.len())
            .filter(|&i| self.idx.sequences[i].split == split && self.idx.sequences[i].frames > 0)
            .collect();
        if ids.is_empty() {
            return Err(Error::Dataset(format!("{} split is empty", split.dir_name())));
        }
        Ok(ids)
    }

    fn check_patch(&self, (ph, pw): (usize, usize)) -> Result<()> {
        let (h, w) = self.idx.frame_size;
        if ph == 0 || pw == 0 || ph % 4 != 0 || pw % 4 != 0 {
            return Err(Error::invalid("sample_patches", format!("patch {ph}x{pw} must be positive multiples of 4")));
        }
        if ph > h || pw > w {
            return Err(Error::invalid(
                "sample_patches",
                format!("patch {ph}x{pw} larger than frame {h}x{w}"),
            ));
        }
        Ok(())
    }

    fn draw_origin(&self, rng: &mut ChaCha8Rng, (ph, pw): (usize, usize)) -> (usize, usize) {
        let (h, w) = self.idx.frame_size;
        (4 * rng.random_range(0..=(h - ph) / 4), 4 * rng.random_range(0..=(w - pw) / 4))
    }

    fn cut(&self, seq: usize, frame: usize, y: usize, x: usize, (ph, pw): (usize, usize)) -> Result<(Tensor, Tensor)> {
        let p = self.pair(seq, frame)?;
        Ok((crop(&p.0, y / 4, x / 4, ph / 4, pw / 4), crop(&p.1, y, x, ph, pw)))
    }

    /// `n` random aligned crops of HR size `patch` from `split`.
    pub fn sample_patches(&self, split: Split, patch: (usize, usize), n: usize, seed: u64) -> Result<Vec<PatchPair>> {
        self.check_patch(patch)?;
        let ids = self.split_ids(split)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let seq = ids[rng.random_range(0..ids.len())];
            let frame = rng.random_range(0..self.idx.sequences[seq].frames);
            let (y, x) = self.draw_origin(&mut rng, patch);
            let (lr, hr) = self.cut(seq, frame, y, x, patch)?;
            out.push(PatchPair {
                lr,
                hr,
                provenance: Provenance {
                    sequence: self.idx.sequences[seq].id.clone(),
                    frame,
                    y,
                    x,
                },
            });
        }
        Ok(out)
    }

    /// `n` random clips of `len` consecutive frames sharing one crop window.
    pub fn sample_clips(&self, split: Split, patch: (usize, usize), len: usize, n: usize, seed: u64) -> Result<Vec<ClipPair>> {
        self.check_patch(patch)?;
        let ids: Vec<usize> = self
            .split_ids(split)?
            .into_iter()
            .filter(|&i| self.idx.sequences[i].frames >= len)
            .collect();
        if ids.is_empty() || len == 0 {
            return Err(Error::Dataset(format!("no sequence has {len} frames")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let seq = ids[rng.random_range(0..ids.len())];
            let start = rng.random_range(0..=self.idx.sequences[seq].frames - len);
            let (y, x) = self.draw_origin(&mut rng, patch);
            let (mut lr, mut hr) = (Vec::with_capacity(len), Vec::with_capacity(len));
            for f in start..start + len {
                let (l, h) = self.cut(seq, f, y, x, patch)?;
                lr.push(l);
                hr.push(h);
            }
            out.push(ClipPair {
                lr,
                hr,
                provenance: Provenance {
                    sequence: self.idx.sequences[seq].id.clone(),
                    frame: start,
                    y,
                    x,
                },
            });
        }
        Ok(out)
    }
}

/// Uncached sampling from the training split.
pub fn sample_patches(idx: &DatasetIndex, patch: (usize, usize), n: usize, seed: u64) -> Result<Vec<PatchPair>> {
    FrameStore::new(idx).sample_patches(Split::Train, patch, n, seed)
}

pub fn flip_h(t: &Tensor) -> Tensor {
    let w = t.w();
    Tensor::from_fn(t.dims(), |[n, c, y, x]| t.at([n, c, y, w - 1 - x]))
}

pub fn flip_v(t: &Tensor) -> Tensor {
    let h = t.h();
    Tensor::from_fn(t.dims(), |[n, c, y, x]| t.at([n, c, h - 1 - y, x]))
}

/// Quarter turn counter-clockwise; swaps `h` and `w`.
pub fn rot90(t: &Tensor) -> Tensor {
    let [n, c, h, w] = t.dims();
    Tensor::from_fn([n, c, w, h], |[nn, cc, y, x]| t.at([nn, cc, x, w - 1 - y]))
}

/// Flips, then `rot` quarter turns.
pub fn transform(t: &Tensor, fh: bool, fv: bool, rot: u8) -> Tensor {
    let mut out = t.clone();
    if fh {
        out = flip_h(&out);
    }
    if fv {
        out = flip_v(&out);
    }
    for _ in 0..rot % 4 {
        out = rot90(&out);
    }
    out
}

/// Applies the same geometric transform to both halves of a pair.
pub fn augment(pair: &PatchPair, fh: bool, fv: bool, rot: u8) -> PatchPair {
    PatchPair {
        lr: transform(&pair.lr, fh, fv, rot),
        hr: transform(&pair.hr, fh, fv, rot),
        provenance: pair.provenance.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> PatchPair {
        let hr = Tensor::from_fn([1, 3, 8, 12], |[_, c, y, x]| (c * 96 + y * 12 + x) as f32 / 300.0);
        PatchPair {
            lr: crop(&hr, 0, 0, 2, 3),
            hr,
            provenance: Provenance {
                sequence: "000".into(),
                frame: 0,
                y: 0,
                x: 0,
            },
        }
    }

    #[test]
    fn augment_identities() {
        let p = pair();
        assert_eq!(augment(&p, false, false, 0), p);
        assert_eq!(augment(&augment(&p, true, false, 0), true, false, 0), p);
        assert_eq!(augment(&augment(&p, false, true, 0), false, true, 0), p);
        let mut q = p.clone();
        for _ in 0..4 {
            q = augment(&q, false, false, 1);
        }
        assert_eq!(q, p);
        assert_eq!(augment(&p, false, false, 1).hr.dims(), [1, 3, 12, 8]);
    }

    #[test]
    fn rot90_direction() {
        let t = Tensor::new([1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(rot90(&t).data(), &[3.0, 6.0, 2.0, 5.0, 1.0, 4.0]);
    }
}
