//! Synthetic labelled clip datasets for desk-scale experiments.
//!
//! Two tasks:
//! - `moving-shape-direction`: one square or disc moving at constant integer
//!   velocity on a torus; the class is the direction (up, down, left, right).
//! - `static-shape-identity`: a still regular polygon; class `c` has `c + 3`
//!   vertices. Every frame is identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use thiserror::Error;

use crate::rng::{self, stream, Rng};
use crate::vidpipe::{Manifest, ManifestEntry, RawClip, VidError, RAWCLIP_EXTENSION};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("need at least one clip per class: n = {n}, classes = {classes}")]
    TooFewClips { n: usize, classes: usize },
    #[error("invalid synthetic task: {0}")]
    Task(String),
    #[error("malformed label line {line}: {detail}")]
    LabelParse { line: usize, detail: String },
    #[error(transparent)]
    Video(#[from] VidError),
}

/// Unit directions as `(dy, dx)`, indexed by class.
pub const DIRECTIONS: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
pub const DIRECTION_NAMES: [&str; 4] = ["up", "down", "left", "right"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthTask {
    MovingShapeDirection,
    StaticShapeIdentity { classes: usize },
}

impl SynthTask {
    pub fn n_classes(&self) -> usize {
        match self {
            SynthTask::MovingShapeDirection => DIRECTIONS.len(),
            SynthTask::StaticShapeIdentity { classes } => *classes,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SynthTask::MovingShapeDirection => "moving-shape-direction",
            SynthTask::StaticShapeIdentity { .. } => "static-shape-identity",
        }
    }

    /// `classes` is only used by the static task.
    pub fn parse(name: &str, classes: usize) -> Result<Self, SynthError> {
        match name {
            "moving-shape-direction" => Ok(SynthTask::MovingShapeDirection),
            "static-shape-identity" if classes > 0 => Ok(SynthTask::StaticShapeIdentity { classes }),
            "static-shape-identity" => Err(SynthError::Task("static task needs classes > 0".into())),
            other => Err(SynthError::Task(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub task: SynthTask,
    pub n: usize,
    pub seed: u64,
    pub frames: usize,
    pub size: usize,
    pub channels: usize,
    pub fps: f32,
    /// Every `test_every`-th clip of each class goes to the test split; 0
    /// puts everything in train.
    pub test_every: usize,
}

impl SynthSpec {
    pub fn new(task: SynthTask, n: usize, seed: u64) -> Self {
        SynthSpec {
            task,
            n,
            seed,
            frames: 16,
            size: 32,
            channels: 3,
            fps: 3.75,
            test_every: 4,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let classes = self.task.n_classes();
        if self.n < classes {
            return Err(SynthError::TooFewClips { n: self.n, classes });
        }
        if self.frames == 0 || self.size < 12 || self.channels == 0 || !(self.fps > 0.0) {
            return Err(SynthError::Task(format!(
                "frames {}, size {}, channels {}, fps {}",
                self.frames, self.size, self.channels, self.fps
            )));
        }
        Ok(())
    }

    /// Class of clip `i`: labels cycle so classes stay balanced.
    pub fn label_of(&self, i: usize) -> usize {
        i % self.task.n_classes()
    }

    pub fn split_of(&self, i: usize) -> Split {
        let round = i / self.task.n_classes();
        if self.test_every > 0 && round % self.test_every == self.test_every - 1 {
            Split::Test
        } else {
            Split::Train
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelEntry {
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
}

/// Tab-separated `path  label  split`, paths relative to the file's directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelSet {
    pub n_classes: usize,
    pub entries: Vec<LabelEntry>,
}

impl LabelSet {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &LabelEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_text(&self, base: Option<&Path>) -> String {
        let mut out = format!("# classes\t{}\n", self.n_classes);
        for e in &self.entries {
            let p = base.and_then(|b| e.path.strip_prefix(b).ok()).unwrap_or(&e.path);
            writeln!(out, "{}\t{}\t{}", p.display(), e.label, e.split.as_str()).unwrap();
        }
        out
    }

    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self, SynthError> {
        let mut set = LabelSet::default();
        for (i, line) in text.lines().enumerate() {
            let err = |detail: String| SynthError::LabelParse { line: i + 1, detail };
            if let Some(rest) = line.strip_prefix("# classes\t") {
                set.n_classes = rest.trim().parse().map_err(|e| err(format!("classes: {e}")))?;
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(err(format!("expected 3 fields, got {}", f.len())));
            }
            let label = f[1].parse().map_err(|e| err(format!("label: {e}")))?;
            let split = match f[2] {
                "train" => Split::Train,
                "test" => Split::Test,
                s => return Err(err(format!("unknown split {s:?}"))),
            };
            let raw = PathBuf::from(f[0]);
            let path = match base {
                Some(b) if raw.is_relative() => b.join(raw),
                _ => raw,
            };
            set.entries.push(LabelEntry { path, label, split });
        }
        if set.n_classes == 0 {
            set.n_classes = set.entries.iter().map(|e| e.label + 1).max().unwrap_or(0);
        }
        if let Some(e) = set.entries.iter().find(|e| e.label >= set.n_classes) {
            return Err(SynthError::LabelParse {
                line: 0,
                detail: format!("label {} out of {} classes", e.label, set.n_classes),
            });
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        fs::write(path, self.to_text(path.parent())).map_err(|e| VidError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = fs::read_to_string(path).map_err(|e| VidError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        LabelSet::parse(&text, path.parent())
    }
}

fn colour(rng: &mut Rng, channels: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..channels).map(|_| rng.random_range(lo..hi)).collect()
}

/// Signed offset of `a` from `b` on a ring of length `n`, in `[-n/2, n/2)`.
fn wrapped(a: i64, b: i64, n: i64) -> i64 {
    (a - b + n / 2).rem_euclid(n) - n / 2
}

fn paint(spec: &SynthSpec, bg: &[f64], fg: &[f64], inside: impl Fn(usize, i64, i64) -> bool) -> Vec<u8> {
    let (t, c, s) = (spec.frames, spec.channels, spec.size);
    let mut px = Vec::with_capacity(t * c * s * s);
    for f in 0..t {
        for ch in 0..c {
            for y in 0..s {
                for x in 0..s {
                    let v = if inside(f, y as i64, x as i64) { fg[ch] } else { bg[ch] };
                    px.push((v * 255.0).round() as u8);
                }
            }
        }
    }
    px
}

fn moving_shape(spec: &SynthSpec, label: usize, rng: &mut Rng) -> Vec<u8> {
    let s = spec.size as i64;
    let bg = colour(rng, spec.channels, 0.05, 0.35);
    let fg = colour(rng, spec.channels, 0.65, 1.0);
    let half = rng.random_range(s / 10..=s / 6).max(1);
    let disc = rng.random_bool(0.5);
    let (y0, x0) = (rng.random_range(0..s), rng.random_range(0..s));
    let speed = rng.random_range(1..=2);
    let (dy, dx) = DIRECTIONS[label];
    paint(spec, &bg, &fg, |f, y, x| {
        let cy = y0 + dy * speed * f as i64;
        let cx = x0 + dx * speed * f as i64;
        let (oy, ox) = (wrapped(y, cy, s), wrapped(x, cx, s));
        if disc {
            oy * oy + ox * ox <= half * half
        } else {
            oy.abs() <= half && ox.abs() <= half
        }
    })
}

fn static_polygon(spec: &SynthSpec, label: usize, rng: &mut Rng) -> Vec<u8> {
    let s = spec.size as f64;
    let bg = colour(rng, spec.channels, 0.05, 0.35);
    let fg = colour(rng, spec.channels, 0.65, 1.0);
    let sides = label + 3;
    let r = rng.random_range(0.2 * s..0.35 * s);
    let (cy, cx) = (rng.random_range(r..s - r), rng.random_range(r..s - r));
    let rot = rng.random_range(0.0..std::f64::consts::TAU);
    let verts: Vec<(f64, f64)> = (0..sides)
        .map(|i| {
            let a = rot + std::f64::consts::TAU * i as f64 / sides as f64;
            (cy + r * a.sin(), cx + r * a.cos())
        })
        .collect();
    paint(spec, &bg, &fg, |_, y, x| {
        let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
        (0..sides).all(|i| {
            let (ay, ax) = verts[i];
            let (by, bx) = verts[(i + 1) % sides];
            (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0.0
        })
    })
}

/// Renders one clip of class `label`; a pure function of `(spec, label, rng)`.
pub fn render_clip(spec: &SynthSpec, label: usize, rng: &mut Rng) -> Result<RawClip, SynthError> {
    if label >= spec.task.n_classes() {
        return Err(SynthError::Task(format!("label {label} out of range")));
    }
    let px = match spec.task {
        SynthTask::MovingShapeDirection => moving_shape(spec, label, rng),
        SynthTask::StaticShapeIdentity { .. } => static_polygon(spec, label, rng),
    };
    Ok(RawClip::new(spec.frames, spec.channels, spec.size, spec.size, spec.fps, px)?)
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub manifest: Manifest,
    pub labels: LabelSet,
    pub manifest_path: PathBuf,
    pub labels_path: PathBuf,
}

/// Writes `clips/NNNNNN.hvmclip`, `manifest.tsv` and `labels.tsv` under
/// `out_dir`. Clip `i` is rendered from its own substream of `spec.seed`.
pub fn synthgen(spec: &SynthSpec, out_dir: &Path) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    let clips = out_dir.join("clips");
    fs::create_dir_all(&clips).map_err(|e| VidError::Io { path: clips.clone(), source: e })?;
    let mut manifest = Manifest::default();
    let mut labels = LabelSet {
        n_classes: spec.task.n_classes(),
        entries: Vec::with_capacity(spec.n),
    };
    for i in 0..spec.n {
        let label = spec.label_of(i);
        let mut r = rng::rng_from(spec.seed, &[stream::SYNTH, i as u64]);
        let clip = render_clip(spec, label, &mut r)?;
        let path = clips.join(format!("{i:06}.{RAWCLIP_EXTENSION}"));
        clip.write(&path)?;
        manifest.entries.push(ManifestEntry {
            path: path.clone(),
            source: spec.task.name().to_string(),
            n_frames: spec.frames,
            native_fps: spec.fps as f64,
        });
        labels.entries.push(LabelEntry {
            path,
            label,
            split: spec.split_of(i),
        });
    }
    let manifest_path = out_dir.join("manifest.tsv");
    let labels_path = out_dir.join("labels.tsv");
    manifest.save(&manifest_path)?;
    labels.save(&labels_path)?;
    Ok(SynthOutput {
        manifest,
        labels,
        manifest_path,
        labels_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrapped_offsets() {
        assert_eq!(wrapped(1, 31, 32), 2);
        assert_eq!(wrapped(31, 1, 32), -2);
        assert_eq!(wrapped(16, 0, 32), -16);
    }

    #[test]
    fn too_few_clips_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec::new(SynthTask::MovingShapeDirection, 3, 0);
        assert!(matches!(synthgen(&spec, dir.path()), Err(SynthError::TooFewClips { .. })));
    }

    #[test]
    fn labels_round_trip_through_text() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec::new(SynthTask::StaticShapeIdentity { classes: 3 }, 12, 5);
        let out = synthgen(&spec, dir.path()).unwrap();
        let back = LabelSet::load(&out.labels_path).unwrap();
        assert_eq!(back, out.labels);
        assert_eq!(back.split(Split::Test).count(), 3);
        assert_eq!(Manifest::load(&out.manifest_path).unwrap(), out.manifest);
    }

    #[test]
    fn task_names_parse() {
        assert_eq!(SynthTask::parse("moving-shape-direction", 0).unwrap().n_classes(), 4);
        assert_eq!(SynthTask::parse("static-shape-identity", 5).unwrap().n_classes(), 5);
        assert!(SynthTask::parse("static-shape-identity", 0).is_err());
        assert!(SynthTask::parse("other", 2).is_err());
    }
}
