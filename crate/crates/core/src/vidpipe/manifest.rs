//! Segment manifests: one line per segment, tab-separated
//! `path  source  n_frames  fps`. Relative paths resolve against the
//! manifest's own directory. Lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::rawclip::{RawClip, RawHeader, RAWCLIP_EXTENSION};
use super::VidError;

/// Per-frame pixel standard deviation (in `[0, 1]` units) below which a frame
/// counts as flat.
pub const DEFAULT_BLANK_THRESHOLD: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub source: String,
    pub n_frames: usize,
    pub native_fps: f64,
}

impl ManifestEntry {
    pub fn duration_s(&self) -> f64 {
        self.n_frames as f64 / self.native_fps
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestStats {
    pub total_hours: f64,
    pub mean_segment_minutes: f64,
    pub per_source_hours: BTreeMap<String, f64>,
}

/// Result of scanning a directory: readable segments plus the files that
/// could not be read, with the reason.
#[derive(Debug, Default)]
pub struct ManifestScan {
    pub manifest: Manifest,
    pub rejected: Vec<(PathBuf, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SegmentStatus {
    Ok,
    Blank,
    Corrupted(String),
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_seconds(&self) -> f64 {
        self.entries.iter().map(ManifestEntry::duration_s).sum()
    }

    /// Serialises with paths made relative to `base` where possible.
    pub fn to_text(&self, base: Option<&Path>) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let p = base
                .and_then(|b| e.path.strip_prefix(b).ok())
                .unwrap_or(&e.path);
            writeln!(out, "{}\t{}\t{}\t{}", p.display(), e.source, e.n_frames, e.native_fps).unwrap();
        }
        out
    }

    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self, VidError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |detail: String| VidError::ManifestParse { line: i + 1, detail };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(err(format!("expected 4 tab-separated fields, got {}", fields.len())));
            }
            let n_frames = fields[2]
                .parse::<usize>()
                .map_err(|e| err(format!("n_frames: {e}")))?;
            let native_fps = fields[3]
                .parse::<f64>()
                .map_err(|e| err(format!("fps: {e}")))?;
            if n_frames == 0 || !(native_fps > 0.0 && native_fps.is_finite()) {
                return Err(err("n_frames and fps must be positive".into()));
            }
            let raw = PathBuf::from(fields[0]);
            let path = match base {
                Some(b) if raw.is_relative() => b.join(raw),
                _ => raw,
            };
            entries.push(ManifestEntry {
                path,
                source: fields[1].to_string(),
                n_frames,
                native_fps,
            });
        }
        Ok(Manifest { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), VidError> {
        let base = path.parent();
        fs::write(path, self.to_text(base)).map_err(|e| VidError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, VidError> {
        let text = fs::read_to_string(path).map_err(|e| VidError::io(path, e))?;
        Manifest::parse(&text, path.parent())
    }
}

fn collect_clip_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), VidError> {
    let mut items: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| VidError::io(dir, e))?
        .map(|d| d.map(|d| d.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| VidError::io(dir, e))?;
    items.sort();
    for p in items {
        if p.is_dir() {
            collect_clip_files(&p, out)?;
        } else if p.extension().is_some_and(|e| e == RAWCLIP_EXTENSION) {
            out.push(p);
        }
    }
    Ok(())
}

/// Source tag: the first directory under `root`, or `"default"` for files
/// sitting directly in `root`.
fn source_tag(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    let mut comps = rel.components();
    match (comps.next(), comps.next()) {
        (Some(first), Some(_)) => first.as_os_str().to_string_lossy().into_owned(),
        _ => "default".to_string(),
    }
}

/// Scans `root` recursively for `*.hvmclip` segments, in sorted path order.
pub fn build_manifest(root: &Path) -> Result<ManifestScan, VidError> {
    let mut files = Vec::new();
    collect_clip_files(root, &mut files)?;
    let mut scan = ManifestScan::default();
    for path in files {
        match RawHeader::read(&path) {
            Ok(hdr) => scan.manifest.entries.push(ManifestEntry {
                source: source_tag(root, &path),
                path,
                n_frames: hdr.t,
                native_fps: hdr.fps as f64,
            }),
            Err(e) => scan.rejected.push((path, e.to_string())),
        }
    }
    if scan.manifest.is_empty() {
        return Err(VidError::EmptyRoot(root.to_path_buf()));
    }
    Ok(scan)
}

pub fn manifest_stats(manifest: &Manifest) -> Result<ManifestStats, VidError> {
    if manifest.is_empty() {
        return Err(VidError::EmptyManifest);
    }
    let total_s = manifest.total_seconds();
    let mut per_source_hours = BTreeMap::new();
    for e in &manifest.entries {
        *per_source_hours.entry(e.source.clone()).or_insert(0.0) += e.duration_s() / 3600.0;
    }
    Ok(ManifestStats {
        total_hours: total_s / 3600.0,
        mean_segment_minutes: total_s / manifest.len() as f64 / 60.0,
        per_source_hours,
    })
}

/// True iff every frame's pixel standard deviation is below `threshold`.
pub fn detect_blank(segment: &RawClip, threshold: f64) -> bool {
    (0..segment.t).all(|t| {
        let frame = segment.frame(t);
        let n = frame.len() as f64;
        let mean = frame.iter().map(|&p| p as f64 / 255.0).sum::<f64>() / n;
        let var = frame
            .iter()
            .map(|&p| (p as f64 / 255.0 - mean).powi(2))
            .sum::<f64>()
            / n;
        var.sqrt() < threshold
    })
}

pub fn classify_segment(path: &Path, threshold: f64) -> SegmentStatus {
    match RawClip::read(path) {
        Ok(seg) if detect_blank(&seg, threshold) => SegmentStatus::Blank,
        Ok(_) => SegmentStatus::Ok,
        Err(e) => SegmentStatus::Corrupted(e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(secs: f64) -> ManifestEntry {
        ManifestEntry {
            path: PathBuf::from("x.hvmclip"),
            source: "s".into(),
            n_frames: (secs * 10.0) as usize,
            native_fps: 10.0,
        }
    }

    #[test]
    fn stats_on_two_segments() {
        let m = Manifest {
            entries: vec![entry(60.0), entry(120.0)],
        };
        let s = manifest_stats(&m).unwrap();
        assert!((s.mean_segment_minutes - 1.5).abs() < 1e-12);
        assert!((s.total_hours - 0.05).abs() < 1e-12);
        assert!(manifest_stats(&Manifest::default()).is_err());
    }

    #[test]
    fn single_segment_mean_is_its_duration() {
        let m = Manifest {
            entries: vec![entry(90.0)],
        };
        assert!((manifest_stats(&m).unwrap().mean_segment_minutes - 1.5).abs() < 1e-12);
    }

    #[test]
    fn text_round_trip() {
        let m = Manifest {
            entries: vec![
                ManifestEntry {
                    path: PathBuf::from("/data/a/b.hvmclip"),
                    source: "ego".into(),
                    n_frames: 5220,
                    native_fps: 29.97,
                },
                entry(3.0),
            ],
        };
        let text = m.to_text(Some(Path::new("/data")));
        assert!(text.starts_with("a/b.hvmclip\tego\t5220\t29.97\n"));
        let back = Manifest::parse(&text, Some(Path::new("/data"))).unwrap();
        assert_eq!(back.entries[0], m.entries[0]);
        assert_eq!(back.entries[1].path, PathBuf::from("/data/x.hvmclip"));
        assert!(Manifest::parse("a\tb\tc", None).is_err());
        assert!(Manifest::parse("a\tb\t0\t30", None).is_err());
    }

    #[test]
    fn blank_rule_requires_all_frames_flat() {
        let flat = RawClip::new(3, 1, 2, 2, 30.0, vec![0; 12]).unwrap();
        assert!(detect_blank(&flat, DEFAULT_BLANK_THRESHOLD));
        let mut px = vec![0u8; 12];
        px[4] = 200;
        let one_varied = RawClip::new(3, 1, 2, 2, 30.0, px).unwrap();
        assert!(!detect_blank(&one_varied, DEFAULT_BLANK_THRESHOLD));
        let noise: Vec<u8> = (0..12).map(|i| (i * 97 % 251) as u8).collect();
        assert!(!detect_blank(&RawClip::new(3, 1, 2, 2, 30.0, noise).unwrap(), DEFAULT_BLANK_THRESHOLD));
    }
}
