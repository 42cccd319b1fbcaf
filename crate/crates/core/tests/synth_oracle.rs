use hvm_core::synth::{render_clip, synthgen, LabelSet, Split, SynthSpec, SynthTask, DIRECTIONS};
use hvm_core::rng::rng_from;
use hvm_core::vidpipe::RawClip;

/// Frame `t + 1` must equal frame `t` rolled by a whole-pixel step on the
/// torus. Returns the unit direction of the step.
fn motion_of(clip: &RawClip) -> Option<(i64, i64)> {
    let (h, w) = (clip.h as i64, clip.w as i64);
    let rolled = |f: &[u8], dy: i64, dx: i64| -> Vec<u8> {
        let mut out = vec![0u8; f.len()];
        for c in 0..clip.c as i64 {
            for y in 0..h {
                for x in 0..w {
                    let src = (c * h + (y - dy).rem_euclid(h)) * w + (x - dx).rem_euclid(w);
                    out[((c * h + y) * w + x) as usize] = f[src as usize];
                }
            }
        }
        out
    };
    let mut found = None;
    for t in 0..clip.t - 1 {
        let (a, b) = (clip.frame(t), clip.frame(t + 1));
        let step = (-3i64..=3)
            .flat_map(|dy| (-3i64..=3).map(move |dx| (dy, dx)))
            .filter(|&(dy, dx)| (dy == 0) != (dx == 0))
            .find(|&(dy, dx)| rolled(a, dy, dx) == b)?;
        let unit = (step.0.signum(), step.1.signum());
        if found.is_some_and(|u| u != unit) {
            return None;
        }
        found = Some(unit);
    }
    found
}

#[test]
fn moving_shapes_move_in_their_labelled_direction() {
    let spec = SynthSpec::new(SynthTask::MovingShapeDirection, 4, 0);
    for i in 0..40u64 {
        let label = (i % 4) as usize;
        let clip = render_clip(&spec, label, &mut rng_from(i, &[9])).unwrap();
        assert_eq!(motion_of(&clip), Some(DIRECTIONS[label]), "clip {i}, label {label}");
    }
}

#[test]
fn static_shapes_do_not_move() {
    let spec = SynthSpec::new(SynthTask::StaticShapeIdentity { classes: 3 }, 3, 0);
    for i in 0..9u64 {
        let clip = render_clip(&spec, (i % 3) as usize, &mut rng_from(i, &[9])).unwrap();
        assert!((1..clip.t).all(|t| clip.frame(t) == clip.frame(0)));
    }
}

#[test]
fn generated_dataset_is_balanced_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec::new(SynthTask::MovingShapeDirection, 32, 5);
    let out = synthgen(&spec, dir.path()).unwrap();
    assert_eq!(out.manifest.len(), 32);
    let labels = LabelSet::load(&out.labels_path).unwrap();
    assert_eq!(labels, out.labels);
    let count = |s: Split, c: usize| labels.split(s).filter(|e| e.label == c).count();
    for c in 0..4 {
        assert_eq!(count(Split::Train, c), 6);
        assert_eq!(count(Split::Test, c), 2);
    }
    for e in &labels.entries {
        let clip = RawClip::read(&e.path).unwrap();
        assert_eq!(motion_of(&clip), Some(DIRECTIONS[e.label]));
    }
}

#[test]
fn generation_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let spec = SynthSpec::new(SynthTask::MovingShapeDirection, 8, 42);
    let oa = synthgen(&spec, a.path()).unwrap();
    let ob = synthgen(&spec, b.path()).unwrap();
    for (x, y) in oa.manifest.entries.iter().zip(&ob.manifest.entries) {
        assert_eq!(std::fs::read(&x.path).unwrap(), std::fs::read(&y.path).unwrap());
    }
}
