//! `HVMCLIP1` files: raw `u8` frames behind a fixed 28-byte header.
//!
//! ```text
//! "HVMCLIP1" | T u32 | C u32 | H u32 | W u32 | fps f32 | T·C·H·W bytes
//! ```
//!
//! All integers are little-endian; pixels are frame-major (`t, c, h, w`).

use std::fs;
use std::io::Read;
use std::path::Path;

use super::clip::Clip;
use super::VidError;
use crate::numcore::Tensor;

pub const RAWCLIP_MAGIC: &[u8; 8] = b"HVMCLIP1";
pub const RAWCLIP_EXTENSION: &str = "hvmclip";
const HEADER_LEN: usize = 28;

#[derive(Clone, Debug, PartialEq)]
pub struct RawClip {
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub fps: f32,
    pub pixels: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct RawHeader {
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub fps: f32,
}

impl RawHeader {
    fn parse(b: &[u8]) -> Result<Self, VidError> {
        if b.len() < HEADER_LEN || &b[..8] != RAWCLIP_MAGIC {
            return Err(VidError::Corrupted("missing HVMCLIP1 header".into()));
        }
        let u = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap()) as usize;
        let hdr = RawHeader {
            t: u(8),
            c: u(12),
            h: u(16),
            w: u(20),
            fps: f32::from_le_bytes(b[24..28].try_into().unwrap()),
        };
        if hdr.t == 0 || hdr.c == 0 || hdr.h == 0 || hdr.w == 0 {
            return Err(VidError::Corrupted("zero extent in header".into()));
        }
        if !(hdr.fps.is_finite() && hdr.fps > 0.0) {
            return Err(VidError::Corrupted(format!("invalid frame rate {}", hdr.fps)));
        }
        Ok(hdr)
    }

    pub fn payload_len(&self) -> usize {
        self.t * self.c * self.h * self.w
    }

    /// Reads and validates only the header and the file length.
    pub fn read(path: &Path) -> Result<Self, VidError> {
        let mut f = fs::File::open(path).map_err(|e| VidError::io(path, e))?;
        let mut buf = [0u8; HEADER_LEN];
        f.read_exact(&mut buf)
            .map_err(|_| VidError::Corrupted(format!("{}: truncated header", path.display())))?;
        let hdr = RawHeader::parse(&buf)
            .map_err(|e| VidError::Corrupted(format!("{}: {e}", path.display())))?;
        let len = f.metadata().map_err(|e| VidError::io(path, e))?.len() as usize;
        if len != HEADER_LEN + hdr.payload_len() {
            return Err(VidError::Corrupted(format!(
                "{}: payload is {} bytes, header implies {}",
                path.display(),
                len.saturating_sub(HEADER_LEN),
                hdr.payload_len()
            )));
        }
        Ok(hdr)
    }
}

impl RawClip {
    pub fn new(t: usize, c: usize, h: usize, w: usize, fps: f32, pixels: Vec<u8>) -> Result<Self, VidError> {
        if t * c * h * w != pixels.len() || t * c * h * w == 0 {
            return Err(VidError::InvalidParams(format!(
                "{t}x{c}x{h}x{w} clip needs {} bytes, got {}",
                t * c * h * w,
                pixels.len()
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(VidError::InvalidParams(format!("frame rate {fps} must be positive")));
        }
        Ok(RawClip { t, c, h, w, fps, pixels })
    }

    /// Quantises `[0, 1]` pixels to `u8` (round to nearest, clamped).
    pub fn from_clip(clip: &Clip) -> Self {
        let (t, c, h, w) = clip.dims();
        let pixels = clip
            .frames
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        RawClip {
            t,
            c,
            h,
            w,
            fps: clip.fps as f32,
            pixels,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.frame_len();
        &self.pixels[t * n..(t + 1) * n]
    }

    /// Every frame as a `[0, 1]` clip.
    pub fn to_clip(&self, source: impl Into<String>) -> Clip {
        let data = self.pixels.iter().map(|&p| p as f64 / 255.0).collect();
        let frames = Tensor::new([self.t, self.c, self.h, self.w], data).expect("validated extents");
        Clip::new(frames, source, 0, self.fps as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.pixels.len());
        out.extend_from_slice(RAWCLIP_MAGIC);
        for v in [self.t, self.c, self.h, self.w] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.fps.to_le_bytes());
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, VidError> {
        let hdr = RawHeader::parse(bytes)?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != hdr.payload_len() {
            return Err(VidError::Corrupted(format!(
                "payload is {} bytes, header implies {}",
                payload.len(),
                hdr.payload_len()
            )));
        }
        Ok(RawClip {
            t: hdr.t,
            c: hdr.c,
            h: hdr.h,
            w: hdr.w,
            fps: hdr.fps,
            pixels: payload.to_vec(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), VidError> {
        fs::write(path, self.to_bytes()).map_err(|e| VidError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, VidError> {
        let bytes = fs::read(path).map_err(|e| VidError::io(path, e))?;
        RawClip::from_bytes(&bytes).map_err(|e| match e {
            VidError::Corrupted(m) => VidError::Corrupted(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let clip = RawClip::new(2, 1, 1, 2, 3.75, vec![0, 1, 2, 255]).unwrap();
        let b = clip.to_bytes();
        assert_eq!(&b[..8], b"HVMCLIP1");
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[20..24], &2u32.to_le_bytes());
        assert_eq!(&b[24..28], &3.75f32.to_le_bytes());
        assert_eq!(&b[28..], &[0, 1, 2, 255]);
        assert_eq!(RawClip::from_bytes(&b).unwrap(), clip);
    }

    #[test]
    fn corrupted_inputs_are_detected() {
        let clip = RawClip::new(1, 1, 2, 2, 30.0, vec![9; 4]).unwrap();
        let b = clip.to_bytes();
        assert!(matches!(RawClip::from_bytes(&b[..30]), Err(VidError::Corrupted(_))));
        assert!(matches!(RawClip::from_bytes(b"HVMCLIP0"), Err(VidError::Corrupted(_))));
        let mut zero_t = b.clone();
        zero_t[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(RawClip::from_bytes(&zero_t).is_err());
    }

    #[test]
    fn float_round_trip_within_quantisation() {
        let frames = Tensor::from_fn([2, 3, 4, 4], |i| ((i * 37) % 101) as f64 / 100.0);
        let clip = Clip::new(frames, "x", 0, 7.5);
        let back = RawClip::from_clip(&clip).to_clip("x");
        assert!(back.frames.max_abs_diff(&clip.frames) <= 0.5 / 255.0 + 1e-12);
    }
}
