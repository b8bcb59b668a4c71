//! Packed float frame-sequence files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  "FSEQ"
//! version u32      1
//! height  u32
//! width   u32
//! channels u32
//! fps     u32
//! frames  u32
//! data    frames * height * width * channels * f32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::frame::{Frame, FrameSequence};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FSEQ";
const VERSION: u32 = 1;

pub fn write_frame_sequence(path: &Path, seq: &FrameSequence) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let (h, w, c) = match seq.frames().first() {
        Some(f) => (f.height(), f.width(), f.channels()),
        None => (0, 0, 1),
    };
    for v in [VERSION, h as u32, w as u32, c as u32, seq.fps(), seq.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for frame in seq.frames() {
        for &p in frame.pixels() {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn read_frame_sequence(path: &Path) -> Result<FrameSequence> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 28 || &bytes[0..4] != MAGIC {
        return Err(Error::format(path, "not a FSEQ file"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if u32_at(4) != VERSION {
        return Err(Error::format(path, format!("unsupported version {}", u32_at(4))));
    }
    let (h, w, c, fps, count) = (
        u32_at(8) as usize,
        u32_at(12) as usize,
        u32_at(16) as usize,
        u32_at(20),
        u32_at(24) as usize,
    );
    let per_frame = h * w * c;
    let expected = 28 + count * per_frame * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        let base = 28 + i * per_frame * 4;
        let pixels: Vec<f32> = (0..per_frame)
            .map(|j| {
                let o = base + j * 4;
                f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap())
            })
            .collect();
        frames.push(
            Frame::new(pixels, h, w, c, i).map_err(|e| Error::format(path, e.to_string()))?,
        );
    }
    FrameSequence::new(frames, fps)
}

/// Export one frame as a 16-bit grayscale (or 8-bit RGB) PNG for inspection.
pub fn write_frame_png(path: &Path, frame: &Frame) -> Result<()> {
    let (h, w) = (frame.height() as u32, frame.width() as u32);
    match frame.channels() {
        1 => {
            let data: Vec<u16> = frame
                .pixels()
                .iter()
                .map(|&p| (p * 65535.0).round() as u16)
                .collect();
            let img = image::ImageBuffer::<image::Luma<u16>, _>::from_vec(w, h, data)
                .expect("buffer length matches dimensions");
            img.save(path)
                .map_err(|e| Error::format(path, format!("png write failed: {e}")))
        }
        _ => {
            let data: Vec<u8> = frame
                .pixels()
                .iter()
                .map(|&p| (p * 255.0).round() as u8)
                .collect();
            let img = image::ImageBuffer::<image::Rgb<u8>, _>::from_vec(w, h, data)
                .expect("buffer length matches dimensions");
            img.save(path)
                .map_err(|e| Error::format(path, format!("png write failed: {e}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.fseq");
        let frames: Vec<Frame> = (0..3)
            .map(|i| {
                let pixels = (0..16).map(|j| ((i * 16 + j) as f32) / 64.0).collect();
                Frame::new(pixels, 4, 4, 1, i).unwrap()
            })
            .collect();
        let seq = FrameSequence::new(frames, 25).unwrap();
        write_frame_sequence(&path, &seq).unwrap();
        assert_eq!(read_frame_sequence(&path).unwrap(), seq);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fseq");
        std::fs::write(&path, b"FSEQ junk").unwrap();
        assert!(read_frame_sequence(&path).is_err());
    }
}
