//! Frame-aligned supervision windows for adjacent-frame training.
//!
//! For every paired utterance: align source and target mel features with DTW,
//! edit each source frame with the expression stage, and emit one sample per
//! valid index `i` whose input is the edited frame at `i` and whose
//! supervision is the target frames aligned to `i+1 ..= i+n`.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::correspondence::path_to_frames;
use super::dtw::{dtw_align, CostMetric};
use crate::error::{Error, Result};
use crate::fem::{AnnotatedFrame, FemStage};
use crate::media::{
    compute_mel, mel_window, read_frame_sequence, write_frame_sequence, Frame, FrameSequence,
    MelConfig, MelSpectrogram,
};
use crate::synth::{Corpus, PairedUtterance, Pose, Split, Utterance};

/// One training sample: edited reference frame, `n` supervision frames, the
/// source-timeline mel window and pose window for frames `i+1 ..= i+n`.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub input: Frame,
    pub targets: Vec<Frame>,
    pub mel_window: MelSpectrogram,
    pub poses: Vec<Pose>,
    pub n: usize,
    pub frame_index: usize,
}

/// All samples from a set of paired utterances.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub samples: Vec<PairedSample>,
    pub n: usize,
    /// Indices skipped because no full window fits.
    pub skipped: usize,
}

/// Alignment and windowing settings for dataset construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n: usize,
    pub model_mel: MelConfig,
    pub align_mel: MelConfig,
    pub cost: CostMetric,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n: 5,
            model_mel: MelConfig::default(),
            align_mel: MelConfig::alignment(),
            cost: CostMetric::Euclidean,
        }
    }
}

/// Align one pair and produce its frame correspondence via DTW.
pub fn align_pair(
    source: &Utterance,
    target: &Utterance,
    cfg: &DatasetConfig,
    fps: u32,
) -> Result<Vec<usize>> {
    let mel_a = compute_mel(&source.audio, &cfg.align_mel)?;
    let mel_b = compute_mel(&target.audio, &cfg.align_mel)?;
    let path = dtw_align(&mel_a, &mel_b, cfg.cost)?;
    let spf = (source.audio.sample_rate() / fps) as usize;
    if spf % cfg.align_mel.hop != 0 {
        return Err(Error::Config(format!(
            "alignment hop {} must divide the {spf} samples per frame",
            cfg.align_mel.hop
        )));
    }
    let cols_per_frame = spf / cfg.align_mel.hop;
    let fc = path_to_frames(
        &path,
        cols_per_frame,
        source.video.len(),
        target.video.len(),
    )?;
    Ok(fc.mapping)
}

/// Build samples for one pair from an already-computed correspondence.
fn windows_for_pair(
    source: &Utterance,
    target: &Utterance,
    mapping: &[usize],
    fem: &dyn FemStage,
    cfg: &DatasetConfig,
) -> Result<(Vec<PairedSample>, usize)> {
    let fps = source.video.fps();
    let n = cfg.n;
    let source_mel = compute_mel(&source.audio, &cfg.model_mel)?;
    let n_frames = source.video.len();
    let mut samples = Vec::new();
    let mut skipped = 0usize;

    for i in 0..n_frames {
        if i + n >= n_frames {
            skipped += 1;
            continue;
        }
        let mel = match mel_window(&source_mel, i, n, fps) {
            Ok(m) => m,
            Err(Error::OutOfRange(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let src_frame = AnnotatedFrame::new(
            source.video.frames()[i].clone(),
            source.params_track[i],
        );
        let ref_frame = AnnotatedFrame::new(
            target.video.frames()[mapping[i]].clone(),
            target.params_track[mapping[i]],
        );
        let edited = fem.edit(&src_frame, &ref_frame)?;
        let targets: Vec<Frame> = (1..=n)
            .map(|k| target.video.frames()[mapping[i + k]].clone())
            .collect();
        let poses: Vec<Pose> = (1..=n).map(|k| source.params_track[i + k].pose).collect();
        samples.push(PairedSample {
            input: edited.frame,
            targets,
            mel_window: mel,
            poses,
            n,
            frame_index: i,
        });
    }
    Ok((samples, skipped))
}

/// Build a dataset from in-memory pairs (alignment runs on the audio, not on
/// the known warp).
pub fn build_pairs_from(
    pairs: &[PairedUtterance],
    fem: &dyn FemStage,
    cfg: &DatasetConfig,
) -> Result<PairedDataset> {
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for pair in pairs {
        let mapping = align_pair(&pair.source, &pair.target, cfg, pair.source.video.fps())?;
        let (mut s, sk) = windows_for_pair(&pair.source, &pair.target, &mapping, fem, cfg)?;
        samples.append(&mut s);
        skipped += sk;
    }
    Ok(PairedDataset {
        samples,
        n: cfg.n,
        skipped,
    })
}

/// Build a dataset from an on-disk corpus, optionally restricted to a split.
pub fn build_paired_dataset(
    corpus: &Corpus,
    fem: &dyn FemStage,
    cfg: &DatasetConfig,
    split: Option<Split>,
) -> Result<PairedDataset> {
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    let mut pair_count = 0usize;
    for (src_rec, pair_rec) in corpus.pairs() {
        if let Some(want) = split {
            if pair_rec.split != want {
                continue;
            }
        }
        pair_count += 1;
        let source = corpus.load_utterance(src_rec)?;
        let target = corpus.load_utterance(pair_rec)?;
        let mapping = align_pair(&source, &target, cfg, source.video.fps())?;
        let (mut s, sk) = windows_for_pair(&source, &target, &mapping, fem, cfg)?;
        samples.append(&mut s);
        skipped += sk;
    }
    if pair_count == 0 {
        return Err(Error::Input("corpus contains no paired utterances".into()));
    }
    log::info!(
        "built {} samples from {pair_count} pairs ({skipped} indices without a full window)",
        samples.len()
    );
    Ok(PairedDataset {
        samples,
        n: cfg.n,
        skipped,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    n: usize,
    skipped: usize,
    sample_count: usize,
    mel_rows: usize,
    mel_cols: usize,
    files: Vec<String>,
}

const SAMPLES_MAGIC: &[u8; 4] = b"PSMP";

/// Persist a dataset as a directory: per-pair sample bundles plus a manifest.
pub fn write_dataset(dir: &Path, dataset: &PairedDataset, samples_per_file: usize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let chunk = samples_per_file.max(1);
    let mut files = Vec::new();
    let (mut mel_rows, mut mel_cols) = (0usize, 0usize);
    for (k, group) in dataset.samples.chunks(chunk).enumerate() {
        let name = format!("samples{k:04}.bin");
        write_sample_file(&dir.join(&name), group)?;
        files.push(name);
        if let Some(s) = group.first() {
            mel_rows = s.mel_window.n_mels();
            mel_cols = s.mel_window.n_cols();
        }
    }
    let manifest = DatasetManifest {
        n: dataset.n,
        skipped: dataset.skipped,
        sample_count: dataset.samples.len(),
        mel_rows,
        mel_cols,
        files,
    };
    let path = dir.join("dataset.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| Error::io(&path, e))
}

/// Load a dataset previously written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<PairedDataset> {
    let path = dir.join("dataset.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    let mut samples = Vec::with_capacity(manifest.sample_count);
    for name in &manifest.files {
        samples.extend(read_sample_file(&dir.join(name))?);
    }
    if samples.len() != manifest.sample_count {
        return Err(Error::format(
            &path,
            format!(
                "manifest promises {} samples, files contain {}",
                manifest.sample_count,
                samples.len()
            ),
        ));
    }
    Ok(PairedDataset {
        samples,
        n: manifest.n,
        skipped: manifest.skipped,
    })
}

fn write_sample_file(path: &Path, samples: &[PairedSample]) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(SAMPLES_MAGIC);
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    for s in samples {
        out.extend_from_slice(&(s.frame_index as u32).to_le_bytes());
        out.extend_from_slice(&(s.n as u32).to_le_bytes());
        write_frame(&mut out, &s.input);
        for t in &s.targets {
            write_frame(&mut out, t);
        }
        out.extend_from_slice(&(s.mel_window.n_mels() as u32).to_le_bytes());
        out.extend_from_slice(&(s.mel_window.n_cols() as u32).to_le_bytes());
        for v in s.mel_window.data().iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in &s.poses {
            for v in p.as_vec() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

fn write_frame(out: &mut Vec<u8>, frame: &Frame) {
    out.extend_from_slice(&(frame.height() as u32).to_le_bytes());
    out.extend_from_slice(&(frame.width() as u32).to_le_bytes());
    out.extend_from_slice(&(frame.channels() as u32).to_le_bytes());
    for &p in frame.pixels() {
        out.extend_from_slice(&p.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(Error::format(self.path, "unexpected end of sample data"));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn frame(&mut self, index: usize) -> Result<Frame> {
        let h = self.u32()? as usize;
        let w = self.u32()? as usize;
        let c = self.u32()? as usize;
        let mut pixels = Vec::with_capacity(h * w * c);
        for _ in 0..h * w * c {
            pixels.push(self.f32()?);
        }
        Frame::new(pixels, h, w, c, index).map_err(|e| Error::format(self.path, e.to_string()))
    }
}

fn read_sample_file(path: &Path) -> Result<Vec<PairedSample>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[0..4] != SAMPLES_MAGIC {
        return Err(Error::format(path, "not a sample bundle"));
    }
    let mut r = Reader {
        bytes: &bytes,
        pos: 4,
        path,
    };
    let _version = r.u32()?;
    let count = r.u32()? as usize;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let frame_index = r.u32()? as usize;
        let n = r.u32()? as usize;
        let input = r.frame(frame_index)?;
        let mut targets = Vec::with_capacity(n);
        for k in 0..n {
            targets.push(r.frame(frame_index + 1 + k)?);
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let mut data = ndarray::Array2::zeros((rows, cols));
        // Stored in the array's iteration order.
        for v in data.iter_mut() {
            *v = r.f64()?;
        }
        let mel_window = MelSpectrogram::from_parts(data, MelConfig::default());
        let mut poses = Vec::with_capacity(n);
        for _ in 0..n {
            poses.push(Pose::new(r.f32()?, r.f32()?, r.f32()?));
        }
        samples.push(PairedSample {
            input,
            targets,
            mel_window,
            poses,
            n,
            frame_index,
        });
    }
    Ok(samples)
}

/// Persist generated output videos beside a small manifest; used by batch
/// inference and consumed by evaluation.
pub fn write_sequence_with_manifest(dir: &Path, name: &str, seq: &FrameSequence) -> Result<String> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rel = format!("{name}.fseq");
    write_frame_sequence(&dir.join(&rel), seq)?;
    Ok(rel)
}

/// Read a sequence written by [`write_sequence_with_manifest`].
pub fn read_sequence(dir: &Path, rel: &str) -> Result<FrameSequence> {
    read_frame_sequence(&PathBuf::from(dir).join(rel))
}
