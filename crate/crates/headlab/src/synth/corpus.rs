//! On-disk corpora: per identity, neutral source utterances plus emotional
//! paired re-timings, listed in a line-delimited JSON manifest.

use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::face::FaceParams;
use super::utterance::{
    make_paired, synth_utterance_with_identity, Emotion, Utterance, UtteranceConfig, Warp,
};
use crate::error::{Error, Result};
use crate::media::{read_frame_sequence, read_wav, write_frame_sequence, write_wav};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Source,
    Paired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One utterance in the corpus manifest. All paths are relative to the
/// manifest's directory so a corpus can be moved or compared byte-for-byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub kind: RecordKind,
    pub id: usize,
    pub utt: usize,
    pub emotion: Emotion,
    pub seed: u64,
    pub split: Split,
    pub audio: String,
    pub video: String,
    pub params: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub correspondence: Option<String>,
}

/// Sidecar metadata stored beside each utterance's audio/video.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtteranceMeta {
    pub emotion: Emotion,
    pub fps: u32,
    pub resolution: usize,
    pub sample_rate: u32,
    pub params_track: Vec<FaceParams>,
}

/// Corpus generation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub num_ids: usize,
    pub utterances_per_id: usize,
    pub emotions: Vec<Emotion>,
    pub seed: u64,
    pub utterance: UtteranceConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            num_ids: 2,
            utterances_per_id: 3,
            emotions: Emotion::ALL.to_vec(),
            seed: 0,
            utterance: UtteranceConfig::default(),
        }
    }
}

/// A manifest plus the directory it lives in.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub records: Vec<CorpusRecord>,
}

impl Corpus {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let file = std::fs::File::open(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let mut records = Vec::new();
        for (ln, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(manifest_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CorpusRecord = serde_json::from_str(&line)
                .map_err(|e| Error::format(manifest_path, format!("line {}: {e}", ln + 1)))?;
            records.push(rec);
        }
        Ok(Self { root, records })
    }

    pub fn load_utterance(&self, rec: &CorpusRecord) -> Result<Utterance> {
        let audio = read_wav(&self.root.join(&rec.audio))?;
        let video = read_frame_sequence(&self.root.join(&rec.video))?;
        let params_path = self.root.join(&rec.params);
        let mut text = String::new();
        std::fs::File::open(&params_path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|e| Error::io(&params_path, e))?;
        let meta: UtteranceMeta = serde_json::from_str(&text)
            .map_err(|e| Error::format(&params_path, e.to_string()))?;
        if meta.params_track.len() != video.len() {
            return Err(Error::format(
                &params_path,
                format!(
                    "params track has {} entries for {} frames",
                    meta.params_track.len(),
                    video.len()
                ),
            ));
        }
        Ok(Utterance {
            audio,
            video,
            params_track: meta.params_track,
            emotion: meta.emotion,
        })
    }

    pub fn load_correspondence(&self, rec: &CorpusRecord) -> Result<Vec<usize>> {
        let rel = rec.correspondence.as_ref().ok_or_else(|| {
            Error::Input(format!(
                "record id={} utt={} emotion={} has no correspondence file",
                rec.id, rec.utt, rec.emotion
            ))
        })?;
        read_correspondence(&self.root.join(rel))
    }

    /// Paired records together with the source record they re-time.
    pub fn pairs(&self) -> Vec<(&CorpusRecord, &CorpusRecord)> {
        self.records
            .iter()
            .filter(|r| r.kind == RecordKind::Paired)
            .filter_map(|pair| {
                self.records
                    .iter()
                    .find(|s| {
                        s.kind == RecordKind::Source && s.id == pair.id && s.utt == pair.utt
                    })
                    .map(|src| (src, pair))
            })
            .collect()
    }
}

const CORR_MAGIC: &[u8; 4] = b"CORR";

pub fn write_correspondence(path: &Path, mapping: &[usize]) -> Result<()> {
    let mut out = Vec::with_capacity(12 + mapping.len() * 4);
    out.extend_from_slice(CORR_MAGIC);
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(mapping.len() as u32).to_le_bytes());
    for &m in mapping {
        out.extend_from_slice(&(m as i32).to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn read_correspondence(path: &Path) -> Result<Vec<usize>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[0..4] != CORR_MAGIC {
        return Err(Error::format(path, "not a correspondence file"));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() != 12 + count * 4 {
        return Err(Error::format(path, "truncated correspondence data"));
    }
    Ok((0..count)
        .map(|i| {
            let o = 12 + i * 4;
            i32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
        })
        .collect())
}

/// Random monotone warp over `duration`: quarter-point knots with jittered
/// positions and per-segment slopes in `[0.7, 1.4]`.
fn random_warp(rng: &mut ChaCha8Rng, duration: f64) -> Warp {
    let mut source_times = vec![0.0];
    for k in 1..4 {
        let base = duration * k as f64 / 4.0;
        source_times.push(base + rng.random_range(-0.04f64..0.04) * duration);
    }
    source_times.push(duration);
    let mut knots = Vec::with_capacity(5);
    let mut t_target = 0.0;
    knots.push((0.0, 0.0));
    for k in 1..5 {
        let slope = rng.random_range(0.7f64..1.4);
        t_target += slope * (source_times[k] - source_times[k - 1]);
        knots.push((source_times[k], t_target));
    }
    Warp::new(knots).expect("constructed warp is monotone")
}

fn write_utterance_files(
    root: &Path,
    rel_base: &str,
    utt: &Utterance,
    cfg: &UtteranceConfig,
) -> Result<(String, String, String)> {
    let audio_rel = format!("{rel_base}.wav");
    let video_rel = format!("{rel_base}.fseq");
    let params_rel = format!("{rel_base}.params.json");
    write_wav(&root.join(&audio_rel), &utt.audio)?;
    write_frame_sequence(&root.join(&video_rel), &utt.video)?;
    let meta = UtteranceMeta {
        emotion: utt.emotion,
        fps: cfg.fps,
        resolution: cfg.resolution,
        sample_rate: cfg.sample_rate,
        params_track: utt.params_track.clone(),
    };
    let json = serde_json::to_string(&meta).expect("meta serializes");
    let params_path = root.join(&params_rel);
    std::fs::write(&params_path, json).map_err(|e| Error::io(&params_path, e))?;
    Ok((audio_rel, video_rel, params_rel))
}

/// Generate a corpus under `out_dir` and return its manifest. Deterministic:
/// the same config produces byte-identical files and manifest.
pub fn make_corpus(cfg: &CorpusConfig, out_dir: &Path) -> Result<Corpus> {
    cfg.utterance.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::new();

    for id in 0..cfg.num_ids {
        let id_dir = out_dir.join(format!("id{id:03}"));
        std::fs::create_dir_all(&id_dir).map_err(|e| Error::io(&id_dir, e))?;
        let mut identity = [0.0f32; 4];
        for v in &mut identity {
            *v = rng.random_range(0.0f32..1.0);
        }
        for utt in 0..cfg.utterances_per_id {
            let split = if cfg.utterances_per_id >= 2 && utt == cfg.utterances_per_id - 1 {
                Split::Test
            } else {
                Split::Train
            };
            let source_seed: u64 = rng.random();
            let source = synth_utterance_with_identity(
                &cfg.utterance,
                Emotion::Neutral,
                source_seed,
                Some(identity),
            )?;
            let rel_base = format!("id{id:03}/utt{utt:03}_source");
            let (audio, video, params) =
                write_utterance_files(out_dir, &rel_base, &source, &cfg.utterance)?;
            records.push(CorpusRecord {
                kind: RecordKind::Source,
                id,
                utt,
                emotion: Emotion::Neutral,
                seed: source_seed,
                split,
                audio,
                video,
                params,
                correspondence: None,
            });

            for &emotion in &cfg.emotions {
                let pair_seed: u64 = rng.random();
                let warp = random_warp(&mut rng, cfg.utterance.duration_s);
                let pair = make_paired(&source, emotion, &warp, pair_seed, &cfg.utterance)?;
                let rel_base = format!("id{id:03}/utt{utt:03}_{emotion}");
                let (audio, video, params) =
                    write_utterance_files(out_dir, &rel_base, &pair.target, &cfg.utterance)?;
                let corr_rel = format!("{rel_base}.corr.bin");
                write_correspondence(&out_dir.join(&corr_rel), &pair.true_correspondence)?;
                records.push(CorpusRecord {
                    kind: RecordKind::Paired,
                    id,
                    utt,
                    emotion,
                    seed: pair_seed,
                    split,
                    audio,
                    video,
                    params,
                    correspondence: Some(corr_rel),
                });
            }
        }
    }

    let manifest_path = out_dir.join(MANIFEST_NAME);
    let mut out = String::new();
    for rec in &records {
        out.push_str(&serde_json::to_string(rec).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(&manifest_path, out).map_err(|e| Error::io(&manifest_path, e))?;

    Ok(Corpus {
        root: out_dir.to_path_buf(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> CorpusConfig {
        CorpusConfig {
            num_ids: 2,
            utterances_per_id: 2,
            emotions: vec![Emotion::Happy, Emotion::Angry],
            seed: 42,
            utterance: UtteranceConfig {
                duration_s: 0.6,
                resolution: 16,
                ..Default::default()
            },
        }
    }

    #[test]
    fn record_counts_match_requested_shape() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = make_corpus(&small_cfg(), dir.path()).unwrap();
        let sources = corpus
            .records
            .iter()
            .filter(|r| r.kind == RecordKind::Source)
            .count();
        let pairs = corpus
            .records
            .iter()
            .filter(|r| r.kind == RecordKind::Paired)
            .count();
        assert_eq!(sources, 4);
        assert_eq!(pairs, 8);
    }

    #[test]
    fn zero_emotions_gives_sources_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg();
        cfg.emotions.clear();
        let corpus = make_corpus(&cfg, dir.path()).unwrap();
        assert!(corpus.records.iter().all(|r| r.kind == RecordKind::Source));
        assert_eq!(corpus.records.len(), 4);
    }

    #[test]
    fn same_seed_reproduces_manifest_bytes() {
        let da = tempfile::tempdir().unwrap();
        let db = tempfile::tempdir().unwrap();
        make_corpus(&small_cfg(), da.path()).unwrap();
        make_corpus(&small_cfg(), db.path()).unwrap();
        let a = std::fs::read(da.path().join(MANIFEST_NAME)).unwrap();
        let b = std::fs::read(db.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loaded_utterance_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = make_corpus(&small_cfg(), dir.path()).unwrap();
        let loaded = Corpus::load(&dir.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(loaded.records.len(), corpus.records.len());
        let rec = &loaded.records[1];
        assert_eq!(rec.kind, RecordKind::Paired);
        let utt = loaded.load_utterance(rec).unwrap();
        assert_eq!(utt.params_track.len(), utt.video.len());
        let corr = loaded.load_correspondence(rec).unwrap();
        assert!(!corr.is_empty());
    }

    #[test]
    fn pairs_resolve_their_sources() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = make_corpus(&small_cfg(), dir.path()).unwrap();
        let pairs = corpus.pairs();
        assert_eq!(pairs.len(), 8);
        for (src, pair) in pairs {
            assert_eq!(src.id, pair.id);
            assert_eq!(src.utt, pair.utt);
        }
    }
}
