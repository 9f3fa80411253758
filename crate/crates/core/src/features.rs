//! Feature-sequence data model, the synthetic speaker-by-language corpus
//! generator, short-condition cropping and the on-disk archive format.
//!
//! Archive layout: a directory holding `manifest.tsv`
//! (`utt_id<TAB>speaker<TAB>language<TAB>split`) and `features.txt`
//! (per utterance a header `utt_id speaker language T D` followed by
//! T rows of D decimal values). Values render in shortest round-trip
//! decimal form, so save/load is lossless.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CoreError, Result};
use crate::linalg::{norm, scale, Mat};

/// One utterance: a T x D frame matrix plus its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub utt_id: String,
    pub speaker: String,
    pub language: String,
    pub frames: Mat,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Enroll,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Enroll => "enroll",
            Split::Test => "test",
        }
    }

    pub fn from_str(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "enroll" => Ok(Split::Enroll),
            "test" => Ok(Split::Test),
            other => Err(CoreError::validation(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub speaker: String,
    pub language: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.utt_id) {
                return Err(CoreError::validation(format!(
                    "duplicate utt_id `{}` in manifest",
                    e.utt_id
                )));
            }
        }
        // every speaker owns at least one train or enroll utterance
        let mut ok: HashMap<&str, bool> = HashMap::new();
        for e in &self.entries {
            let flag = ok.entry(&e.speaker).or_insert(false);
            if matches!(e.split, Split::Train | Split::Enroll) {
                *flag = true;
            }
        }
        if let Some((spk, _)) = ok.iter().find(|(_, &v)| !v) {
            return Err(CoreError::validation(format!(
                "speaker `{spk}` has neither train nor enroll utterances"
            )));
        }
        Ok(())
    }

    pub fn languages(&self) -> Vec<String> {
        let mut set: Vec<String> = self
            .entries
            .iter()
            .map(|e| e.language.clone())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        set.sort();
        set
    }

    /// Speakers appearing in the train split, sorted.
    pub fn train_speakers(&self) -> Vec<String> {
        let mut set: Vec<String> = self
            .entries
            .iter()
            .filter(|e| e.split == Split::Train)
            .map(|e| e.speaker.clone())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        set.sort();
        set
    }
}

/// Generator settings for the synthetic corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n_speakers_per_language: usize,
    pub n_utts_per_speaker: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub dim: usize,
    pub language_shift_scale: f64,
    pub speaker_shift_scale: f64,
    pub channel_noise_scale: f64,
    pub temporal_mixing: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_speakers_per_language: 20,
            n_utts_per_speaker: 8,
            frames_min: 120,
            frames_max: 200,
            dim: 40,
            language_shift_scale: 2.0,
            speaker_shift_scale: 2.0,
            channel_noise_scale: 1.0,
            temporal_mixing: 0.5,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers_per_language == 0 {
            return Err(CoreError::validation("n_speakers_per_language must be >= 1"));
        }
        if self.n_utts_per_speaker == 0 {
            return Err(CoreError::validation("n_utts_per_speaker must be >= 1"));
        }
        if self.frames_min == 0 || self.frames_max < self.frames_min {
            return Err(CoreError::validation(
                "frames range must satisfy 1 <= frames_min <= frames_max",
            ));
        }
        if self.dim < 2 {
            return Err(CoreError::validation("dim must be >= 2"));
        }
        for (name, v) in [
            ("language_shift_scale", self.language_shift_scale),
            ("speaker_shift_scale", self.speaker_shift_scale),
            ("channel_noise_scale", self.channel_noise_scale),
        ] {
            if !(v >= 0.0) {
                return Err(CoreError::validation(format!("{name} must be >= 0")));
            }
        }
        if !(0.0..1.0).contains(&self.temporal_mixing) {
            return Err(CoreError::validation("temporal_mixing must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Manifest plus frame data, in manifest order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub sequences: Vec<FeatureSequence>,
}

impl Corpus {
    pub fn index_by_utt(&self) -> HashMap<&str, usize> {
        self.sequences
            .iter()
            .enumerate()
            .map(|(i, s)| (s.utt_id.as_str(), i))
            .collect()
    }

    pub fn split_sequences(&self, split: Split) -> Vec<&FeatureSequence> {
        let idx = self.index_by_utt();
        self.manifest
            .entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| &self.sequences[idx[e.utt_id.as_str()]])
            .collect()
    }
}

fn unit_direction(rng: &mut ChaCha8Rng, dim: usize, target_norm: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = norm(&v);
    if n == 0.0 || target_norm == 0.0 {
        return vec![0.0; dim];
    }
    scale(&mut v, target_norm / n);
    v
}

/// Deterministic synthetic corpus: per language a mean direction of norm
/// `language_shift_scale`, per speaker a mean of norm `speaker_shift_scale`,
/// frames x_t = mu_lang + mu_spk + e_t with AR(1) noise
/// e_t = temporal_mixing * e_{t-1} + n_t, n_t ~ N(0, channel_noise^2 I).
///
/// Per language, the first ~60% of speakers contribute all utterances to
/// the train split; the remaining speakers are evaluation speakers whose
/// first utterances (up to 3) enroll and the rest test, so train and test
/// speaker sets are disjoint.
pub fn generate_corpus(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_languages = 2usize;

    let lang_names: Vec<String> = (0..n_languages).map(|i| format!("L{i}")).collect();
    let lang_means: Vec<Vec<f64>> = (0..n_languages)
        .map(|_| unit_direction(&mut rng, spec.dim, spec.language_shift_scale))
        .collect();

    let n_train_speakers = if spec.n_speakers_per_language == 1 {
        1
    } else {
        ((spec.n_speakers_per_language as f64) * 0.6).ceil() as usize
    };
    let n_enroll = if spec.n_utts_per_speaker == 1 {
        1
    } else {
        3.min(spec.n_utts_per_speaker - 1)
    };

    let mut manifest = CorpusManifest::default();
    let mut sequences = Vec::new();

    for (li, lang) in lang_names.iter().enumerate() {
        for si in 0..spec.n_speakers_per_language {
            let speaker = format!("{lang}_S{si:03}");
            let spk_mean = unit_direction(&mut rng, spec.dim, spec.speaker_shift_scale);
            let is_train_speaker = si < n_train_speakers;

            for ui in 0..spec.n_utts_per_speaker {
                let utt_id = format!("{speaker}_U{ui:03}");
                let t_len = if spec.frames_max == spec.frames_min {
                    spec.frames_min
                } else {
                    let span = (spec.frames_max - spec.frames_min + 1) as u64;
                    use rand::Rng;
                    spec.frames_min + (rng.gen_range(0..span) as usize)
                };

                let mut frames = Mat::zeros(t_len, spec.dim);
                let mut eps = vec![0.0; spec.dim];
                for t in 0..t_len {
                    for d in 0..spec.dim {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        eps[d] = spec.temporal_mixing * eps[d]
                            + spec.channel_noise_scale * noise;
                        frames.set(t, d, lang_means[li][d] + spk_mean[d] + eps[d]);
                    }
                }

                let split = if is_train_speaker {
                    Split::Train
                } else if ui < n_enroll {
                    Split::Enroll
                } else {
                    Split::Test
                };

                manifest.entries.push(ManifestEntry {
                    utt_id: utt_id.clone(),
                    speaker: speaker.clone(),
                    language: lang.clone(),
                    split,
                });
                sequences.push(FeatureSequence {
                    utt_id,
                    speaker: speaker.clone(),
                    language: lang.clone(),
                    frames,
                });
            }
        }
    }

    manifest.validate()?;
    Ok(Corpus {
        manifest,
        sequences,
    })
}

/// Window placement for the short condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffsetRule {
    Head,
    Centered,
    SeededRandom(u64),
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Contiguous crop of at most `n_frames` frames; shorter sequences pass
/// through whole. Labels are preserved.
pub fn crop_short(seq: &FeatureSequence, n_frames: usize, rule: OffsetRule) -> FeatureSequence {
    assert!(n_frames >= 1, "n_frames must be >= 1");
    let t = seq.len();
    if t <= n_frames {
        return seq.clone();
    }
    let max_offset = t - n_frames;
    let offset = match rule {
        OffsetRule::Head => 0,
        OffsetRule::Centered => max_offset / 2,
        OffsetRule::SeededRandom(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&seq.utt_id));
            use rand::Rng;
            rng.gen_range(0..=max_offset as u64) as usize
        }
    };
    let frames = Mat::from_fn(n_frames, seq.dim(), |r, c| seq.frames.at(offset + r, c));
    FeatureSequence {
        utt_id: seq.utt_id.clone(),
        speaker: seq.speaker.clone(),
        language: seq.language.clone(),
        frames,
    }
}

fn no_whitespace(label: &str, what: &str) -> Result<()> {
    if label.is_empty() || label.chars().any(|c| c.is_whitespace()) {
        return Err(CoreError::validation(format!(
            "{what} `{label}` must be non-empty and contain no whitespace"
        )));
    }
    Ok(())
}

/// Writes `manifest.tsv` and `features.txt` into `dir`.
pub fn save_archive(dir: &Path, corpus: &Corpus) -> Result<()> {
    corpus.manifest.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;

    let mut manifest = String::new();
    for e in &corpus.manifest.entries {
        no_whitespace(&e.utt_id, "utt_id")?;
        no_whitespace(&e.speaker, "speaker")?;
        no_whitespace(&e.language, "language")?;
        let _ = writeln!(
            manifest,
            "{}\t{}\t{}\t{}",
            e.utt_id,
            e.speaker,
            e.language,
            e.split.as_str()
        );
    }
    let manifest_path = dir.join("manifest.tsv");
    std::fs::write(&manifest_path, manifest).map_err(|e| CoreError::io(&manifest_path, e))?;

    let mut feats = String::new();
    for s in &corpus.sequences {
        if !s.frames.all_finite() {
            return Err(CoreError::numeric(format!(
                "non-finite frame value in utterance {}",
                s.utt_id
            )));
        }
        let _ = writeln!(
            feats,
            "{} {} {} {} {}",
            s.utt_id,
            s.speaker,
            s.language,
            s.len(),
            s.dim()
        );
        for t in 0..s.len() {
            let row = s.frames.row(t);
            for (d, v) in row.iter().enumerate() {
                if d > 0 {
                    feats.push(' ');
                }
                let _ = write!(feats, "{v}");
            }
            feats.push('\n');
        }
    }
    let feat_path = dir.join("features.txt");
    std::fs::write(&feat_path, feats).map_err(|e| CoreError::io(&feat_path, e))?;
    Ok(())
}

/// Reads an archive written by `save_archive`. Errors name the offending
/// file and line.
pub fn load_archive(dir: &Path) -> Result<Corpus> {
    let manifest_path = dir.join("manifest.tsv");
    let manifest_text =
        std::fs::read_to_string(&manifest_path).map_err(|e| CoreError::io(&manifest_path, e))?;
    let mut manifest = CorpusManifest::default();
    for (ln, line) in manifest_text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(CoreError::parse(
                &manifest_path,
                ln + 1,
                format!("expected 4 tab-separated fields, found {}", parts.len()),
            ));
        }
        manifest.entries.push(ManifestEntry {
            utt_id: parts[0].to_string(),
            speaker: parts[1].to_string(),
            language: parts[2].to_string(),
            split: Split::from_str(parts[3])
                .map_err(|e| CoreError::parse(&manifest_path, ln + 1, e.to_string()))?,
        });
    }
    manifest
        .validate()
        .map_err(|e| CoreError::parse(&manifest_path, 0, e.to_string()))?;

    let feat_path = dir.join("features.txt");
    let feat_text =
        std::fs::read_to_string(&feat_path).map_err(|e| CoreError::io(&feat_path, e))?;
    let mut lines = feat_text.lines().enumerate().peekable();
    let mut by_id: BTreeMap<String, FeatureSequence> = BTreeMap::new();
    let mut dim_seen: Option<usize> = None;

    while let Some((ln, header)) = lines.next() {
        if header.is_empty() {
            continue;
        }
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 5 {
            return Err(CoreError::parse(
                &feat_path,
                ln + 1,
                "malformed utterance header (expected `utt_id speaker language T D`)",
            ));
        }
        let utt_id = parts[0].to_string();
        let t_len: usize = parts[3].parse().map_err(|_| {
            CoreError::parse(
                &feat_path,
                ln + 1,
                format!("utterance {utt_id}: frame count `{}` is not a number", parts[3]),
            )
        })?;
        let dim: usize = parts[4].parse().map_err(|_| {
            CoreError::parse(
                &feat_path,
                ln + 1,
                format!("utterance {utt_id}: dim `{}` is not a number", parts[4]),
            )
        })?;
        if t_len == 0 {
            return Err(CoreError::parse(
                &feat_path,
                ln + 1,
                format!("utterance {utt_id}: frame count must be >= 1"),
            ));
        }
        if let Some(d) = dim_seen {
            if d != dim {
                return Err(CoreError::parse(
                    &feat_path,
                    ln + 1,
                    format!("utterance {utt_id}: dim {dim} differs from corpus dim {d}"),
                ));
            }
        } else {
            dim_seen = Some(dim);
        }
        let mut frames = Mat::zeros(t_len, dim);
        for t in 0..t_len {
            let (rln, row) = lines.next().ok_or_else(|| {
                CoreError::parse(
                    &feat_path,
                    ln + 1,
                    format!("utterance {utt_id}: expected {t_len} frame rows, file ended at {t}"),
                )
            })?;
            let vals: Vec<&str> = row.split_whitespace().collect();
            if vals.len() != dim {
                return Err(CoreError::parse(
                    &feat_path,
                    rln + 1,
                    format!(
                        "utterance {utt_id}: expected {dim} values per frame, found {}",
                        vals.len()
                    ),
                ));
            }
            for (d, v) in vals.iter().enumerate() {
                let x: f64 = v.parse().map_err(|_| {
                    CoreError::parse(
                        &feat_path,
                        rln + 1,
                        format!("utterance {utt_id}: `{v}` is not a number"),
                    )
                })?;
                frames.set(t, d, x);
            }
        }
        if by_id.contains_key(&utt_id) {
            return Err(CoreError::parse(
                &feat_path,
                ln + 1,
                format!("duplicate utterance `{utt_id}`"),
            ));
        }
        by_id.insert(
            utt_id.clone(),
            FeatureSequence {
                utt_id,
                speaker: parts[1].to_string(),
                language: parts[2].to_string(),
                frames,
            },
        );
    }

    // order sequences by manifest
    let mut sequences = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let seq = by_id.remove(&e.utt_id).ok_or_else(|| {
            CoreError::parse(
                &feat_path,
                0,
                format!("utterance `{}` in manifest but missing from features", e.utt_id),
            )
        })?;
        sequences.push(seq);
    }
    if let Some((orphan, _)) = by_id.iter().next() {
        return Err(CoreError::parse(
            &feat_path,
            0,
            format!("utterance `{orphan}` in features but missing from manifest"),
        ));
    }
    Ok(Corpus {
        manifest,
        sequences,
    })
}
