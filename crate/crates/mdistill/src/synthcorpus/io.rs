//! Corpus directory layout: `manifest.json` plus one binary file per split.
//!
//! Split file format (integers little-endian):
//!
//! ```text
//! magic "MDCP" (4 bytes), version u32 = 1, utterance count u32
//! per utterance:
//!   utterance_id u64, domain_id u32, T u32, K u32, D u32,
//!   frames f64 row-major (T x D), frame_labels u32 x T, tokens u32 x K
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::numcore::Matrix;

use super::{Corpus, CorpusError, CorpusManifest, Split, Utterance};

pub const CORPUS_MAGIC: &[u8; 4] = b"MDCP";
pub const CORPUS_VERSION: u32 = 1;

fn map_eof(e: std::io::Error) -> CorpusError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        CorpusError::Truncated
    } else {
        CorpusError::Io(e)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, CorpusError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(map_eof)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CorpusError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(map_eof)?;
    Ok(u64::from_le_bytes(buf))
}

fn write_split(utterances: &[Utterance], path: &Path) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CORPUS_MAGIC)?;
    w.write_all(&CORPUS_VERSION.to_le_bytes())?;
    w.write_all(&(utterances.len() as u32).to_le_bytes())?;
    for utt in utterances {
        w.write_all(&utt.utterance_id.to_le_bytes())?;
        w.write_all(&utt.domain_id.to_le_bytes())?;
        w.write_all(&(utt.frames.rows() as u32).to_le_bytes())?;
        w.write_all(&(utt.tokens.len() as u32).to_le_bytes())?;
        w.write_all(&(utt.frames.cols() as u32).to_le_bytes())?;
        for &v in utt.frames.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        for &label in &utt.frame_labels {
            w.write_all(&(label as u32).to_le_bytes())?;
        }
        for &token in &utt.tokens {
            w.write_all(&(token as u32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_split(path: &Path) -> Result<Vec<Utterance>, CorpusError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(map_eof)?;
    if &magic != CORPUS_MAGIC {
        return Err(CorpusError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != CORPUS_VERSION {
        return Err(CorpusError::VersionMismatch(version));
    }
    let count = read_u32(&mut r)? as usize;
    let mut utterances = Vec::with_capacity(count);
    for _ in 0..count {
        let utterance_id = read_u64(&mut r)?;
        let domain_id = read_u32(&mut r)?;
        let frames_len = read_u32(&mut r)? as usize;
        let token_len = read_u32(&mut r)? as usize;
        let dim = read_u32(&mut r)? as usize;
        let mut data = vec![0.0f64; frames_len * dim];
        for v in &mut data {
            *v = f64::from_bits(read_u64(&mut r)?);
        }
        let frames = Matrix::from_vec(frames_len, dim, data)
            .map_err(|e| CorpusError::Inconsistent(e.to_string()))?;
        let mut frame_labels = Vec::with_capacity(frames_len);
        for _ in 0..frames_len {
            frame_labels.push(read_u32(&mut r)? as usize);
        }
        let mut tokens = Vec::with_capacity(token_len);
        for _ in 0..token_len {
            tokens.push(read_u32(&mut r)? as usize);
        }
        utterances.push(Utterance {
            utterance_id,
            domain_id,
            frames,
            frame_labels,
            tokens,
        });
    }
    Ok(utterances)
}

pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<(), CorpusError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let manifest_json = serde_json::to_string_pretty(&corpus.manifest)?;
    std::fs::write(dir.join("manifest.json"), manifest_json + "\n")?;
    for split in Split::ALL {
        write_split(corpus.split(split), &dir.join(format!("{}.bin", split.name())))?;
    }
    Ok(())
}

pub fn read_corpus(dir: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    let manifest_text = std::fs::read_to_string(&manifest_path)
        .map_err(|_| CorpusError::MissingManifest(manifest_path.display().to_string()))?;
    let manifest: CorpusManifest = serde_json::from_str(&manifest_text)?;
    manifest.validate()?;

    let mut corpus = Corpus {
        manifest,
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    for split in Split::ALL {
        let utterances = read_split(&dir.join(format!("{}.bin", split.name())))?;
        validate_split(&corpus.manifest, split, &utterances)?;
        match split {
            Split::Train => corpus.train = utterances,
            Split::Dev => corpus.dev = utterances,
            Split::Test => corpus.test = utterances,
        }
    }
    Ok(corpus)
}

fn validate_split(
    manifest: &CorpusManifest,
    split: Split,
    utterances: &[Utterance],
) -> Result<(), CorpusError> {
    let expected = manifest.split_count(split) * manifest.domains.len();
    if utterances.len() != expected {
        return Err(CorpusError::Inconsistent(format!(
            "split {} holds {} utterances, manifest says {}",
            split.name(),
            utterances.len(),
            expected
        )));
    }
    let mut present = std::collections::BTreeSet::new();
    for utt in utterances {
        if manifest.domain(utt.domain_id).is_none() {
            return Err(CorpusError::Inconsistent(format!(
                "utterance {} references unknown domain {}",
                utt.utterance_id, utt.domain_id
            )));
        }
        present.insert(utt.domain_id);
        if utt.frames.cols() != manifest.feature_dim {
            return Err(CorpusError::Inconsistent(format!(
                "utterance {} has feature dim {}, manifest says {}",
                utt.utterance_id,
                utt.frames.cols(),
                manifest.feature_dim
            )));
        }
        if utt.frames.rows() != utt.frame_labels.len() {
            return Err(CorpusError::Inconsistent(format!(
                "utterance {} frame/label count mismatch",
                utt.utterance_id
            )));
        }
        if utt.tokens.is_empty()
            || utt
                .frame_labels
                .iter()
                .chain(&utt.tokens)
                .any(|&l| l == 0 || l > manifest.vocab_size)
        {
            return Err(CorpusError::Inconsistent(format!(
                "utterance {} carries labels outside 1..={}",
                utt.utterance_id, manifest.vocab_size
            )));
        }
    }
    if present.len() != manifest.domains.len() {
        return Err(CorpusError::Inconsistent(format!(
            "split {} covers {} domains, manifest defines {}",
            split.name(),
            present.len(),
            manifest.domains.len()
        )));
    }
    Ok(())
}
