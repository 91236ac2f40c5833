//! Checkpoint directory: a JSON manifest (configs, template, measured A/Q,
//! vocabulary identifiers) plus one binary tensor file keyed by parameter
//! name.

use super::{AdapterSettings, AnomalyModel, DecoderConfig, EncoderConfig, PromptTemplate, Vocab};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"LGADWT01";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o failed at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest parse failed: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("weights file is malformed: {0}")]
    Format(String),
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("tensor {name} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("checkpoint holds unknown tensor {0}")]
    UnknownTensor(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub backbone: String,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub template: PromptTemplate,
    /// Measured prefix token count (A) and suffix token count (Q).
    pub prefix_len: usize,
    pub suffix_len: usize,
    pub enc_vocab: Vec<String>,
    pub dec_vocab: Vec<String>,
    pub enc_vocab_fingerprint: u64,
    pub dec_vocab_fingerprint: u64,
    pub adapter: Option<AdapterSettings>,
    pub quantized_base: bool,
}

fn io_err(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write the model to `dir` (created if needed).
pub fn save(dir: &Path, model: &AnomalyModel<f32>) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let manifest = CheckpointManifest {
        format: "logad-checkpoint".to_string(),
        version: 1,
        backbone: "tiny".to_string(),
        encoder: model.encoder.cfg.clone(),
        decoder: model.decoder.cfg.clone(),
        template: model.template.clone(),
        prefix_len: model.prefix_len(),
        suffix_len: model.suffix_len(),
        enc_vocab: model.enc_vocab.tokens().to_vec(),
        dec_vocab: model.dec_vocab.tokens().to_vec(),
        enc_vocab_fingerprint: model.enc_vocab.fingerprint(),
        dec_vocab_fingerprint: model.dec_vocab.fingerprint(),
        adapter: model.adapter,
        quantized_base: model.quantized_base,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| io_err(&manifest_path, e))?;

    let weights_path = dir.join(WEIGHTS_FILE);
    let file = fs::File::create(&weights_path).map_err(|e| io_err(&weights_path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(model.store.len() as u32).to_le_bytes())?;
        for id in model.store.ids() {
            let name = model.store.name(id).as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            let v = model.store.value(id);
            w.write_all(&(v.nrows() as u32).to_le_bytes())?;
            w.write_all(&(v.ncols() as u32).to_le_bytes())?;
            for x in v.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()
    };
    write(&mut w).map_err(|e| io_err(&weights_path, e))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest, CheckpointError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Rebuild a model from a checkpoint directory.
pub fn load(dir: &Path) -> Result<AnomalyModel<f32>, CheckpointError> {
    let manifest = read_manifest(dir)?;
    let mut enc_vocab = Vocab::from_tokens(manifest.enc_vocab.clone());
    enc_vocab.reindex();
    let mut model = AnomalyModel::<f32>::tiny(
        &manifest.encoder,
        &manifest.decoder,
        manifest.template.clone(),
        enc_vocab,
        0,
    );
    if let Some(ad) = manifest.adapter {
        model
            .attach_adapters(ad.rank, ad.alpha)
            .map_err(|e| CheckpointError::Format(e.to_string()))?;
    }
    model.quantized_base = manifest.quantized_base;
    if model.dec_vocab.fingerprint() != manifest.dec_vocab_fingerprint {
        return Err(CheckpointError::Format(
            "decoder vocabulary does not match the template-derived vocabulary".to_string(),
        ));
    }

    let weights_path = dir.join(WEIGHTS_FILE);
    let file = fs::File::open(&weights_path).map_err(|e| io_err(&weights_path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| io_err(&weights_path, e))?;
    if &magic != MAGIC {
        return Err(CheckpointError::Format("bad magic".to_string()));
    }
    let count = read_u32(&mut r, &weights_path)? as usize;
    let mut seen = 0usize;
    for _ in 0..count {
        let name_len = read_u32(&mut r, &weights_path)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|e| io_err(&weights_path, e))?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Format("tensor name is not utf-8".to_string()))?;
        let rows = read_u32(&mut r, &weights_path)? as usize;
        let cols = read_u32(&mut r, &weights_path)? as usize;
        let mut data = vec![0f32; rows * cols];
        let mut buf = [0u8; 4];
        for x in data.iter_mut() {
            r.read_exact(&mut buf).map_err(|e| io_err(&weights_path, e))?;
            *x = f32::from_le_bytes(buf);
        }
        let id = model
            .store
            .lookup(&name)
            .ok_or_else(|| CheckpointError::UnknownTensor(name.clone()))?;
        let expected = model.store.value(id).dim();
        if expected != (rows, cols) {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected,
                got: (rows, cols),
            });
        }
        let value = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| CheckpointError::Format(e.to_string()))?;
        model.store.set_value(id, value);
        seen += 1;
    }
    if seen != model.store.len() {
        let missing = model
            .store
            .ids()
            .map(|id| model.store.name(id).to_string())
            .nth(seen)
            .unwrap_or_default();
        return Err(CheckpointError::MissingTensor(missing));
    }
    Ok(model)
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| io_err(path, e))?;
    Ok(u32::from_le_bytes(buf))
}
