//! Binary weight files.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! magic "FNSW" | version | kind (0 encoder-decoder, 1 classifier) | 32-byte config digest
//! | entry count | entries...
//! entry: name length | UTF-8 name | rank | dims... | f32 payload (row-major)
//! ```
//!
//! Values are stored as `f32`, so a save/load/save cycle is byte-identical.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{build_model, freeze_encoder, ClassifierHead, ClassifierModel, EncoderDecoderModel, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::Parameter;

pub const WEIGHT_MAGIC: [u8; 4] = *b"FNSW";
pub const WEIGHT_VERSION: u32 = 1;
const KIND_AUTOENCODER: u32 = 0;
const KIND_CLASSIFIER: u32 = 1;

fn encode(kind: u32, digest: &[u8; 32], params: &[&Parameter]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    out.extend_from_slice(&kind.to_le_bytes());
    out.extend_from_slice(digest);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape.len() as u32).to_le_bytes());
        for &d in &p.value.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &p.value.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::WeightFile("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn decode(bytes: &[u8], kind: u32, digest: &[u8; 32], params: &mut [&mut Parameter]) -> Result<()> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != WEIGHT_MAGIC {
        return Err(Error::WeightFile("not a weight file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != WEIGHT_VERSION {
        return Err(Error::WeightFile(format!("format version {version}, expected {WEIGHT_VERSION}")));
    }
    let found_kind = r.u32()?;
    if found_kind != kind {
        return Err(Error::WeightFile(format!("file holds model kind {found_kind}, expected {kind}")));
    }
    if r.take(32)? != digest {
        return Err(Error::WeightFile("weights were saved with a different model config".into()));
    }
    let count = r.u32()? as usize;
    if count != params.len() {
        return Err(Error::WeightFile(format!("{count} entries, config expects {}", params.len())));
    }
    for p in params.iter_mut() {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?).map_err(|_| Error::WeightFile("entry name is not UTF-8".into()))?;
        if name != p.name {
            return Err(Error::WeightFile(format!("entry {name:?} where {:?} was expected", p.name)));
        }
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        if dims != p.value.shape {
            return Err(Error::WeightFile(format!("{name}: shape {dims:?}, config expects {:?}", p.value.shape)));
        }
        for v in p.value.data.iter_mut() {
            *v = f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as f64;
        }
        p.zero_grad();
    }
    if r.pos != bytes.len() {
        return Err(Error::WeightFile("trailing bytes after last entry".into()));
    }
    Ok(())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Serialises an encoder-decoder to bytes in the weight-file layout.
pub fn weights_to_bytes(model: &EncoderDecoderModel) -> Vec<u8> {
    encode(KIND_AUTOENCODER, &model.cfg.digest(), &model.params())
}

pub fn weights_from_bytes(bytes: &[u8], cfg: &ModelConfig) -> Result<EncoderDecoderModel> {
    let mut model = build_model(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    decode(bytes, KIND_AUTOENCODER, &cfg.digest(), &mut model.params_mut())?;
    Ok(model)
}

pub fn save_weights(model: &EncoderDecoderModel, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &weights_to_bytes(model))
}

/// Loads weights saved for exactly this config.
pub fn load_weights(path: impl AsRef<Path>, cfg: &ModelConfig) -> Result<EncoderDecoderModel> {
    weights_from_bytes(&read(path.as_ref())?, cfg)
}

/// Saves encoder and head together.
pub fn save_classifier(model: &ClassifierModel, path: impl AsRef<Path>) -> Result<()> {
    let enc = model.encoder.model();
    let mut params = enc.params();
    params.extend(model.head.stored());
    write(path.as_ref(), &encode(KIND_CLASSIFIER, &enc.cfg.digest(), &params))
}

pub fn load_classifier(path: impl AsRef<Path>, cfg: &ModelConfig) -> Result<ClassifierModel> {
    let bytes = read(path.as_ref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut enc = build_model(cfg, &mut rng)?;
    let mut head = ClassifierHead::new(&cfg.classifier, &mut rng);
    {
        let mut params = enc.params_mut();
        params.extend(head.stored_mut());
        decode(&bytes, KIND_CLASSIFIER, &cfg.digest(), &mut params)?;
    }
    Ok(ClassifierModel { encoder: freeze_encoder(enc), head })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(seed: u64) -> EncoderDecoderModel {
        build_model(&ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let m = model(3);
        let first = weights_to_bytes(&m);
        let loaded = weights_from_bytes(&first, &m.cfg).unwrap();
        assert_eq!(weights_to_bytes(&loaded), first);
        for (a, b) in m.params().iter().zip(loaded.params()) {
            for (x, y) in a.value.data.iter().zip(&b.value.data) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn tampering_is_detected() {
        let m = model(4);
        let good = weights_to_bytes(&m);
        assert!(weights_from_bytes(&good[..good.len() - 3], &m.cfg).is_err());

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(weights_from_bytes(&bad_version, &m.cfg).is_err());

        // First entry: header is 4 + 4 + 4 + 32 + 4 bytes, then name length and "conv1.w", rank, dims.
        let first_dim = 48 + 4 + "conv1.w".len() + 4;
        let mut bad_shape = good.clone();
        bad_shape[first_dim] = 7;
        let err = weights_from_bytes(&bad_shape, &m.cfg).unwrap_err();
        assert!(err.to_string().contains("shape"), "{err}");

        let other = ModelConfig::with_channels(5);
        assert!(weights_from_bytes(&good, &other).is_err());
    }

    #[test]
    fn classifier_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = ClassifierModel::new(freeze_encoder(model(5)), &mut rng);
        save_classifier(&c, &path).unwrap();
        let back = load_classifier(&path, &ModelConfig::default()).unwrap();
        let again = dir.path().join("again.bin");
        save_classifier(&back, &again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
        assert!(load_weights(&path, &ModelConfig::default()).is_err());
    }
}
