//! Versioned binary checkpoint container.
//!
//! Layout: magic `A2LG`, format version (u16), config block, vocabulary
//! block, then parameter tensors as little-endian 64-bit floats with a
//! name/shape directory. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tokenizer::Vocabulary;

use super::params::{EncoderConfig, ModelParameters};

const MAGIC: &[u8; 4] = b"A2LG";
const VERSION: u16 = 1;

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint("truncated checkpoint file".into()))?;
        Ok(buf)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.bytes(len)?)
            .map_err(|_| Error::Checkpoint("non-utf8 string in checkpoint".into()))
    }
}

fn write_string(out: &mut impl Write, s: &str) -> std::io::Result<()> {
    out.write_all(&(s.len() as u32).to_le_bytes())?;
    out.write_all(s.as_bytes())
}

/// Write parameters, config, and vocabulary to a checkpoint file.
pub fn save_checkpoint(
    params: &ModelParameters,
    config: &EncoderConfig,
    vocab: &Vocabulary,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if params.vocab_size() != vocab.len() {
        return Err(Error::Checkpoint(format!(
            "embedding rows {} do not match vocabulary size {}",
            params.vocab_size(),
            vocab.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;

        out.write_all(&(config.u as u32).to_le_bytes())?;
        out.write_all(&(config.d as u32).to_le_bytes())?;
        out.write_all(&(config.ff_hidden as u32).to_le_bytes())?;
        out.write_all(&(config.n_layers as u32).to_le_bytes())?;
        out.write_all(&(config.n_heads as u32).to_le_bytes())?;
        out.write_all(&config.dropout.to_le_bytes())?;
        out.write_all(&config.seed.to_le_bytes())?;

        out.write_all(&(vocab.len() as u32).to_le_bytes())?;
        for word in vocab.words() {
            write_string(out, word)?;
        }

        let layout = params.tensor_layout();
        let flat = params.flat();
        out.write_all(&(layout.len() as u32).to_le_bytes())?;
        for ((name, shape), data) in layout.iter().zip(flat) {
            write_string(out, name)?;
            out.write_all(&[shape.len() as u8])?;
            for &dim in shape {
                out.write_all(&(dim as u32).to_le_bytes())?;
            }
            for &v in data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

/// Read a checkpoint back. Fails on unknown magic or version, truncation,
/// or tensor shapes inconsistent with the stored config and vocabulary.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(ModelParameters, EncoderConfig, Vocabulary)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };

    let magic = r.bytes(4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:02x?}; not a checkpoint file"
        )));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }

    let config = EncoderConfig {
        u: r.u32()? as usize,
        d: r.u32()? as usize,
        ff_hidden: r.u32()? as usize,
        n_layers: r.u32()? as usize,
        n_heads: r.u32()? as usize,
        dropout: r.f64()?,
        seed: r.u64()?,
    };
    config.validate()?;

    let n_words = r.u32()? as usize;
    let mut words = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        words.push(r.string()?);
    }
    let vocab =
        Vocabulary::from_words(words).map_err(|e| Error::Checkpoint(format!("vocabulary: {e}")))?;

    let mut params = ModelParameters::shaped_zeros(&config, vocab.len())?;
    let expected = params.tensor_layout();
    let n_tensors = r.u32()? as usize;
    if n_tensors != expected.len() {
        return Err(Error::Checkpoint(format!(
            "shape mismatch: {n_tensors} tensors stored, {} expected",
            expected.len()
        )));
    }
    {
        let mut flat = params.flat_mut();
        for (t, (exp_name, exp_shape)) in expected.iter().enumerate() {
            let name = r.string()?;
            if &name != exp_name {
                return Err(Error::Checkpoint(format!(
                    "tensor {t} is '{name}', expected '{exp_name}'"
                )));
            }
            let ndim = r.bytes(1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            if &shape != exp_shape {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for '{name}': stored {shape:?}, expected {exp_shape:?}"
                )));
            }
            let dst = &mut flat[t];
            for v in dst.iter_mut() {
                *v = r.f64()?;
            }
        }
    }
    if !params.is_finite() {
        return Err(Error::Checkpoint("non-finite parameter values".into()));
    }
    Ok((params, config, vocab))
}

impl ModelParameters {
    /// Zero-valued parameters with the shapes implied by a config and
    /// vocabulary size.
    pub fn shaped_zeros(config: &EncoderConfig, vocab_size: usize) -> Result<ModelParameters> {
        // reuse the init path for shape bookkeeping, then zero everything
        let mut params = super::params::init_parameters(config, vocab_size)?;
        for t in params.flat_mut() {
            for v in t {
                *v = 0.0;
            }
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{init_parameters, score_sequences};
    use crate::tokenizer::{build_vocabulary, prepare_sequence, CLS_ID, PAD_ID};

    fn fixture() -> (EncoderConfig, ModelParameters, Vocabulary) {
        let cfg = EncoderConfig {
            u: 6,
            d: 8,
            ff_hidden: 16,
            n_layers: 2,
            n_heads: 2,
            dropout: 0.05,
            seed: 8,
        };
        let seqs = vec![
            prepare_sequence("alpha beta gamma 42", cfg.u),
            prepare_sequence("delta 0xff alpha", cfg.u),
        ];
        let vocab = build_vocabulary(&seqs);
        let params = init_parameters(&cfg, vocab.len()).unwrap();
        (cfg, params, vocab)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (cfg, params, vocab) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.a2lg");
        save_checkpoint(&params, &cfg, &vocab, &path).unwrap();
        let (loaded, loaded_cfg, loaded_vocab) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded_cfg, cfg);
        assert_eq!(loaded_vocab, vocab);
        assert_eq!(loaded, params);

        // identical scores through the loaded model
        let ids = vec![vec![CLS_ID, 5, 6, 7, PAD_ID, PAD_ID]];
        let before = score_sequences(&ids, &params, &cfg).unwrap();
        let after = score_sequences(&ids, &loaded, &loaded_cfg).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let (cfg, params, vocab) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.a2lg");
        save_checkpoint(&params, &cfg, &vocab, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn unknown_version_is_rejected() {
        let (cfg, params, vocab) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.a2lg");
        save_checkpoint(&params, &cfg, &vocab, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 0xEE;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn truncated_file_is_rejected() {
        let (cfg, params, vocab) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.a2lg");
        save_checkpoint(&params, &cfg, &vocab, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn vocab_size_mismatch_is_a_shape_error() {
        let (cfg, params, vocab) = fixture();
        // a checkpoint written against a different vocabulary size cannot be
        // loaded for this one: the embedding shape check trips
        let bigger = {
            let seqs = vec![
                prepare_sequence("alpha beta gamma delta", cfg.u),
                prepare_sequence("epsilon zeta eta theta", cfg.u),
            ];
            build_vocabulary(&seqs)
        };
        assert_ne!(bigger.len(), vocab.len());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.a2lg");
        let err = save_checkpoint(&params, &cfg, &bigger, &path).unwrap_err();
        assert!(err.to_string().contains("vocabulary size"), "{err}");

        // and a file whose vocabulary block was tampered to disagree with the
        // embedding tensor fails the stored-shape comparison
        save_checkpoint(&params, &cfg, &vocab, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // vocab count field sits right after magic+version+config block
        let count_offset = 4 + 2 + (5 * 4 + 8 + 8);
        let stored = u32::from_le_bytes(bytes[count_offset..count_offset + 4].try_into().unwrap());
        assert_eq!(stored as usize, vocab.len());
        // drop the last word by shrinking the count and removing its bytes
        let mut cursor = count_offset + 4;
        for _ in 0..stored - 1 {
            let len =
                u32::from_le_bytes(bytes[cursor..cursor + 4].try_into().unwrap()) as usize;
            cursor += 4 + len;
        }
        let last_len = u32::from_le_bytes(bytes[cursor..cursor + 4].try_into().unwrap()) as usize;
        bytes.drain(cursor..cursor + 4 + last_len);
        bytes[count_offset..count_offset + 4].copy_from_slice(&(stored - 1).to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("shape mismatch"), "{err}");
    }
}
