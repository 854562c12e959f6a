//! Versioned binary model checkpoints.
//!
//! Layout: magic `ESTF`, u32 version, a length-prefixed JSON header (config
//! plus the two vocabulary token lists), then each parameter as a
//! length-prefixed name, shape header and little-endian f64 data. Identical
//! parameters serialize to identical bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TransformerModel};

const MAGIC: &[u8; 4] = b"ESTF";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    src_vocab: Vec<String>,
    tgt_vocab: Vec<String>,
}

impl TransformerModel {
    pub fn write_checkpoint<W: Write>(
        &self,
        mut w: W,
        src_vocab: &Vocab,
        tgt_vocab: &Vocab,
    ) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let header = Header {
            config: self.config().clone(),
            src_vocab: src_vocab.tokens().to_vec(),
            tgt_vocab: tgt_vocab.tokens().to_vec(),
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("header serialization: {e}")))?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let store = self.store();
        w.write_all(&(store.len() as u64).to_le_bytes())?;
        for id in store.ids() {
            let name = store.name(id).as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            let shape = store.shape(id);
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in store.value(id) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save_checkpoint(
        &self,
        path: impl AsRef<Path>,
        src_vocab: &Vocab,
        tgt_vocab: &Vocab,
    ) -> Result<()> {
        let mut file = BufWriter::new(File::create(path.as_ref())?);
        self.write_checkpoint(&mut file, src_vocab, tgt_vocab)?;
        file.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(TransformerModel, Vocab, Vocab)> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {magic:?}: not a model checkpoint"
            )));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let json_len = read_u64(&mut r)? as usize;
        let mut json = vec![0u8; json_len];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)
            .map_err(|e| Error::Checkpoint(format!("header parse: {e}")))?;

        // rebuild the parameter skeleton from the config, then fill values
        let mut model = TransformerModel::new(header.config, 0)?;
        let n_params = read_u64(&mut r)? as usize;
        if n_params != model.store().len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {n_params} parameters, config implies {}",
                model.store().len()
            )));
        }
        for _ in 0..n_params {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Checkpoint("non-utf8 parameter name".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(&mut r)? as usize);
            }
            let id = model
                .store()
                .id_of(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
            if model.store().shape(id) != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    shape,
                    model.store().shape(id)
                )));
            }
            let numel: usize = shape.iter().product();
            let mut data = vec![0.0; numel];
            let mut buf = [0u8; 8];
            for v in data.iter_mut() {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            model.store_mut().value_mut(id).copy_from_slice(&data);
        }
        let src_vocab = Vocab::from_tokens(header.src_vocab);
        let tgt_vocab = Vocab::from_tokens(header.tgt_vocab);
        Ok((model, src_vocab, tgt_vocab))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(TransformerModel, Vocab, Vocab)> {
        let file = BufReader::new(File::open(path.as_ref())?);
        TransformerModel::read_checkpoint(file)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
