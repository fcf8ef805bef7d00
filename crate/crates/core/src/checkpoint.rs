//! Versioned binary checkpoints.
//!
//! Layout (little-endian): magic `LHGC`, `u32` version, 64 hex bytes of
//! config fingerprint, `u64` seed, `u64` epoch, `f64` validation MAP, `u32`
//! length plus JSON of the model config, `u8` entity flag, `u32` tensor
//! count, then per tensor a `u32`-prefixed name, `u64` rows, `u64` cols and
//! the row-major values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{LayerParams, LinkParams, ModelConfig, ModelParams};

const MAGIC: &[u8; 4] = b"LHGC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub seed: u64,
    pub epoch: u64,
    pub val_map: f64,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if self.fingerprint.len() != 64 {
            return Err(Error::Checkpoint("fingerprint must be 64 hex characters".into()));
        }
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            w.write_all(MAGIC)?;
            w.write_u32::<LittleEndian>(VERSION)?;
            w.write_all(self.fingerprint.as_bytes())?;
            w.write_u64::<LittleEndian>(self.seed)?;
            w.write_u64::<LittleEndian>(self.epoch)?;
            w.write_f64::<LittleEndian>(self.val_map)?;
            let cfg = serde_json::to_vec(&self.params.config)?;
            w.write_u32::<LittleEndian>(cfg.len() as u32)?;
            w.write_all(&cfg)?;
            w.write_u8(u8::from(self.params.entity.is_some()))?;
            let names = self.params.names();
            let tensors = self.params.tensors();
            w.write_u32::<LittleEndian>(tensors.len() as u32)?;
            for (name, t) in names.iter().zip(tensors) {
                w.write_u32::<LittleEndian>(name.len() as u32)?;
                w.write_all(name.as_bytes())?;
                w.write_u64::<LittleEndian>(t.rows() as u64)?;
                w.write_u64::<LittleEndian>(t.cols() as u64)?;
                for &x in t.data() {
                    w.write_f64::<LittleEndian>(x)?;
                }
            }
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut fp = [0u8; 64];
        r.read_exact(&mut fp)?;
        let fingerprint = String::from_utf8(fp.to_vec()).map_err(|_| bad("corrupt fingerprint"))?;
        let seed = r.read_u64::<LittleEndian>()?;
        let epoch = r.read_u64::<LittleEndian>()?;
        let val_map = r.read_f64::<LittleEndian>()?;
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut cfg = vec![0u8; len];
        r.read_exact(&mut cfg)?;
        let config: ModelConfig = serde_json::from_slice(&cfg)?;
        let has_entity = r.read_u8()? == 1;
        let count = r.read_u32::<LittleEndian>()? as usize;
        let expected = usize::from(has_entity) + 8 * config.layers + 3;
        if count != expected {
            return Err(bad(&format!("{count} tensors, config implies {expected}")));
        }
        let mut tensors = Vec::with_capacity(count);
        let mut names = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.read_u32::<LittleEndian>()? as usize;
            let mut name = vec![0u8; n];
            r.read_exact(&mut name)?;
            names.push(String::from_utf8(name).map_err(|_| bad("corrupt tensor name"))?);
            let rows = r.read_u64::<LittleEndian>()? as usize;
            let cols = r.read_u64::<LittleEndian>()? as usize;
            let mut data = vec![0.0; rows * cols];
            r.read_f64_into::<LittleEndian>(&mut data)?;
            tensors.push(Tensor::from_vec(rows, cols, data)?);
        }
        let mut it = tensors.into_iter();
        let entity = has_entity.then(|| it.next().unwrap());
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let mut next = || it.next().unwrap();
            layers.push(LayerParams {
                w_s: next(),
                b_s: next(),
                w_gamma: next(),
                b_gamma: next(),
                w_beta: next(),
                b_beta: next(),
                w_h: next(),
                b_h: next(),
            });
        }
        let link = LinkParams {
            w: it.next().unwrap(),
            u: it.next().unwrap(),
            b: it.next().unwrap(),
        };
        let params = ModelParams {
            config,
            entity,
            layers,
            link,
        };
        if params.names() != names {
            return Err(bad("tensor names do not match the model layout"));
        }
        Ok(Checkpoint {
            fingerprint,
            seed,
            epoch,
            val_map,
            params,
        })
    }
}
