//! Versioned binary checkpoint container: magic bytes `OCTSEG01`, a JSON
//! header (format version, topology config, training metadata), then
//! length-prefixed named arrays in little-endian 32-bit floats. Writes are
//! atomic (write-temp, rename).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, UNet};

pub const MAGIC: &[u8; 8] = b"OCTSEG01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    epoch: usize,
    val_loss: f64,
    loss_config_id: u8,
    seed: u64,
}

/// Serialized trained parameters plus the metadata needed to reproduce and
/// compare runs.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: UNet<f32>,
    pub epoch: usize,
    pub val_loss: f64,
    pub loss_config_id: u8,
    pub seed: u64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        {
            let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            let mut w = BufWriter::new(file);
            self.write_to(&mut w).map_err(|e| Error::io(&tmp, e))?;
            w.flush().map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.model.config.clone(),
            epoch: self.epoch,
            val_loss: self.val_loss,
            loss_config_id: self.loss_config_id,
            seed: self.seed,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        w.write_u32::<LittleEndian>(json.len() as u32)?;
        w.write_all(&json)?;
        let state = self.model.named_state();
        w.write_u32::<LittleEndian>(state.len() as u32)?;
        for (name, arr) in state {
            let bytes = name.as_bytes();
            w.write_u16::<LittleEndian>(bytes.len() as u16)?;
            w.write_all(bytes)?;
            w.write_u8(arr.ndim() as u8)?;
            for &d in arr.shape() {
                w.write_u32::<LittleEndian>(d as u32)?;
            }
            for &v in arr.iter() {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        Self::read_from(&mut r).map_err(|e| match e {
            LoadError::Io(io) => Error::Checkpoint(format!(
                "truncated or unreadable checkpoint {}: {io}",
                path.display()
            )),
            LoadError::Semantic(err) => err,
        })
    }

    fn read_from<R: Read>(r: &mut R) -> std::result::Result<Checkpoint, LoadError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes; not a checkpoint file".into()).into());
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format_version mismatch: file has {version}, supported is {FORMAT_VERSION}"
            ))
            .into());
        }
        let json_len = r.read_u32::<LittleEndian>()? as usize;
        let mut json = vec![0u8; json_len];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

        let n_arrays = r.read_u32::<LittleEndian>()? as usize;
        let mut arrays: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::with_capacity(n_arrays);
        for _ in 0..n_arrays {
            let name_len = r.read_u16::<LittleEndian>()? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|e| Error::Checkpoint(format!("bad array name: {e}")))?;
            let ndim = r.read_u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.read_u32::<LittleEndian>()? as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = vec![0f32; len];
            r.read_f32_into::<LittleEndian>(&mut data)?;
            arrays.push((name, shape, data));
        }

        let mut model = UNet::<f32>::init(&header.config, 0).map_err(LoadError::Semantic)?;
        let mut state = model.state_mut();
        if state.len() != arrays.len() {
            return Err(Error::Checkpoint(format!(
                "config expects {} arrays, file has {}",
                state.len(),
                arrays.len()
            ))
            .into());
        }
        for ((name, shape, data), (expected_name, view)) in
            arrays.into_iter().zip(state.iter_mut())
        {
            if name != *expected_name {
                return Err(Error::Checkpoint(format!(
                    "array order mismatch: expected {expected_name}, found {name}"
                ))
                .into());
            }
            if shape != view.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape-config disagreement for {name}: config {:?}, file {:?}",
                    view.shape(),
                    shape
                ))
                .into());
            }
            for (dst, src) in view.iter_mut().zip(data) {
                *dst = src;
            }
        }
        drop(state);
        Ok(Checkpoint {
            model,
            epoch: header.epoch,
            val_loss: header.val_loss,
            loss_config_id: header.loss_config_id,
            seed: header.seed,
        })
    }
}

enum LoadError {
    Io(std::io::Error),
    Semantic(Error),
}

impl From<std::io::Error> for LoadError {
    fn from(e: std::io::Error) -> Self {
        LoadError::Io(e)
    }
}

impl From<Error> for LoadError {
    fn from(e: Error) -> Self {
        LoadError::Semantic(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use ndarray::Array4;

    fn sample_checkpoint() -> Checkpoint {
        Checkpoint {
            model: UNet::<f32>::init(&ModelConfig::tiny(2, 4), 42).unwrap(),
            epoch: 7,
            val_loss: 0.123456789,
            loss_config_id: 4,
            seed: 42,
        }
    }

    #[test]
    fn round_trip_preserves_predictions_and_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.ckpt");
        let ckpt = sample_checkpoint();
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.epoch, 7);
        assert_eq!(loaded.val_loss, 0.123456789);
        assert_eq!(loaded.loss_config_id, 4);
        assert_eq!(loaded.seed, 42);

        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
        let x = Array4::from_shape_fn((2, 1, 16, 16), |_| rand::Rng::gen_range(&mut rng, 0.0..1.0f32));
        let a = ckpt.model.forward(&x).unwrap();
        let b = loaded.model.forward(&x).unwrap();
        for (va, vb) in a.iter().zip(b.iter()) {
            assert!((va - vb).abs() < 1e-6);
        }
    }

    #[test]
    fn version_mismatch_is_a_versioned_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.ckpt");
        sample_checkpoint().save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99; // bump the little-endian version field
        std::fs::write(&path, &bytes).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("format_version mismatch"));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.ckpt");
        sample_checkpoint().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn shape_config_disagreement_is_rejected() {
        // write with one config, doctor the header to claim another
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.ckpt");
        let ckpt = sample_checkpoint();
        ckpt.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let json_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let mut header: serde_json::Value =
            serde_json::from_slice(&bytes[16..16 + json_len]).unwrap();
        header["config"]["encoder_channels"] = serde_json::json!([8, 16]);
        let new_json = serde_json::to_vec(&header).unwrap();
        let mut doctored = Vec::new();
        doctored.extend_from_slice(&bytes[..12]);
        doctored.extend_from_slice(&(new_json.len() as u32).to_le_bytes());
        doctored.extend_from_slice(&new_json);
        doctored.extend_from_slice(&bytes[16 + json_len..]);
        std::fs::write(&path, &doctored).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(
            err.to_string().contains("shape-config disagreement")
                || err.to_string().contains("expects"),
            "unexpected error: {err}"
        );
    }
}
