//! Single-file model container.
//!
//! ```text
//! "SCLPT1" | u32 version | u64 meta_len | meta (JSON) | u32 n_tensors
//! per tensor: u32 name_len | name | u32 rank | u32 dims[rank] | f32 payload
//! ```
//!
//! All integers and floats are little-endian. Encoder tensors are prefixed
//! `encoder.`, flow tensors `maf.`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::PreprocessorModel;
use crate::dccl::{CentroidPair, DcclConfig};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::infer::ThresholdSet;
use crate::maf::{MafConfig, MafParams};
use crate::ndiff::{ParamStore, Tensor};

pub const MAGIC: &[u8; 6] = b"SCLPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelContainer {
    pub seed: u64,
    /// Free-form configuration echo, e.g. the run config text.
    pub config_text: String,
    pub preprocessor: Option<PreprocessorModel>,
    pub encoder: Option<EncoderParams>,
    pub dccl: Option<DcclConfig>,
    pub maf: Option<MafParams>,
    pub thresholds: Option<ThresholdSet>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    seed: u64,
    config_text: String,
    preprocessor: Option<PreprocessorModel>,
    encoder_config: Option<EncoderConfig>,
    centroids: Option<CentroidPair>,
    dccl: Option<DcclConfig>,
    maf_config: Option<MafConfig>,
    thresholds: Option<ThresholdSet>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Container(format!(
                "truncated: needed {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Container(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn write_store(out: &mut Vec<u8>, prefix: &str, store: &ParamStore) -> Result<()> {
    for (name, p) in store.iter() {
        let full = format!("{prefix}{name}");
        put_u32(out, full.len())?;
        out.extend_from_slice(full.as_bytes());
        put_u32(out, p.value.rank())?;
        for &d in p.value.shape() {
            put_u32(out, d)?;
        }
        for &v in p.value.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(())
}

/// Overwrites the values of `store` from `tensors`, consuming matched entries.
fn fill_store(store: &mut ParamStore, prefix: &str, tensors: &mut Vec<(String, Tensor)>) -> Result<()> {
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let full = format!("{prefix}{name}");
        let at = tensors
            .iter()
            .position(|(n, _)| *n == full)
            .ok_or_else(|| Error::Container(format!("tensor {full} missing")))?;
        let (_, t) = tensors.swap_remove(at);
        let p = store.get_mut(&name).unwrap();
        if p.value.shape() != t.shape() {
            return Err(Error::Container(format!(
                "tensor {full} has shape {:?}, model expects {:?}",
                t.shape(),
                p.value.shape()
            )));
        }
        p.value.data_mut().copy_from_slice(t.data());
    }
    Ok(())
}

impl ModelContainer {
    pub fn require_preprocessor(&self) -> Result<&PreprocessorModel> {
        self.preprocessor.as_ref().ok_or(Error::MissingComponent("preprocessor"))
    }

    pub fn require_encoder(&self) -> Result<&EncoderParams> {
        self.encoder.as_ref().ok_or(Error::MissingComponent("encoder"))
    }

    pub fn require_centroids(&self) -> Result<&CentroidPair> {
        self.require_encoder()?
            .centroids
            .as_ref()
            .ok_or(Error::MissingComponent("centroids"))
    }

    pub fn require_maf(&self) -> Result<&MafParams> {
        self.maf.as_ref().ok_or(Error::MissingComponent("flow"))
    }

    pub fn require_thresholds(&self) -> Result<&ThresholdSet> {
        self.thresholds.as_ref().ok_or(Error::MissingComponent("thresholds"))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Metadata {
            seed: self.seed,
            config_text: self.config_text.clone(),
            preprocessor: self.preprocessor.clone(),
            encoder_config: self.encoder.as_ref().map(|e| e.config.clone()),
            centroids: self.encoder.as_ref().and_then(|e| e.centroids.clone()),
            dccl: self.dccl,
            maf_config: self.maf.as_ref().map(|m| m.config.clone()),
            thresholds: self.thresholds.clone(),
        };
        let json = serde_json::to_vec(&meta).map_err(|e| Error::Container(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let n = self.encoder.as_ref().map_or(0, |e| e.store.len()) + self.maf.as_ref().map_or(0, |m| m.store.len());
        put_u32(&mut out, n)?;
        if let Some(e) = &self.encoder {
            write_store(&mut out, "encoder.", &e.store)?;
        }
        if let Some(m) = &self.maf {
            write_store(&mut out, "maf.", &m.store)?;
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
            return Err(Error::Container("bad magic: not a sculpt model file".into()));
        }
        r.pos = MAGIC.len();
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Container(format!(
                "version mismatch: file has format {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let meta_len = r.u64("metadata length")? as usize;
        let meta: Metadata = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| Error::Container(format!("metadata: {e}")))?;

        let count = r.u32("tensor count")?;
        let mut tensors: Vec<(String, Tensor)> = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = r.u32("name length")? as usize;
            let name = String::from_utf8(r.take(len, "tensor name")?.to_vec())
                .map_err(|_| Error::Container("tensor name is not UTF-8".into()))?;
            if tensors.iter().any(|(n, _)| *n == name) {
                return Err(Error::Container(format!("duplicate tensor {name}")));
            }
            let rank = r.u32("rank")? as usize;
            let dims = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let bytes = r.take(n * 4, &format!("payload of {name}"))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            let t = Tensor::new(&dims, data).map_err(|e| Error::Container(format!("{name}: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != buf.len() {
            return Err(Error::Container(format!("{} trailing bytes", buf.len() - r.pos)));
        }

        let encoder = match meta.encoder_config {
            Some(cfg) => {
                let mut e = EncoderParams::init(cfg, 0)?;
                fill_store(&mut e.store, "encoder.", &mut tensors)?;
                e.centroids = meta.centroids;
                Some(e)
            }
            None => None,
        };
        let maf = match meta.maf_config {
            Some(cfg) => {
                let mut m = MafParams::init(cfg, 0)?;
                fill_store(&mut m.store, "maf.", &mut tensors)?;
                Some(m)
            }
            None => None,
        };
        if let Some((name, _)) = tensors.first() {
            return Err(Error::Container(format!("unexpected tensor {name}")));
        }
        Ok(ModelContainer {
            seed: meta.seed,
            config_text: meta.config_text,
            preprocessor: meta.preprocessor,
            encoder,
            dccl: meta.dccl,
            maf,
            thresholds: meta.thresholds,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf).map_err(|e| match e {
            Error::Container(m) => Error::Container(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::calibrate_thresholds;

    fn sample() -> ModelContainer {
        let mut enc = EncoderParams::init(
            EncoderConfig {
                input_dim: 11,
                cnn_channels: vec![4, 4, 4, 2, 2],
                d_model: 8,
                layers: 1,
                heads: 2,
                ffn_dim: 8,
                head_hidden: 8,
                latent_dim: 4,
                ..EncoderConfig::default()
            },
            3,
        )
        .unwrap();
        enc.store.round_to_f32();
        enc.centroids = Some(CentroidPair { c_benign: vec![0.1, 0.2, 0.3, 1.0 / 3.0], c_anomaly: vec![5.0; 4] });
        let mut maf = MafParams::init(MafConfig { dim: 4, n_layers: 2, hidden: 8, made_hidden_layers: 2 }, 4).unwrap();
        maf.store.round_to_f32();
        ModelContainer {
            seed: 42,
            config_text: "seed=42\n".into(),
            preprocessor: None,
            encoder: Some(enc),
            dccl: Some(DcclConfig::default()),
            maf: Some(maf),
            thresholds: Some(calibrate_thresholds(&[0.1, 0.7, 1.0 / 7.0], &[99, 95]).unwrap()),
        }
    }

    #[test]
    fn round_trip_is_exact_and_stable() {
        let m = sample();
        let bytes = m.to_bytes().unwrap();
        let back = ModelContainer::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes().unwrap(), bytes);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.sclpt");
        m.save(&p).unwrap();
        assert_eq!(ModelContainer::load(&p).unwrap(), m);
    }

    #[test]
    fn partial_containers() {
        let m = ModelContainer { seed: 7, ..ModelContainer::default() };
        let back = ModelContainer::from_bytes(&m.to_bytes().unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(matches!(back.require_encoder(), Err(Error::MissingComponent("encoder"))));
        assert!(back.require_maf().is_err());
    }

    #[test]
    fn distinct_corruption_errors() {
        let bytes = sample().to_bytes().unwrap();
        let msg = |b: &[u8]| ModelContainer::from_bytes(b).unwrap_err().to_string();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(msg(&bad).contains("bad magic"));

        let mut bad = bytes.clone();
        bad[6] = 9;
        assert!(msg(&bad).contains("version mismatch"));

        assert!(msg(&bytes[..bytes.len() - 3]).contains("truncated"));
        assert!(msg(&bytes[..20]).contains("truncated"));

        let mut bad = bytes.clone();
        bad.push(0);
        assert!(msg(&bad).contains("trailing"));
    }

    #[test]
    fn missing_file_names_the_path() {
        let e = ModelContainer::load("/nonexistent/model.sclpt").unwrap_err();
        assert!(e.to_string().contains("/nonexistent/model.sclpt"));
    }
}
