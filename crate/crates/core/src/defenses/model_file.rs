//! Versioned binary model files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                                              |
//! |--------------|------------------------------------------------------|
//! | 8            | magic `MIAMODEL`                                     |
//! | 4            | format version (`u32`, currently 1)                  |
//! | 4 + n        | metadata length (`u32`) then UTF-8 JSON metadata     |
//! | 4 + 4·L      | number of layer sizes `L` (`u32`) then the sizes     |
//! | 8 · params   | per layer: weights (`in × out`, row-major) then biases, as `f64` |
//!
//! The metadata records the defense spec, seed, epochs, per-epoch wall time,
//! split metrics and the output activation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DefenseSpec, SplitMetrics, TrainedInstance};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, MlpModel, OutputActivation};

const MAGIC: &[u8; 8] = b"MIAMODEL";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Metadata {
    spec: DefenseSpec,
    seed: u64,
    epochs_run: usize,
    steps: u64,
    per_epoch_seconds: Vec<f64>,
    train: SplitMetrics,
    reference: Option<SplitMetrics>,
    test: Option<SplitMetrics>,
    output: OutputActivation,
}

pub fn encode(instance: &TrainedInstance) -> Result<Vec<u8>> {
    let meta = Metadata {
        spec: instance.spec.clone(),
        seed: instance.seed,
        epochs_run: instance.epochs_run,
        steps: instance.steps,
        per_epoch_seconds: instance.per_epoch_seconds.clone(),
        train: instance.train,
        reference: instance.reference,
        test: instance.test,
        output: instance.model.output_activation(),
    };
    let json = serde_json::to_vec(&meta).map_err(|e| Error::ModelFormat(e.to_string()))?;
    let model = &instance.model;
    let mut out = Vec::with_capacity(64 + json.len() + 8 * model.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32_len(json.len())?.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&u32_len(model.layer_sizes().len())?.to_le_bytes());
    for &s in model.layer_sizes() {
        out.extend_from_slice(&u32_len(s)?.to_le_bytes());
    }
    for (w, b) in model.weights().iter().zip(model.biases()) {
        for v in w.as_slice().iter().chain(b) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::ModelFormat(format!("length {n} exceeds u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::ModelFormat("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::ModelFormat("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<TrainedInstance> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::ModelFormat("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let meta_len = r.u32()?;
    let meta: Metadata = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::ModelFormat(format!("metadata: {e}")))?;
    let count = r.u32()?;
    if count < 2 {
        return Err(Error::ModelFormat(format!("{count} layer sizes")));
    }
    let sizes = (0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let mut weights = Vec::with_capacity(count - 1);
    let mut biases = Vec::with_capacity(count - 1);
    for pair in sizes.windows(2) {
        let w = r.f64s(pair[0] * pair[1])?;
        weights.push(Matrix::from_vec(pair[0], pair[1], w)?);
        biases.push(r.f64s(pair[1])?);
    }
    if r.pos != bytes.len() {
        return Err(Error::ModelFormat(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let model = MlpModel::from_parts(sizes, weights, biases, meta.output)
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
    Ok(TrainedInstance {
        model,
        spec: meta.spec,
        seed: meta.seed,
        epochs_run: meta.epochs_run,
        steps: meta.steps,
        per_epoch_seconds: meta.per_epoch_seconds,
        train: meta.train,
        reference: meta.reference,
        test: meta.test,
    })
}

pub fn write_model_file(path: &Path, instance: &TrainedInstance) -> Result<()> {
    fs::write(path, encode(instance)?).map_err(|e| Error::io(path, e))
}

pub fn read_model_file(path: &Path) -> Result<TrainedInstance> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::super::test_util::toy;
    use super::super::*;
    use super::*;

    fn instance() -> TrainedInstance {
        let d = toy(1, 6);
        let mut spec = DefenseSpec::werm(0.25);
        spec.epochs = 1;
        spec.hidden_layers = vec![5];
        train(&spec, &d, &d, Some(&d), 2).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let inst = instance();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_model_file(f.path(), &inst).unwrap();
        let back = read_model_file(f.path()).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = encode(&instance()).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::ModelFormat(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::ModelFormat(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(decode(&extra), Err(Error::ModelFormat(_))));
    }
}
