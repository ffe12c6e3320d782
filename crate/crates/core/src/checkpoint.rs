//! Binary checkpoints of parameters and optimizer velocity.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "SSIMNETC" | u32 version | 32-byte config fingerprint
//! u64 epoch | f64 best validation accuracy | u64 tensor count
//! per tensor: u64 name length, UTF-8 name, u64 rank, u64 dims[rank], f64 data[..]
//! ```
//!
//! Parameter tensors are named as in [`Network::params`]; the velocity of a
//! parameter `p` is stored as `p.velocity`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Network;
use crate::optim::OptimizerState;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SSIMNETC";
const VERSION: u32 = 1;
const VELOCITY_SUFFIX: &str = ".velocity";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Hex fingerprint of the config that produced the weights.
    pub fingerprint: String,
    /// Number of completed epochs.
    pub epoch: u64,
    pub best_val: f64,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn capture(
        model: &Network,
        state: &OptimizerState,
        fingerprint: &str,
        epoch: u64,
        best_val: f64,
    ) -> Result<Self> {
        let params = model.params();
        if params.len() != state.velocity.len() {
            return Err(Error::State(format!(
                "{} parameters but {} velocity buffers",
                params.len(),
                state.velocity.len()
            )));
        }
        let mut tensors: Vec<(String, Tensor)> =
            params.iter().map(|(n, p)| (n.clone(), p.value.clone())).collect();
        tensors.extend(
            params
                .iter()
                .zip(&state.velocity)
                .map(|((n, _), v)| (format!("{n}{VELOCITY_SUFFIX}"), v.clone())),
        );
        Ok(Self {
            fingerprint: fingerprint.to_string(),
            epoch,
            best_val,
            tensors,
        })
    }

    fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies stored values into `model` and, if given, `state`. Every
    /// parameter must be present with a matching shape.
    pub fn restore(&self, model: &mut Network, state: Option<&mut OptimizerState>) -> Result<()> {
        let mut velocities = Vec::new();
        for (name, param) in model.params_mut() {
            let stored = self
                .tensor(&name)
                .ok_or_else(|| Error::State(format!("checkpoint lacks parameter {name}")))?;
            if stored.shape() != param.value.shape() {
                return Err(Error::Shape(format!(
                    "{name}: checkpoint shape {:?}, model shape {:?}",
                    stored.shape(),
                    param.value.shape()
                )));
            }
            param.value = stored.clone();
            param.zero_grad();
            if state.is_some() {
                let v = self
                    .tensor(&format!("{name}{VELOCITY_SUFFIX}"))
                    .ok_or_else(|| Error::State(format!("checkpoint lacks velocity of {name}")))?;
                velocities.push(v.clone());
            }
        }
        if let Some(state) = state {
            state.velocity = velocities;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let fp = hex::decode(&self.fingerprint)
            .ok()
            .filter(|b| b.len() == 32)
            .ok_or_else(|| Error::State(format!("fingerprint {:?} is not 32 hex bytes", self.fingerprint)))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&fp);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.best_val.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let fingerprint = hex::encode(r.take(32)?);
        let epoch = r.u64()?;
        let best_val = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let count = r.u64()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = r.len()?;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| "tensor name is not UTF-8")?;
            let rank = r.len()?;
            let shape = (0..rank).map(|_| r.len()).collect::<std::result::Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or("tensor size overflows")?;
            let raw = r.take(n.checked_mul(8).ok_or("tensor size overflows")?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| e.to_string())?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Self {
            fingerprint,
            epoch,
            best_val,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::Format {
            path: path.to_path_buf(),
            msg,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> std::result::Result<usize, String> {
        usize::try_from(self.u64()?).map_err(|_| "length does not fit in memory".to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::LayerSpec;
    use crate::model::ModelSpec;
    use crate::ssim::SsimConstants;

    fn net(seed: u64) -> Network {
        let spec = ModelSpec {
            input: (1, 6, 6),
            layers: vec![
                LayerSpec::ssim(2, 3, 1, 1),
                LayerSpec::conv(2, 3, 1, 1),
                LayerSpec::fc(10),
                LayerSpec::SoftmaxXent,
            ],
        };
        Network::new(&spec, SsimConstants::default(), seed).unwrap()
    }

    const FP: &str = "00112233445566778899aabbccddeeff00112233445566778899aabbccddeeff";

    #[test]
    fn round_trip_restores_exact_values() {
        let a = net(1);
        let mut state = OptimizerState::new(&a);
        state.velocity[0] = Tensor::randn(state.velocity[0].shape(), 5).unwrap();
        let ck = Checkpoint::capture(&a, &state, FP, 7, 0.25).unwrap();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let mut b = net(2);
        let mut sb = OptimizerState::new(&b);
        back.restore(&mut b, Some(&mut sb)).unwrap();
        for ((_, pa), (_, pb)) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.value, pb.value);
        }
        assert_eq!(sb.velocity, state.velocity);
    }

    #[test]
    fn corrupt_bytes_are_rejected() {
        let a = net(1);
        let ck = Checkpoint::capture(&a, &OptimizerState::new(&a), FP, 1, 0.0).unwrap();
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }

    #[test]
    fn shape_mismatch_is_refused() {
        let a = net(1);
        let mut ck = Checkpoint::capture(&a, &OptimizerState::new(&a), FP, 1, 0.0).unwrap();
        ck.tensors[0].1 = Tensor::zeros(&[3, 3]).unwrap();
        let mut b = net(1);
        assert!(matches!(ck.restore(&mut b, None), Err(Error::Shape(_))));
    }
}
