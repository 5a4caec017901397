//! Binary checkpoint: `"XMCK"`, version `u16`, layer count `u32`, per-layer
//! `(in, out)` as `u32` pairs, then every layer's weight and bias as
//! little-endian f64, then a frozen flag byte, then an optional optimiser
//! block (presence byte; lr, momentum, weight decay as f64; step count `u64`;
//! velocities in parameter order).

use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::encoder::{EncoderModel, Linear};
use super::optim::OptimizerState;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"XMCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: EncoderModel,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.write_u16::<LittleEndian>(CHECKPOINT_VERSION).unwrap();
        let layers = self.model.layers();
        out.write_u32::<LittleEndian>(layers.len() as u32).unwrap();
        for l in layers {
            out.write_u32::<LittleEndian>(l.in_dim() as u32).unwrap();
            out.write_u32::<LittleEndian>(l.out_dim() as u32).unwrap();
        }
        for p in self.model.params() {
            for v in p.data() {
                out.write_f64::<LittleEndian>(*v).unwrap();
            }
        }
        out.push(self.model.is_frozen() as u8);
        match &self.optimizer {
            None => out.push(0),
            Some(st) => {
                out.push(1);
                for v in [st.lr, st.momentum, st.weight_decay] {
                    out.write_f64::<LittleEndian>(v).unwrap();
                }
                out.write_u64::<LittleEndian>(st.step_count).unwrap();
                for buf in &st.velocity {
                    for v in buf {
                        out.write_f64::<LittleEndian>(*v).unwrap();
                    }
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut rd = bytes;
        let e = |err: std::io::Error| err.to_string();
        let mut magic = [0u8; 4];
        std::io::Read::read_exact(&mut rd, &mut magic).map_err(e)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err("bad magic".into());
        }
        let version = rd.read_u16::<LittleEndian>().map_err(e)?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let n = rd.read_u32::<LittleEndian>().map_err(e)? as usize;
        if n == 0 || n > 1024 {
            return Err(format!("implausible layer count {n}"));
        }
        let mut dims = Vec::with_capacity(n);
        for _ in 0..n {
            let i = rd.read_u32::<LittleEndian>().map_err(e)? as usize;
            let o = rd.read_u32::<LittleEndian>().map_err(e)? as usize;
            if i == 0 || o == 0 {
                return Err("zero layer dimension".into());
            }
            dims.push((i, o));
        }
        let read_vec = |len: usize, rd: &mut &[u8]| -> std::result::Result<Vec<f64>, String> {
            if rd.len() < len * 8 {
                return Err("truncated parameter block".into());
            }
            let mut v = vec![0.0; len];
            rd.read_f64_into::<LittleEndian>(&mut v).map_err(e)?;
            Ok(v)
        };
        let mut layers = Vec::with_capacity(n);
        for &(i, o) in &dims {
            let w = read_vec(i * o, &mut rd)?;
            let b = read_vec(o, &mut rd)?;
            layers.push(Linear {
                weight: Tensor::new(vec![i, o], w).map_err(|x| x.to_string())?,
                bias: Tensor::new(vec![o], b).map_err(|x| x.to_string())?,
            });
        }
        let mut model = EncoderModel::from_layers(layers).map_err(|x| x.to_string())?;
        let frozen = rd.read_u8().map_err(e)?;
        model.set_frozen_flag(frozen == 1);
        let optimizer = match rd.read_u8().map_err(e)? {
            0 => None,
            1 => {
                let lr = rd.read_f64::<LittleEndian>().map_err(e)?;
                let momentum = rd.read_f64::<LittleEndian>().map_err(e)?;
                let weight_decay = rd.read_f64::<LittleEndian>().map_err(e)?;
                let step_count = rd.read_u64::<LittleEndian>().map_err(e)?;
                let mut velocity = Vec::new();
                for p in model.params() {
                    velocity.push(read_vec(p.numel(), &mut rd)?);
                }
                Some(OptimizerState {
                    velocity,
                    lr,
                    momentum,
                    weight_decay,
                    step_count,
                })
            }
            f => return Err(format!("bad optimizer flag {f}")),
        };
        if !rd.is_empty() {
            return Err("trailing bytes".into());
        }
        Ok(Self { model, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }
}
