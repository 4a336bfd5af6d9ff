//! BFENC1 model files.
//!
//! ```text
//! "BFENC1" u32:version
//! u32:arch u32:channels u32:classes u32:channel_hidden(0=none)
//! u32:n_common u32*n_common u32:output(0=none) u8:normalize f64:forget_bias
//! u32:input_len
//! u32:n_tensors { u32:name_len name u32:rank u32*rank f64*prod(dims) }*
//! ```
//! Everything little-endian.

use std::fs;
use std::path::Path;

use super::{Architecture, EncoderConfig, EncoderError, EncoderLayout, EncoderModel, EncoderParams, Result};
use crate::codec::{ByteReader, ByteWriter, DecodeError};

pub const MODEL_MAGIC: &[u8; 6] = b"BFENC1";
pub const MODEL_FORMAT_VERSION: u32 = 1;

fn fmt_err(e: DecodeError) -> EncoderError {
    EncoderError::Format(e.to_string())
}

impl EncoderModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = &self.config;
        let layout = &cfg.layout;
        let mut w = ByteWriter::new();
        w.bytes(MODEL_MAGIC)
            .u32(MODEL_FORMAT_VERSION)
            .u32(cfg.architecture().code())
            .usize32(cfg.channel_count)
            .usize32(cfg.class_count)
            .usize32(layout.channel_hidden.unwrap_or(0))
            .usize32(layout.common.len());
        for &h in &layout.common {
            w.usize32(h);
        }
        w.usize32(layout.output.unwrap_or(0))
            .u8(u8::from(cfg.normalize))
            .f64(cfg.forget_bias)
            .usize32(self.input_len);
        let tensors = self.params.tensors();
        w.usize32(tensors.len());
        for t in tensors {
            w.string(&t.name).usize32(t.dims.len());
            for &d in &t.dims {
                w.usize32(d);
            }
            w.f64s(t.values);
        }
        w.into_inner()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        r.expect_magic(MODEL_MAGIC).map_err(fmt_err)?;
        let version = r.u32().map_err(fmt_err)?;
        if version != MODEL_FORMAT_VERSION {
            return Err(EncoderError::Format(format!("unsupported version {version}")));
        }
        let model = (|| -> std::result::Result<EncoderModel, DecodeError> {
            let arch = r.u32()?;
            let channels = r.usize32()?;
            let classes = r.usize32()?;
            let channel_hidden = r.usize32()?;
            let n_common = r.usize32()?;
            if n_common > 1024 {
                return Err(r.err("implausible layer count"));
            }
            let common = (0..n_common).map(|_| r.usize32()).collect::<std::result::Result<Vec<_>, _>>()?;
            let output = r.usize32()?;
            let normalize = r.u8()? != 0;
            let forget_bias = r.f64()?;
            let input_len = r.usize32()?;
            let layout = EncoderLayout {
                channel_hidden: (channel_hidden != 0).then_some(channel_hidden),
                common,
                output: (output != 0).then_some(output),
            };
            let arch = Architecture::from_code(arch).ok_or_else(|| r.err("unknown architecture"))?;
            if arch != layout.architecture() {
                return Err(r.err("architecture tag disagrees with layer sizes"));
            }
            let config = EncoderConfig {
                layout,
                channel_count: channels,
                class_count: classes,
                normalize,
                forget_bias,
            };
            config.check().map_err(|e| r.err(e.to_string()))?;
            let mut params = EncoderParams::zeros(&config);
            let expected: Vec<(String, Vec<usize>)> = params
                .tensors()
                .iter()
                .map(|t| (t.name.clone(), t.dims.clone()))
                .collect();
            let count = r.usize32()?;
            if count != expected.len() {
                return Err(r.err(format!("expected {} tensors, found {count}", expected.len())));
            }
            let mut slots = params.tensors_mut();
            for ((name, dims), slot) in expected.iter().zip(slots.iter_mut()) {
                let got = r.string()?;
                if &got != name {
                    return Err(r.err(format!("expected tensor {name}, found {got}")));
                }
                let rank = r.usize32()?;
                let got_dims = (0..rank).map(|_| r.usize32()).collect::<std::result::Result<Vec<_>, _>>()?;
                if &got_dims != dims {
                    return Err(r.err(format!("tensor {name}: dims {got_dims:?}, expected {dims:?}")));
                }
                let values = r.f64s(slot.len())?;
                slot.copy_from_slice(&values);
            }
            drop(slots);
            if r.remaining() != 0 {
                return Err(r.err("trailing bytes"));
            }
            Ok(EncoderModel {
                config,
                params,
                input_len,
            })
        })()
        .map_err(fmt_err)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|source| EncoderError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|source| EncoderError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&buf)
    }
}
