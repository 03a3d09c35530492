//! Binary model blobs.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      "NSLF"
//! version    u32
//! kind       u8        0 = nslf_sh, 1 = hg
//! grid       u32 × 5   levels, features, log2 table size, base res, max res
//! sh_degree  u32
//! nslf_sh:   u32 × 4   latent channels, head width, head layers, hyper hidden
//! hg:        u32 × 2   decoder width, decoder layers
//! params     f32 × N   every parameter tensor in declaration order
//! ```

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AnyModel, HgConfig, HgModel, ModelConfig, NslfConfig, NslfModel};
use crate::encoding::HashGridConfig;
use crate::numerics::Parameters;
use crate::{Error, Real, Result};

pub const MODEL_BLOB_MAGIC: &[u8; 4] = b"NSLF";
pub const MODEL_BLOB_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn write_model_blob<T: Real, W: Write>(model: &AnyModel<T>, mut out: W) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * model.param_count());
    buf.extend_from_slice(MODEL_BLOB_MAGIC);
    buf.extend_from_slice(&MODEL_BLOB_VERSION.to_le_bytes());
    let config = model.config();
    buf.push(config.kind().tag());
    let g = config.grid();
    put_u32(&mut buf, g.levels);
    put_u32(&mut buf, g.features);
    put_u32(&mut buf, g.log2_table_size as usize);
    put_u32(&mut buf, g.base_resolution as usize);
    put_u32(&mut buf, g.max_resolution as usize);
    match config {
        ModelConfig::Nslf(c) => {
            put_u32(&mut buf, c.sh_degree);
            put_u32(&mut buf, c.latent_channels);
            put_u32(&mut buf, c.head_width);
            put_u32(&mut buf, c.head_layers);
            put_u32(&mut buf, c.hyper_hidden);
        }
        ModelConfig::Hg(c) => {
            put_u32(&mut buf, c.sh_degree);
            put_u32(&mut buf, c.width);
            put_u32(&mut buf, c.layers);
        }
    }
    for tensor in model.params() {
        for &v in tensor {
            buf.extend_from_slice(&v.to_le_f32());
        }
    }
    out.write_all(&buf)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::Format("model blob is truncated".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

pub fn read_model_blob<T: Real, R: Read>(mut input: R) -> Result<AnyModel<T>> {
    let mut data = Vec::new();
    input
        .read_to_end(&mut data)
        .map_err(|e| Error::Format(format!("reading model blob: {e}")))?;
    let mut cur = Cursor {
        data: &data,
        pos: 0,
    };
    if cur.take(4)? != MODEL_BLOB_MAGIC {
        return Err(Error::Format("bad model blob magic".into()));
    }
    let version = cur.u32()?;
    if version != MODEL_BLOB_VERSION as usize {
        return Err(Error::Format(format!(
            "unsupported model blob version {version}"
        )));
    }
    let kind = cur.take(1)?[0];
    let grid = HashGridConfig {
        levels: cur.u32()?,
        features: cur.u32()?,
        log2_table_size: cur.u32()? as u32,
        base_resolution: cur.u32()? as u32,
        max_resolution: cur.u32()? as u32,
    };
    let config = match kind {
        0 => ModelConfig::Nslf(NslfConfig {
            grid,
            sh_degree: cur.u32()?,
            latent_channels: cur.u32()?,
            head_width: cur.u32()?,
            head_layers: cur.u32()?,
            hyper_hidden: cur.u32()?,
        }),
        1 => ModelConfig::Hg(HgConfig {
            grid,
            sh_degree: cur.u32()?,
            width: cur.u32()?,
            layers: cur.u32()?,
        }),
        other => return Err(Error::Format(format!("unknown model kind tag {other}"))),
    };
    let mut model: AnyModel<T> = match config {
        ModelConfig::Nslf(c) => {
            AnyModel::Nslf(NslfModel::new(c, &mut ChaCha8Rng::seed_from_u64(0))?)
        }
        ModelConfig::Hg(c) => AnyModel::Hg(HgModel::new(c, &mut ChaCha8Rng::seed_from_u64(0))?),
    };
    for tensor in model.params_mut() {
        for v in tensor.iter_mut() {
            let raw = f32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
            *v = T::lit(raw as f64);
        }
    }
    if cur.pos != data.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after model parameters",
            data.len() - cur.pos
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> HashGridConfig {
        HashGridConfig {
            levels: 2,
            features: 2,
            log2_table_size: 6,
            base_resolution: 2,
            max_resolution: 4,
        }
    }

    #[test]
    fn round_trip_preserves_f32_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for config in [
            ModelConfig::Nslf(NslfConfig {
                grid: small_grid(),
                ..NslfConfig::default()
            }),
            ModelConfig::Hg(HgConfig {
                grid: small_grid(),
                ..HgConfig::default()
            }),
        ] {
            let model: AnyModel<f32> = config.build(&mut rng).unwrap();
            let mut bytes = Vec::new();
            write_model_blob(&model, &mut bytes).unwrap();
            assert_eq!(&bytes[..4], b"NSLF");
            let back: AnyModel<f32> = read_model_blob(bytes.as_slice()).unwrap();
            assert_eq!(back, model);
        }
    }

    #[test]
    fn corrupt_blobs_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model: AnyModel<f32> = ModelConfig::Hg(HgConfig {
            grid: small_grid(),
            ..HgConfig::default()
        })
        .build(&mut rng)
        .unwrap();
        let mut bytes = Vec::new();
        write_model_blob(&model, &mut bytes).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_model_blob::<f32, _>(bad.as_slice()),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            read_model_blob::<f32, _>(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            read_model_blob::<f32, _>(long.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
