//! Self-describing binary model checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "DOAM" | version u16 | arch tag u8
//! gcc_dim u32 | vis_dim u32 | outputs u32 | weight_hidden u32 | n_hidden u32 | widths u32 x n_hidden
//! bn_momentum f64 | bn_eps f64
//! parameter tensors as f64, in Model::params order
//! per hidden layer: running_mean f64 x width, running_var f64 x width
//! ```

use std::path::Path;

use super::model::{Architecture, Model, ModelConfig};
use super::{shape_err, NnError};
use crate::rng::seeded;

pub const MAGIC: &[u8; 4] = b"DOAM";
pub const VERSION: u16 = 1;

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let cfg = model.config();
    let mut out = Vec::with_capacity(64 + 8 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(cfg.arch.tag());
    let weight_hidden = if cfg.arch == Architecture::Avaw { cfg.weight_hidden } else { 0 };
    for d in [cfg.gcc_dim, cfg.vis_dim, cfg.outputs, weight_hidden, cfg.hidden.len()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &w in &cfg.hidden {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out.extend_from_slice(&cfg.bn_momentum.to_le_bytes());
    out.extend_from_slice(&cfg.bn_eps.to_le_bytes());
    for p in model.params() {
        p.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    }
    for l in &model.hidden {
        for v in l.norm.running_mean.iter().chain(&l.norm.running_var) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(NnError::Corrupt)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn fill(&mut self, dst: &mut [f64]) -> Result<(), NnError> {
        for d in dst {
            *d = self.f64()?;
        }
        Ok(())
    }
}

/// Reads only the header, returning the architecture it describes.
pub fn read_config(bytes: &[u8]) -> Result<ModelConfig, NnError> {
    read_header(&mut Reader { bytes, pos: 0 })
}

fn read_header(r: &mut Reader<'_>) -> Result<ModelConfig, NnError> {
    if r.take(4).map_err(|_| NnError::BadMagic)? != MAGIC {
        return Err(NnError::BadMagic);
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(NnError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let tag = r.take(1)?[0];
    let arch = Architecture::from_tag(tag).ok_or_else(|| shape_err(format!("unknown architecture tag {tag}")))?;
    let gcc_dim = r.u32()?;
    let vis_dim = r.u32()?;
    let outputs = r.u32()?;
    let weight_hidden = r.u32()?;
    let n_hidden = r.u32()?;
    if n_hidden > 1024 {
        return Err(NnError::Corrupt);
    }
    let hidden = (0..n_hidden).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
    let bn_momentum = r.f64()?;
    let bn_eps = r.f64()?;
    let mut cfg = ModelConfig {
        arch,
        gcc_dim,
        vis_dim,
        hidden,
        weight_hidden,
        outputs,
        bn_momentum,
        bn_eps,
    };
    if arch != Architecture::Avaw {
        cfg.weight_hidden = ModelConfig::new(arch).weight_hidden;
    }
    cfg.validate().map_err(|_| NnError::Corrupt)?;
    Ok(cfg)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model, NnError> {
    let mut r = Reader { bytes, pos: 0 };
    let cfg = read_header(&mut r)?;
    // Cheap size check before allocating anything from header dims.
    let mut model = {
        let probe_params = expected_param_count(&cfg);
        let stats: usize = cfg.hidden.iter().map(|w| 2 * w).sum();
        if bytes.len() - r.pos != 8 * (probe_params + stats) {
            return Err(NnError::Corrupt);
        }
        Model::init(cfg, &mut seeded(0))?
    };
    for p in model.params_mut() {
        r.fill(p)?;
    }
    for l in &mut model.hidden {
        r.fill(&mut l.norm.running_mean)?;
        r.fill(&mut l.norm.running_var)?;
    }
    if r.pos != bytes.len() {
        return Err(NnError::Corrupt);
    }
    Ok(model)
}

fn expected_param_count(cfg: &ModelConfig) -> usize {
    let mut n = 0;
    if cfg.arch == Architecture::Avaw {
        let i = cfg.gcc_dim + cfg.vis_dim;
        n += i * cfg.weight_hidden + cfg.weight_hidden + cfg.weight_hidden * 3 + 3;
    }
    let mut w = cfg.trunk_inputs();
    for &h in &cfg.hidden {
        n += w * h + 3 * h;
        w = h;
    }
    n + w * cfg.outputs + cfg.outputs
}

impl Model {
    /// Replaces this model's parameters with a checkpoint's. The checkpoint
    /// must describe exactly this model's configuration.
    pub fn load_state(&mut self, bytes: &[u8]) -> Result<(), NnError> {
        let cfg = read_config(bytes)?;
        if &cfg != self.config() {
            return Err(shape_err(format!(
                "checkpoint holds {} {:?}, model is {} {:?}",
                cfg.arch,
                cfg.hidden,
                self.arch(),
                self.config().hidden
            )));
        }
        *self = from_bytes(bytes)?;
        Ok(())
    }
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<(), NnError> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))
}

pub fn load(path: impl AsRef<Path>) -> Result<Model, NnError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes)
}
