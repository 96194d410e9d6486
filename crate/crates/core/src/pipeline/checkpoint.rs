use std::fs;
use std::path::Path;

use super::config::TrainConfig;
use crate::codec::ByteReader;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::metric::MetricMatrix;
use crate::model::ModelParameters;

const MAGIC: &[u8; 4] = b"BGCP";
pub const CHECKPOINT_VERSION: u16 = 1;

const SECTIONS: [&str; 5] = ["config", "params", "metric", "history", "epoch"];

/// Trained parameters, the frozen metric and the run that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParameters<f64>,
    /// Metric from the last completed batch.
    pub metric: MetricMatrix<f64>,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Per-epoch means of the loss terms.
    pub history: Vec<LossBreakdown>,
}

fn push_section(out: &mut Vec<u8>, name: &str, payload: &[u8]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(SECTIONS.len() as u32).to_le_bytes());

        push_section(&mut out, "config", self.config.to_text().as_bytes());

        let named = self.params.named_tensors();
        let mut p = Vec::new();
        p.extend_from_slice(&(named.len() as u32).to_le_bytes());
        for (name, t) in named {
            p.extend_from_slice(&(name.len() as u16).to_le_bytes());
            p.extend_from_slice(name.as_bytes());
            let (r, c) = t.dims();
            p.extend_from_slice(&(r as u32).to_le_bytes());
            p.extend_from_slice(&(c as u32).to_le_bytes());
            for v in t.data() {
                p.extend_from_slice(&v.to_le_bytes());
            }
        }
        push_section(&mut out, "params", &p);

        push_section(&mut out, "metric", &self.metric.to_bytes());

        let mut h = Vec::new();
        h.extend_from_slice(&(self.history.len() as u64).to_le_bytes());
        for l in &self.history {
            for v in [l.l_wgan, l.l_vae, l.l_mse, l.l_m, l.total] {
                h.extend_from_slice(&v.to_le_bytes());
            }
        }
        push_section(&mut out, "history", &h);

        push_section(&mut out, "epoch", &(self.epoch as u64).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "checkpoint");
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let count = r.u32()?;
        let mut found: [Option<&[u8]>; 5] = [None; 5];
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("section name is not UTF-8".into()))?;
            let size = r.u64()?;
            let size = r.count(size, 1)?;
            let payload = r.take(size)?;
            let slot = SECTIONS
                .iter()
                .position(|s| *s == name)
                .ok_or_else(|| Error::Format(format!("unknown section `{name}`")))?;
            if found[slot].replace(payload).is_some() {
                return Err(Error::Format(format!("duplicate section `{name}`")));
            }
        }
        r.finish()?;
        let section = |i: usize| {
            found[i].ok_or_else(|| Error::Format(format!("missing section `{}`", SECTIONS[i])))
        };

        let text = std::str::from_utf8(section(0)?)
            .map_err(|_| Error::Format("config section is not UTF-8".into()))?;
        let config = TrainConfig::from_text(text)?;

        let mut p = ByteReader::new(section(1)?, "params section");
        let n = p.u32()?;
        let n = p.count(n as u64, 10)?;
        let mut named = Vec::with_capacity(n);
        for _ in 0..n {
            let len = p.u16()? as usize;
            let name = String::from_utf8(p.take(len)?.to_vec())
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let rows = p.u32()? as usize;
            let cols = p.u32()? as usize;
            let cells = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Format(format!("parameter `{name}` size overflow")))?;
            let data = p.f64s(cells)?;
            named.push((name, Tensor::matrix(rows, cols, data)?));
        }
        p.finish()?;
        let params = ModelParameters::from_named(config.model, named)?;

        let metric = MetricMatrix::from_bytes(section(2)?)?;
        if metric.dim() != config.model.k_proj {
            return Err(Error::Dimension(format!(
                "stored metric is {}x{0} but k_proj is {}",
                metric.dim(),
                config.model.k_proj
            )));
        }

        let mut h = ByteReader::new(section(3)?, "history section");
        let n = h.u64()?;
        let n = h.count(n, 40)?;
        let mut history = Vec::with_capacity(n);
        for _ in 0..n {
            history.push(LossBreakdown {
                l_wgan: h.f64()?,
                l_vae: h.f64()?,
                l_mse: h.f64()?,
                l_m: h.f64()?,
                total: h.f64()?,
            });
        }
        h.finish()?;

        let mut e = ByteReader::new(section(4)?, "epoch section");
        let epoch = e.u64()? as usize;
        e.finish()?;

        Ok(Self {
            params,
            metric,
            config,
            epoch,
            history,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
