//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "SFCKPT\0\0", u32 version
//! u32 len, run config as key=value text
//! u64 d_rad, u64 d_path
//! u32 count, then per tensor:
//!     u32 len, name; u8 trainable; u32 rank; u64 dims...; f64 values...
//! u32 count, then per epoch: u64 epoch; f64 train_loss; u8 has_val; f64 val
//! u8 has_baseline, then u64 n; f64 times...; f64 cumulative...
//! ```

use std::fs;
use std::path::Path;

use survfuse_core::params::ParamStore;
use survfuse_core::survival::BaselineHazard;
use survfuse_core::training::{EpochRecord, Model, ModelCheckpoint};
use survfuse_core::Tensor;

use crate::config::{ConfigError, RunConfig};

pub const MAGIC: &[u8; 8] = b"SFCKPT\0\0";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after checkpoint")]
    Trailing(usize),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint config")]
    Config(#[from] ConfigError),
    #[error("checkpoint parameters")]
    Model(#[from] survfuse_core::Error),
    #[error("cannot access {}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A trained checkpoint with the run configuration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedRun {
    pub run: RunConfig,
    pub checkpoint: ModelCheckpoint,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(CheckpointError::Truncated(self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize, CheckpointError> {
        usize::try_from(self.u64()?).map_err(|_| CheckpointError::Malformed("size overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Malformed("invalid UTF-8".into()))
    }
    fn flag(&mut self) -> Result<bool, CheckpointError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(CheckpointError::Malformed(format!("flag byte {b}"))),
        }
    }
}

pub fn encode(saved: &SavedRun) -> Vec<u8> {
    let ck = &saved.checkpoint;
    let mut w = Writer(MAGIC.to_vec());
    w.u32(VERSION);
    w.bytes(saved.run.to_text().as_bytes());
    w.u64(ck.model.d_rad() as u64);
    w.u64(ck.model.d_path() as u64);
    let params = ck.model.store.params();
    w.u32(params.len() as u32);
    for p in params {
        w.bytes(p.name.as_bytes());
        w.u8(u8::from(p.trainable));
        let dims = p.value.dims();
        w.u32(dims.len() as u32);
        for &d in dims {
            w.u64(d as u64);
        }
        for &v in p.value.data() {
            w.f64(v);
        }
    }
    w.u32(ck.history.len() as u32);
    for h in &ck.history {
        w.u64(h.epoch as u64);
        w.f64(h.train_loss);
        w.u8(u8::from(h.val_c_index.is_some()));
        w.f64(h.val_c_index.unwrap_or(0.0));
    }
    match &ck.baseline {
        None => w.u8(0),
        Some(b) => {
            w.u8(1);
            w.u64(b.event_times().len() as u64);
            for &t in b.event_times() {
                w.f64(t);
            }
            for &h in b.cumulative() {
                w.f64(h);
            }
        }
    }
    w.0
}

pub fn decode(buf: &[u8]) -> Result<SavedRun, CheckpointError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let run = RunConfig::from_text(&r.string()?)?;
    let d_rad = r.usize()?;
    let d_path = r.usize()?;

    let mut stored = ParamStore::new();
    let n_params = r.u32()?;
    for _ in 0..n_params {
        let name = r.string()?;
        let trainable = r.flag()?;
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>, _>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= buf.len() / 8)
            .ok_or_else(|| CheckpointError::Malformed(format!("tensor {name} has implausible shape {dims:?}")))?;
        let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        stored.add(name, Tensor::new(&dims, data)?, trainable);
    }
    let mut model = Model::new(&run.train, d_rad, d_path)?;
    for (fresh, loaded) in model.store.params().iter().zip(stored.params()) {
        if fresh.trainable != loaded.trainable {
            return Err(CheckpointError::Malformed(format!(
                "tensor {} trainable flag differs from the configured model",
                loaded.name
            )));
        }
    }
    model.store.load_from(&stored)?;

    let n_hist = r.u32()?;
    let mut history = Vec::with_capacity(n_hist.min(1 << 16) as usize);
    for _ in 0..n_hist {
        let epoch = r.usize()?;
        let train_loss = r.f64()?;
        let has_val = r.flag()?;
        let val = r.f64()?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_c_index: has_val.then_some(val),
        });
    }
    let baseline = if r.flag()? {
        let n = r.usize()?;
        if n > buf.len() / 16 {
            return Err(CheckpointError::Truncated(r.pos));
        }
        let times = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        let cumulative = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        Some(BaselineHazard::new(times, cumulative)?)
    } else {
        None
    };
    if r.pos != buf.len() {
        return Err(CheckpointError::Trailing(buf.len() - r.pos));
    }
    Ok(SavedRun {
        run,
        checkpoint: ModelCheckpoint {
            model,
            history,
            baseline,
        },
    })
}

pub fn save(path: &Path, saved: &SavedRun) -> Result<(), CheckpointError> {
    fs::write(path, encode(saved)).map_err(|source| CheckpointError::Io {
        path: path.into(),
        source,
    })
}

pub fn load(path: &Path) -> Result<SavedRun, CheckpointError> {
    let buf = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.into(),
        source,
    })?;
    decode(&buf)
}
