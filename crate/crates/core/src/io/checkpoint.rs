//! Binary checkpoint files.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"MCODCKPT"  u32 version
//! u64 len, TOML config echo   u64 len, TOML mix spec (may be empty)
//! u32 array count, then per array:
//!     u16 name len, name, u8 dtype (0 = f64, 1 = u64), u32 ndim, u64 dims[ndim], data
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! Floats are stored as raw bits, so a round trip is exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::encoder::{ParamSet, Tower};
use crate::error::{ensure, Error, Result};
use crate::memory::{MemoryBank, NoiseState};
use crate::numeric::{AdamState, Tensor};
use crate::queue::{ContrastQueue, QueueSnapshot};
use crate::trainer::{TrainConfig, TrainState};

use super::mix::MixSpec;

pub const MAGIC: &[u8; 8] = b"MCODCKPT";
pub const FORMAT_VERSION: u32 = 1;

const DTYPE_F64: u8 = 0;
const DTYPE_U64: u8 = 1;

/// A training state together with the mixture it was trained on, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedRun {
    pub state: TrainState,
    pub mix: Option<MixSpec>,
}

enum Array {
    F64(Vec<usize>, Vec<f64>),
    U64(Vec<usize>, Vec<u64>),
}

struct Writer {
    buf: Vec<u8>,
    arrays: Vec<(String, Array)>,
}

impl Writer {
    fn f64(&mut self, name: impl Into<String>, t: &Tensor) {
        self.arrays.push((name.into(), Array::F64(t.shape().to_vec(), t.data().to_vec())));
    }

    fn f64_vec(&mut self, name: impl Into<String>, v: &[f64]) {
        self.arrays.push((name.into(), Array::F64(vec![v.len()], v.to_vec())));
    }

    fn u64(&mut self, name: impl Into<String>, v: Vec<u64>) {
        self.arrays.push((name.into(), Array::U64(vec![v.len()], v)));
    }

    fn text(&mut self, s: &str) {
        self.buf.extend_from_slice(&(s.len() as u64).to_le_bytes());
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn finish(mut self) -> Vec<u8> {
        self.buf.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, array) in &self.arrays {
            self.buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            self.buf.extend_from_slice(name.as_bytes());
            let (dtype, dims) = match array {
                Array::F64(d, _) => (DTYPE_F64, d),
                Array::U64(d, _) => (DTYPE_U64, d),
            };
            self.buf.push(dtype);
            self.buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for &d in dims {
                self.buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match array {
                Array::F64(_, v) => v.iter().for_each(|x| self.buf.extend_from_slice(&x.to_bits().to_le_bytes())),
                Array::U64(_, v) => v.iter().for_each(|x| self.buf.extend_from_slice(&x.to_le_bytes())),
            }
        }
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

fn config_toml<T: serde::Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(e.to_string()))
}

/// Serializes `state` (and optionally its mixture spec) to bytes.
pub fn encode_checkpoint(state: &TrainState, mix: Option<&MixSpec>) -> Result<Vec<u8>> {
    let mut w = Writer {
        buf: Vec::new(),
        arrays: Vec::new(),
    };
    w.buf.extend_from_slice(MAGIC);
    w.buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    w.text(&config_toml(&state.config)?);
    w.text(&match mix {
        Some(m) => config_toml(m)?,
        None => String::new(),
    });

    for (tower, prefix) in [(&state.query, "query"), (&state.key, "key")] {
        for (name, t) in tower.params().iter() {
            w.f64(format!("{prefix}/{name}"), t);
        }
    }
    let names = state.query.params().names();
    for (i, name) in names.iter().enumerate() {
        w.f64_vec(format!("adam.m/{name}"), &state.optimizer.first_moment[i]);
        w.f64_vec(format!("adam.v/{name}"), &state.optimizer.second_moment[i]);
    }
    w.u64("adam.step", vec![state.optimizer.step]);

    let mem = &state.memory;
    w.f64("memory/prototypes", mem.prototypes());
    w.u64("memory/support", mem.support().iter().map(|&n| n as u64).collect());
    let noise = mem.noise_state();
    w.u64(
        "memory/state",
        vec![
            mem.is_initialized() as u64,
            noise.seed,
            noise.word_pos as u64,
            (noise.word_pos >> 64) as u64,
        ],
    );

    let snap = state.queue.snapshot();
    w.f64("queue/features", &snap.features);
    w.f64("queue/embeddings", &snap.embeddings);
    w.f64("queue/relevancy", &snap.relevancy);
    w.u64("queue/inserted", vec![state.queue.inserted()]);
    w.u64("progress", vec![state.epoch as u64, state.step]);
    Ok(w.finish())
}

/// Writes to a sibling temporary file first, so an interrupted save never
/// leaves a half-written checkpoint at `path`.
pub fn save_checkpoint(state: &TrainState, mix: Option<&MixSpec>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(state, mix)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<SavedRun> {
    let bytes = fs::read(path)?;
    decode_checkpoint(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format("checkpoint is truncated".into()));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflows usize".into()))
    }

    fn text(&mut self) -> Result<&'a str> {
        let n = self.len()?;
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Format("config text is not UTF-8".into()))
    }
}

struct Arrays(BTreeMap<String, Array>);

impl Arrays {
    fn take(&mut self, name: &str) -> Result<Array> {
        self.0
            .remove(name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks array {name:?}")))
    }

    fn tensor(&mut self, name: &str) -> Result<Tensor> {
        match self.take(name)? {
            Array::F64(dims, data) => Tensor::new(&dims, data).map_err(|e| Error::Format(e.to_string())),
            Array::U64(..) => Err(Error::Format(format!("array {name:?} should hold f64"))),
        }
    }

    fn f64s(&mut self, name: &str) -> Result<Vec<f64>> {
        Ok(self.tensor(name)?.into_data())
    }

    fn u64s(&mut self, name: &str, len: usize) -> Result<Vec<u64>> {
        match self.take(name)? {
            Array::U64(_, data) if data.len() == len => Ok(data),
            Array::U64(_, data) => Err(Error::Format(format!(
                "array {name:?} has {} values, expected {len}",
                data.len()
            ))),
            Array::F64(..) => Err(Error::Format(format!("array {name:?} should hold u64"))),
        }
    }
}

/// Parses bytes written by [`encode_checkpoint`].
pub fn decode_checkpoint(bytes: &[u8]) -> Result<SavedRun> {
    ensure!(
        bytes.len() >= MAGIC.len() + 4 + 4,
        Format,
        "checkpoint is truncated ({} bytes)",
        bytes.len()
    );
    ensure!(&bytes[..MAGIC.len()] == MAGIC, Format, "not a checkpoint file (bad magic)");
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Compatibility(format!(
            "checkpoint format version {version}, this build reads version {FORMAT_VERSION}"
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    ensure!(
        crc32fast::hash(body) == stored,
        Format,
        "checkpoint checksum mismatch (file is corrupt or truncated)"
    );

    let mut r = Reader { bytes: body, pos: 12 };
    let config: TrainConfig = toml::from_str(r.text()?).map_err(|e| Error::Format(format!("config echo: {e}")))?;
    let mix_text = r.text()?;
    let mix = if mix_text.is_empty() {
        None
    } else {
        Some(toml::from_str::<MixSpec>(mix_text).map_err(|e| Error::Format(format!("mix spec: {e}")))?)
    };

    let count = r.u32()?;
    let mut arrays = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("array name is not UTF-8".into()))?
            .to_string();
        let dtype = r.u8()?;
        let ndim = r.u32()? as usize;
        let dims = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("array {name:?} is too large")))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("array too large".into()))?)?;
        let words = raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")));
        let array = match dtype {
            DTYPE_F64 => Array::F64(dims, words.map(f64::from_bits).collect()),
            DTYPE_U64 => Array::U64(dims, words.collect()),
            other => return Err(Error::Format(format!("array {name:?} has unknown dtype {other}"))),
        };
        arrays.insert(name, array);
    }
    ensure!(r.pos == body.len(), Format, "trailing bytes after the last array");
    let mut arrays = Arrays(arrays);

    let fresh = TrainState::new(config.clone()).map_err(|e| Error::Format(format!("config echo: {e}")))?;
    let names: Vec<String> = fresh.query.params().names().to_vec();
    let tower = |arrays: &mut Arrays, prefix: &str| -> Result<Tower> {
        let tensors = names
            .iter()
            .map(|n| arrays.tensor(&format!("{prefix}/{n}")))
            .collect::<Result<Vec<_>>>()?;
        Tower::from_params(config.encoder.clone(), ParamSet::new(names.clone(), tensors)?)
            .map_err(|e| Error::Format(format!("{prefix} tower: {e}")))
    };
    let query = tower(&mut arrays, "query")?;
    let key = tower(&mut arrays, "key")?;

    let mut optimizer = AdamState::new(config.optimizer.clone(), query.params().tensors());
    for (i, name) in names.iter().enumerate() {
        let m = arrays.f64s(&format!("adam.m/{name}"))?;
        let v = arrays.f64s(&format!("adam.v/{name}"))?;
        let expected = optimizer.first_moment[i].len();
        ensure!(
            m.len() == expected && v.len() == expected,
            Format,
            "optimizer moments for {name} have the wrong length"
        );
        optimizer.first_moment[i] = m;
        optimizer.second_moment[i] = v;
    }
    optimizer.step = arrays.u64s("adam.step", 1)?[0];

    let k = config.encoder.prototypes;
    let prototypes = arrays.tensor("memory/prototypes")?;
    ensure!(
        prototypes.shape() == [k, config.encoder.feature_dim],
        Format,
        "memory of shape {:?}",
        prototypes.shape()
    );
    let support = arrays.u64s("memory/support", k)?.into_iter().map(|n| n as usize).collect();
    let ms = arrays.u64s("memory/state", 4)?;
    let memory = MemoryBank::restore(
        prototypes,
        support,
        config.assignment,
        ms[0] != 0,
        NoiseState {
            seed: ms[1],
            word_pos: ms[2] as u128 | (ms[3] as u128) << 64,
        },
    )?;

    let snapshot = QueueSnapshot {
        features: arrays.tensor("queue/features")?,
        embeddings: arrays.tensor("queue/embeddings")?,
        relevancy: arrays.tensor("queue/relevancy")?,
    };
    let dims = fresh.queue.dims();
    let n = snapshot.features.shape().first().copied().unwrap_or(0);
    for (t, width) in [
        (&snapshot.features, dims.feature),
        (&snapshot.embeddings, dims.embedding),
        (&snapshot.relevancy, dims.relevancy),
    ] {
        ensure!(t.shape() == [n, width], Format, "queue array of shape {:?}", t.shape());
    }
    let inserted = arrays.u64s("queue/inserted", 1)?[0];
    let queue = ContrastQueue::restore(config.queue_capacity, &snapshot, inserted)?;

    let progress = arrays.u64s("progress", 2)?;
    ensure!(arrays.0.is_empty(), Format, "unexpected arrays {:?}", arrays.0.keys().collect::<Vec<_>>());

    Ok(SavedRun {
        state: TrainState {
            config,
            query,
            key,
            optimizer,
            queue,
            memory,
            epoch: progress[0] as usize,
            step: progress[1],
        },
        mix,
    })
}
