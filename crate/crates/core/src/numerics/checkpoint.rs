//! Binary checkpoint container.
//!
//! All integers and floats are little-endian. Strings are a `u32` byte
//! length followed by UTF-8 bytes.
//!
//! ```text
//! magic      8 bytes   "WLEDCKPT"
//! version    u32       1
//! metadata   u32 count, then (key: string, value: string) pairs in order
//! params     u32 count, then per parameter:
//!              name: string, rank: u32, dims: rank × u64, data: f64 × product(dims)
//! optimizer  u8 present flag; if 1:
//!              lr, beta1, beta2, epsilon: f64; step: u64;
//!              first moments then second moments, each f64 × len(param) in param order
//! rng        seed: 32 bytes, stream: u64, word_pos: u128
//! checksum   32 bytes, SHA-256 of every preceding byte
//! ```
//!
//! Encoding is a pure function of the payload, so load followed by save
//! reproduces the original bytes exactly.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use sha2::{Digest, Sha256};

use super::adam::{AdamConfig, AdamState};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"WLEDCKPT";
const VERSION: u32 = 1;

/// Serializable snapshot of a [`ChaCha8Rng`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything a checkpoint file holds.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointPayload {
    pub metadata: Vec<(String, String)>,
    pub params: ParamStore,
    pub optimizer: Option<AdamState>,
    pub rng: RngState,
}

impl CheckpointPayload {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(self.metadata.len() as u32);
        for (k, v) in &self.metadata {
            w.string(k);
            w.string(v);
        }
        w.u32(self.params.len() as u32);
        for (name, t) in self.params.iter() {
            w.string(name);
            w.u32(t.shape().len() as u32);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            w.f64s(t.data());
        }
        match &self.optimizer {
            None => w.u8(0),
            Some(state) => {
                w.u8(1);
                let c = state.config;
                for x in [c.learning_rate, c.beta1, c.beta2, c.epsilon] {
                    w.f64(x);
                }
                w.u64(state.step);
                for m in &state.first_moment {
                    w.f64s(m);
                }
                for v in &state.second_moment {
                    w.f64s(v);
                }
            }
        }
        w.bytes(&self.rng.seed);
        w.u64(self.rng.stream);
        w.bytes(&self.rng.word_pos.to_le_bytes());
        let digest = Sha256::digest(&w.buf);
        w.bytes(&digest);
        w.buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n_meta = r.u32()?;
        let mut metadata = Vec::with_capacity(n_meta as usize);
        for _ in 0..n_meta {
            metadata.push((r.string()?, r.string()?));
        }
        let n_params = r.u32()?;
        let mut params = ParamStore::new();
        for _ in 0..n_params {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let len: usize = shape.iter().product();
            let data = r.f64s(len)?;
            let tensor = Tensor::new(&shape, data)
                .map_err(|e| Error::Checkpoint(format!("parameter `{name}`: {e}")))?;
            params.insert(&name, tensor)?;
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let config = AdamConfig {
                    learning_rate: r.f64()?,
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    epsilon: r.f64()?,
                };
                let step = r.u64()?;
                let lens: Vec<usize> = params.iter().map(|(_, t)| t.len()).collect();
                let mut first_moment = Vec::with_capacity(lens.len());
                for &n in &lens {
                    first_moment.push(r.f64s(n)?);
                }
                let mut second_moment = Vec::with_capacity(lens.len());
                for &n in &lens {
                    second_moment.push(r.f64s(n)?);
                }
                Some(AdamState {
                    config,
                    step,
                    first_moment,
                    second_moment,
                })
            }
            flag => return Err(Error::Checkpoint(format!("bad optimizer flag {flag}"))),
        };
        let mut seed = [0u8; 32];
        seed.copy_from_slice(r.take(32)?);
        let stream = r.u64()?;
        let mut pos = [0u8; 16];
        pos.copy_from_slice(r.take(16)?);
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                body.len() - r.pos
            )));
        }
        Ok(Self {
            metadata,
            params,
            optimizer,
            rng: RngState {
                seed,
                stream,
                word_pos: u128::from_le_bytes(pos),
            },
        })
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, x: u8) {
        self.buf.push(x);
    }
    fn u32(&mut self, x: u32) {
        self.bytes(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.bytes(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.bytes(&x.to_le_bytes());
    }
    fn f64s(&mut self, xs: &[f64]) {
        for &x in xs {
            self.f64(x);
        }
    }
    fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }
}
