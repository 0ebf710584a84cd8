use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EpochMetrics, TrainConfig};
use crate::losses::LossWeights;
use crate::model::{Discriminator, Generator, ModelConfig};
use crate::nn::{Adam, AdamMoments, Module, ParamKind};
use crate::{Error, Result, Scalar};

const MAGIC: &[u8; 4] = b"STGN";
const FORMAT_VERSION: u32 = 1;

pub const GENERATOR_FILE: &str = "generator.bin";
pub const DISCRIMINATOR_FILE: &str = "discriminator.bin";
pub const META_FILE: &str = "meta.txt";

/// Both networks, their optimizer states and the run that produced them.
#[derive(Clone)]
pub struct Checkpoint<T> {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub opt_g: Adam<T>,
    pub opt_d: Adam<T>,
    pub epoch: usize,
    pub metrics: Option<EpochMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format_version: u32,
    dtype: String,
    epoch: usize,
    config_hash: String,
    metrics: Option<EpochMetrics>,
    model: ModelConfig,
    train: TrainConfig,
    loss: LossWeights,
}

#[derive(Serialize)]
struct HashedConfig<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    loss: &'a LossWeights,
}

/// SHA-256 of the serialized model, training and loss configuration.
pub fn config_hash(model: &ModelConfig, train: &TrainConfig, loss: &LossWeights) -> String {
    let text = toml::to_string(&HashedConfig { model, train, loss }).expect("configs serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
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
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor<T: Scalar>(&mut self, a: &ArrayD<T>) {
        self.u32(a.ndim() as u32);
        for &d in a.shape() {
            self.u64(d as u64);
        }
        for &v in a.iter() {
            v.write_le(&mut self.0);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            msg: format!("{} at byte {}", msg.into(), self.pos),
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
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
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.err("invalid utf-8"))
    }
    fn tensor<T: Scalar>(&mut self) -> Result<ArrayD<T>> {
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(self.err(format!("tensor with {ndim} axes")));
        }
        let shape = (0..ndim).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = self.take(len * T::BYTES)?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|e| self.err(e.to_string()))
    }
}

fn encode_network<T: Scalar>(net: &dyn Module<T>, opt: &Adam<T>) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.str(T::DTYPE);
    let params = net.params();
    w.u32(params.len() as u32);
    for p in params {
        w.str(&p.name);
        w.u8(match p.kind {
            ParamKind::Weight => 0,
            ParamKind::Buffer => 1,
        });
        w.tensor(&p.value);
    }
    w.f64(opt.learning_rate);
    w.f64(opt.beta1);
    w.f64(opt.beta2);
    w.f64(opt.eps);
    w.u64(opt.step);
    w.u32(opt.moments.len() as u32);
    for m in &opt.moments {
        w.str(&m.name);
        w.tensor(&m.m);
        w.tensor(&m.v);
    }
    w.0
}

fn decode_network<T: Scalar>(path: &Path, net: &mut dyn Module<T>) -> Result<Adam<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != MAGIC {
        return Err(r.err("not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(r.err(format!("unsupported format version {version}")));
    }
    let dtype = r.str()?;
    if dtype != T::DTYPE {
        return Err(Error::invalid(format!(
            "{} holds {dtype} weights, expected {}",
            path.display(),
            T::DTYPE
        )));
    }
    let count = r.u32()? as usize;
    let mut params = net.params_mut();
    if count != params.len() {
        return Err(Error::invalid(format!(
            "{} holds {count} tensors, the configured network has {}",
            path.display(),
            params.len()
        )));
    }
    for p in params.iter_mut() {
        let name = r.str()?;
        let kind = r.u8()?;
        let value: ArrayD<T> = r.tensor()?;
        let expected_kind = if p.is_weight() { 0 } else { 1 };
        if name != p.name || kind != expected_kind || value.shape() != p.value.shape() {
            return Err(Error::invalid(format!(
                "{}: tensor {name} {:?} does not match {} {:?}",
                path.display(),
                value.shape(),
                p.name,
                p.value.shape()
            )));
        }
        p.value = value;
        p.zero_grad();
    }
    let mut opt = Adam::new(r.f64()?, r.f64()?, r.f64()?);
    opt.eps = r.f64()?;
    opt.step = r.u64()?;
    let moments = r.u32()? as usize;
    for _ in 0..moments {
        let name = r.str()?;
        let m = r.tensor()?;
        let v = r.tensor()?;
        opt.moments.push(AdamMoments { name, m, v });
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes"));
    }
    Ok(opt)
}

impl<T: Scalar> Checkpoint<T> {
    pub fn config_hash(&self) -> String {
        config_hash(&self.model, &self.train, &self.loss)
    }

    fn meta(&self) -> Meta {
        Meta {
            format_version: FORMAT_VERSION,
            dtype: T::DTYPE.to_string(),
            epoch: self.epoch,
            config_hash: self.config_hash(),
            metrics: self.metrics.clone(),
            model: self.model.clone(),
            train: self.train.clone(),
            loss: self.loss,
        }
    }

    /// Writes `generator.bin`, `discriminator.bin` and `meta.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| Error::io(p, e))
        };
        write(GENERATOR_FILE, &encode_network(&self.generator, &self.opt_g))?;
        write(DISCRIMINATOR_FILE, &encode_network(&self.discriminator, &self.opt_d))?;
        let meta = toml::to_string(&self.meta()).map_err(|e| Error::Config(e.to_string()))?;
        write(META_FILE, meta.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: Meta = toml::from_str(&text).map_err(|e| Error::Parse {
            path: meta_path.clone(),
            msg: e.to_string(),
        })?;
        if meta.dtype != T::DTYPE {
            return Err(Error::invalid(format!(
                "checkpoint holds {} weights, expected {}",
                meta.dtype,
                T::DTYPE
            )));
        }
        let hash = config_hash(&meta.model, &meta.train, &meta.loss);
        if hash != meta.config_hash {
            return Err(Error::invalid(format!(
                "{}: config hash {} does not match its contents ({hash})",
                meta_path.display(),
                meta.config_hash
            )));
        }
        meta.model.validate()?;
        // Weights are overwritten below; the seed only shapes the layers.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut generator = Generator::new(&meta.model.generator, meta.model.input_frames(), &mut rng)?;
        let mut discriminator = Discriminator::new(&meta.model.discriminator, &mut rng)?;
        let opt_g = decode_network(&dir.join(GENERATOR_FILE), &mut generator)?;
        let opt_d = decode_network(&dir.join(DISCRIMINATOR_FILE), &mut discriminator)?;
        Ok(Checkpoint {
            model: meta.model,
            train: meta.train,
            loss: meta.loss,
            generator,
            discriminator,
            opt_g,
            opt_d,
            epoch: meta.epoch,
            metrics: meta.metrics,
        })
    }
}
