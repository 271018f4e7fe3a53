//! Binary checkpoint:
//!
//! ```text
//! "MDCK" | version u8 | section* where section = len u64 | payload
//!   1. config JSON   {step, pretrained, settings, bundle}
//!   2. tensors       count u32, then name str | ndims u32 | dims u32* | f32*
//!   3. optimizer     for G then D: t u64 | count u32 | (len u32 | m f32* | v f32*)*
//!   4. norm stats    for X then Y: bins u32 | mean f32* | std f32*
//!   5. rng           seed [u8; 32] | stream u64 | word_pos u128
//!   6. averages      count u32 (0 when disabled), then (len u32 | f32*)*
//!                    in generator parameter order
//! ```
//!
//! Strings are u32-length-prefixed UTF-8; everything is little-endian.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AdamState, OptimizerState, RunSettings};
use crate::audio::NormStats;
use crate::error::{Error, Result};
use crate::fsutil::{write_atomic, ByteReader};
use crate::models::{BundleConfig, Discriminator, Generator, ModelBundle};
use crate::nn::Param;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MDCK";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngSnapshot {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngSnapshot {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngSnapshot {
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

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub pretrained: bool,
    pub settings: RunSettings,
    pub bundle: ModelBundle<f32>,
    pub optimizer: OptimizerState<f32>,
    pub norm_x: NormStats,
    pub norm_y: NormStats,
    pub rng: RngSnapshot,
    pub generator_average: Option<Vec<Vec<f32>>>,
}

impl Checkpoint {
    /// Networks for adaptation: averaged generators when the run kept them.
    pub fn inference_bundle(&self) -> ModelBundle<f32> {
        super::with_generator_average(&self.bundle, self.generator_average.as_ref())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    step: u64,
    pretrained: bool,
    settings: RunSettings,
    bundle: BundleConfig,
}

fn named_tensors(b: &ModelBundle<f32>) -> Vec<(String, &Param<f32>)> {
    let mut out = Vec::new();
    for (prefix, gens) in [("gen_xy", &b.gen_xy), ("gen_yx", &b.gen_yx)] {
        for (i, g) in gens.iter().enumerate() {
            out.extend(g.params.iter().map(|p| (format!("{prefix}.{i}.{}", p.name), p)));
        }
    }
    for (prefix, discs) in [("disc_x", &b.disc_x), ("disc_y", &b.disc_y)] {
        for (i, d) in discs.iter().enumerate() {
            out.extend(d.params.iter().map(|p| (format!("{prefix}.{i}.{}", p.name), p)));
        }
    }
    out
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn section(&mut self, payload: Writer) {
        self.u64(payload.0.len() as u64);
        self.0.extend(payload.0);
    }
}

pub(crate) fn encode(c: &Checkpoint) -> Vec<u8> {
    let mut out = Writer(CHECKPOINT_MAGIC.to_vec());
    out.0.push(CHECKPOINT_VERSION);

    let header = Header {
        step: c.step,
        pretrained: c.pretrained,
        settings: c.settings.clone(),
        bundle: c.bundle.config.clone(),
    };
    out.section(Writer(serde_json::to_vec(&header).expect("header serializes")));

    let mut t = Writer(Vec::new());
    let tensors = named_tensors(&c.bundle);
    t.u32(tensors.len());
    for (name, p) in tensors {
        t.str(&name);
        t.u32(p.dims.len());
        p.dims.iter().for_each(|&d| t.u32(d));
        t.f32s(&p.data);
    }
    out.section(t);

    let mut o = Writer(Vec::new());
    for s in [&c.optimizer.g, &c.optimizer.d] {
        o.u64(s.t);
        o.u32(s.m.len());
        for (m, v) in s.m.iter().zip(&s.v) {
            o.u32(m.len());
            o.f32s(m);
            o.f32s(v);
        }
    }
    out.section(o);

    let mut n = Writer(Vec::new());
    for s in [&c.norm_x, &c.norm_y] {
        n.u32(s.mean.len());
        n.f32s(&s.mean);
        n.f32s(&s.std);
    }
    out.section(n);

    let mut r = Writer(Vec::new());
    r.0.extend_from_slice(&c.rng.seed);
    r.u64(c.rng.stream);
    r.0.extend_from_slice(&c.rng.word_pos.to_le_bytes());
    out.section(r);

    let mut a = Writer(Vec::new());
    let avg = c.generator_average.as_deref().unwrap_or_default();
    a.u32(avg.len());
    for w in avg {
        a.u32(w.len());
        a.f32s(w);
    }
    out.section(a);
    out.0
}

fn section<'a>(r: &mut ByteReader<'a>, path: &'a Path) -> Result<ByteReader<'a>> {
    let len = usize::try_from(r.u64()?).map_err(|_| Error::format(path, "section too large"))?;
    Ok(ByteReader::new(r.take(len)?, path))
}

pub(crate) fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = ByteReader::new(bytes, path);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u8()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }

    let mut h = section(&mut r, path)?;
    let header: Header =
        serde_json::from_slice(h.rest()).map_err(|e| Error::format(path, format!("config section: {e}")))?;

    let mut t = section(&mut r, path)?;
    let count = t.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = t.string()?;
        let ndims = t.u32()? as usize;
        let dims = (0..ndims).map(|_| t.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::format(path, "tensor too large"))?;
        let data = t.f32_vec(len)?;
        tensors.push((name, Param { name: String::new(), dims, data }));
    }
    t.finish()?;
    let bundle = rebuild_bundle(header.bundle, tensors, path)?;

    let mut o = section(&mut r, path)?;
    let mut adam = || -> Result<AdamState<f32>> {
        let t_ = o.u64()?;
        let n = o.u32()? as usize;
        let mut m = Vec::with_capacity(n.min(1 << 16));
        let mut v = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let len = o.u32()? as usize;
            m.push(o.f32_vec(len)?);
            v.push(o.f32_vec(len)?);
        }
        Ok(AdamState { t: t_, m, v })
    };
    let optimizer = OptimizerState { g: adam()?, d: adam()? };
    o.finish()?;
    check_optimizer(&optimizer, &bundle, path)?;

    let mut n = section(&mut r, path)?;
    let mut stats = || -> Result<NormStats> {
        let bins = n.u32()? as usize;
        let s = NormStats {
            mean: n.f32_vec(bins)?,
            std: n.f32_vec(bins)?,
        };
        s.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(s)
    };
    let (norm_x, norm_y) = (stats()?, stats()?);
    n.finish()?;

    let mut g = section(&mut r, path)?;
    let seed: [u8; 32] = g.take(32)?.try_into().expect("32 bytes");
    let stream = g.u64()?;
    let word_pos = u128::from_le_bytes(g.take(16)?.try_into().expect("16 bytes"));
    g.finish()?;

    let mut a = section(&mut r, path)?;
    let count = a.u32()? as usize;
    let mut avg = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = a.u32()? as usize;
        avg.push(a.f32_vec(len)?);
    }
    a.finish()?;
    r.finish()?;
    let generator_average = if count == 0 {
        None
    } else {
        let params = bundle.generator_params();
        let fits = avg.len() == params.len() && params.iter().zip(&avg).all(|(p, w)| p.data.len() == w.len());
        if !fits {
            return Err(Error::format(path, "averaged generator weights do not match parameters"));
        }
        Some(avg)
    };

    Ok(Checkpoint {
        step: header.step,
        pretrained: header.pretrained,
        settings: header.settings,
        bundle,
        optimizer,
        norm_x,
        norm_y,
        rng: RngSnapshot { seed, stream, word_pos },
        generator_average,
    })
}

fn rebuild_bundle(config: BundleConfig, tensors: Vec<(String, Param<f32>)>, path: &Path) -> Result<ModelBundle<f32>> {
    config.validate().map_err(|e| Error::format(path, e.to_string()))?;
    let mut it = tensors.into_iter().peekable();
    let mut take = |prefix: &str| -> Vec<Param<f32>> {
        let mut out = Vec::new();
        while let Some((name, _)) = it.peek() {
            match name.strip_prefix(prefix) {
                Some(rest) => {
                    let rest = rest.to_string();
                    let (_, mut p) = it.next().expect("peeked");
                    p.name = rest;
                    out.push(p);
                }
                None => break,
            }
        }
        out
    };
    let bad = |e: Error| Error::format(path, e.to_string());
    let mut gen = |dir: &str, count: usize| -> Result<Vec<Generator<f32>>> {
        (0..count)
            .map(|i| Generator::from_params(config.generator.clone(), take(&format!("{dir}.{i}."))).map_err(bad))
            .collect()
    };
    let n_xy = config.generators_per_direction(crate::models::Direction::XToY);
    let n_yx = config.generators_per_direction(crate::models::Direction::YToX);
    let gen_xy = gen("gen_xy", n_xy)?;
    let gen_yx = gen("gen_yx", n_yx)?;
    let mut disc = |dom: &str, widths: &[usize]| -> Result<Vec<Discriminator<f32>>> {
        widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                Discriminator::from_params(config.discriminator.clone(), w, config.frames, take(&format!("{dom}.{i}.")))
                    .map_err(bad)
            })
            .collect()
    };
    let disc_x = disc("disc_x", &config.layout_x.widths.clone())?;
    let disc_y = disc("disc_y", &config.layout_y.widths.clone())?;
    if it.peek().is_some() {
        return Err(Error::format(path, "unexpected extra tensors"));
    }
    ModelBundle::from_parts(config, gen_xy, gen_yx, disc_x, disc_y).map_err(bad)
}

fn check_optimizer(opt: &OptimizerState<f32>, bundle: &ModelBundle<f32>, path: &Path) -> Result<()> {
    let matches = |s: &AdamState<f32>, params: Vec<&Param<f32>>| {
        s.m.len() == params.len()
            && s.v.len() == params.len()
            && params.iter().zip(&s.m).zip(&s.v).all(|((p, m), v)| m.len() == p.data.len() && v.len() == p.data.len())
    };
    if !matches(&opt.g, bundle.generator_params()) || !matches(&opt.d, bundle.discriminator_params()) {
        return Err(Error::format(path, "optimizer state does not match parameters"));
    }
    Ok(())
}

pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode(c))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
