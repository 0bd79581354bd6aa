//! Binary checkpoint: magic, little-endian header length, JSON header, raw f64 blobs.

use std::collections::BTreeMap;
use std::path::Path;

use pas_autograd::{Adam, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::RunConfig;

const MAGIC: &[u8; 8] = b"PASCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Optimization steps completed.
    pub step: u64,
    pub featurenet_seed: u64,
    pub generator: ParamStore,
    pub discriminator: ParamStore,
    pub opt_g: Adam,
    pub opt_d: Adam,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    step: u64,
    featurenet_seed: u64,
    opt_g_step: u64,
    opt_d_step: u64,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    group: String,
    name: String,
    shape: Vec<usize>,
}

const GROUPS: [&str; 6] = ["generator", "discriminator", "opt_g.m", "opt_g.v", "opt_d.m", "opt_d.v"];

impl Checkpoint {
    fn groups(&self) -> [Vec<(&String, &Tensor)>; 6] {
        [
            self.generator.iter().collect(),
            self.discriminator.iter().collect(),
            self.opt_g.m.iter().collect(),
            self.opt_g.v.iter().collect(),
            self.opt_d.m.iter().collect(),
            self.opt_d.v.iter().collect(),
        ]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let groups = self.groups();
        let mut tensors = Vec::new();
        for (g, items) in GROUPS.iter().zip(&groups) {
            for (name, t) in items {
                tensors.push(Entry { group: g.to_string(), name: name.to_string(), shape: t.shape().to_vec() });
            }
        }
        let header = Header {
            config: self.config.clone(),
            step: self.step,
            featurenet_seed: self.featurenet_seed,
            opt_g_step: self.opt_g.step,
            opt_d_step: self.opt_d.step,
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for items in &groups {
            for (_, t) in items {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json)?;
        header.config.validate()?;
        let mut stores: [BTreeMap<String, Tensor>; 6] = Default::default();
        let mut pos = 16 + hlen;
        for e in header.tensors {
            let gi = GROUPS.iter().position(|g| *g == e.group).ok_or_else(|| bad("unknown tensor group"))?;
            let n: usize = e.shape.iter().product();
            let raw = bytes.get(pos..pos + 8 * n).ok_or_else(|| bad("truncated tensor data"))?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            stores[gi].insert(e.name, Tensor::from_vec(data, &e.shape));
            pos += 8 * n;
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        let [gen, disc, gm, gv, dm, dv] = stores;
        let to_store = |m: BTreeMap<String, Tensor>| {
            let mut s = ParamStore::new();
            for (k, v) in m {
                s.insert(k, v);
            }
            s
        };
        let adam = |step, m, v, cfg| Adam { config: cfg, step, m, v };
        Ok(Self {
            step: header.step,
            featurenet_seed: header.featurenet_seed,
            generator: to_store(gen),
            discriminator: to_store(disc),
            opt_g: adam(header.opt_g_step, gm, gv, header.config.adam()),
            opt_d: adam(header.opt_d_step, dm, dv, header.config.disc_adam()),
            config: header.config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
