//! Large-sample ground truth for a DGP, cached on disk.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dgp::{DgpSpec, Generator};
use super::exec::Execution;
use crate::error::Result;
use crate::numkit::RngStream;

pub const ORACLE_DRAWS: usize = 10_000_000;
pub const CACHE_ENV: &str = "TRANSPORT_META_CACHE";
const ORACLE_SEED: u64 = 0x6f72_6163_6c65;
const CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleTruth {
    pub value: f64,
    pub se: f64,
    pub draws: usize,
}

#[derive(Default, Clone, Copy)]
struct Sums {
    num: f64,
    den: f64,
    nn: f64,
    dd: f64,
    nd: f64,
}

/// Cache key: SHA-256 over the serialized spec, draw count and stream.
pub fn cache_key(spec: &DgpSpec, draws: usize, stream: u64) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(spec).expect("spec serializes"));
    h.update(draws.to_le_bytes());
    h.update(stream.to_le_bytes());
    hex::encode(h.finalize())
}

fn memo() -> &'static Mutex<HashMap<String, OracleTruth>> {
    static MEMO: OnceLock<Mutex<HashMap<String, OracleTruth>>> = OnceLock::new();
    MEMO.get_or_init(Default::default)
}

fn cache_path(key: &str) -> Option<PathBuf> {
    let dir = std::env::var_os(CACHE_ENV)?;
    Some(PathBuf::from(dir).join(format!("oracle-{}.json", &key[..16])))
}

/// `E{D(X) | G=1}` or `E{R(X)Y | G=1} / E{Y | G=1}`, written as
/// `E[π·f] / E[π·g]` over the covariate law and averaged over `draws`
/// covariate vectors. The ratio-of-means form removes G and Y sampling noise.
pub fn oracle_truth(spec: &DgpSpec, draws: usize, stream: u64, exec: Execution) -> Result<OracleTruth> {
    let key = cache_key(spec, draws, stream);
    if let Some(t) = memo().lock().unwrap().get(&key) {
        return Ok(*t);
    }
    let path = cache_path(&key);
    if let Some(p) = &path {
        if let Ok(text) = std::fs::read_to_string(p) {
            if let Ok(t) = serde_json::from_str::<OracleTruth>(&text) {
                memo().lock().unwrap().insert(key, t);
                return Ok(t);
            }
        }
    }
    let t = compute(spec, draws, stream, exec)?;
    if let Some(p) = &path {
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(p, serde_json::to_string_pretty(&t)?)?;
    }
    memo().lock().unwrap().insert(key, t);
    Ok(t)
}

fn compute(spec: &DgpSpec, draws: usize, stream: u64, exec: Execution) -> Result<OracleTruth> {
    let gen = Generator::new(spec)?;
    let chunks = draws.div_ceil(CHUNK);
    let parts = exec.map(chunks, |c| {
        let mut rng = RngStream::new(ORACLE_SEED ^ stream, c as u64);
        let len = CHUNK.min(draws - c * CHUNK);
        let mut s = Sums::default();
        for _ in 0..len {
            let x = gen.covariates(&mut rng);
            let pi = spec.pi(&x);
            let (f, g) = match spec.target_q(&x) {
                None => (pi * spec.effect(&x), pi),
                Some(q) => (pi * spec.effect(&x) * q, pi * q),
            };
            s.num += f;
            s.den += g;
            s.nn += f * f;
            s.dd += g * g;
            s.nd += f * g;
        }
        s
    })?;
    let t = parts.iter().fold(Sums::default(), |a, b| Sums {
        num: a.num + b.num,
        den: a.den + b.den,
        nn: a.nn + b.nn,
        dd: a.dd + b.dd,
        nd: a.nd + b.nd,
    });
    let n = draws as f64;
    let value = t.num / t.den;
    // Delta method: influence (f − ψ g) / E g.
    let var = (t.nn - 2.0 * value * t.nd + value * value * t.dd) / n;
    let se = var.max(0.0).sqrt() / (t.den / n) / n.sqrt();
    Ok(OracleTruth { value, se, draws })
}
