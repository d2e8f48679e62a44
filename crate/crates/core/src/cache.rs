//! JSON dump of numeric component tables, so a recursion can resume from a
//! stored level.

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{ApproxStrategy, Component, ComponentKey, ComponentTable};
use crate::codes::CodeSpec;
use crate::dmat::DMat;
use crate::error::{Error, Result};
use crate::params::ErrorParams;

pub const CACHE_VERSION: u32 = 1;

/// Hex SHA-256 over everything a table depends on.
pub fn params_fingerprint(code: CodeSpec, params: &ErrorParams, strategy: ApproxStrategy) -> String {
    let canonical = serde_json::json!({
        "code": code.size(),
        "params": params,
        "strategy": strategy,
    });
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CachedEntry {
    j: String,
    k: String,
    weight: [f64; 2],
    /// Row-major `[re, im]` pairs.
    mat: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CachedTable {
    version: u32,
    fingerprint: String,
    code: usize,
    level: u32,
    entries: Vec<CachedEntry>,
}

fn cache_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Cache(msg.into()))
}

pub fn dump_table<W: Write>(
    table: &ComponentTable<Complex64>,
    params: &ErrorParams,
    strategy: ApproxStrategy,
    writer: W,
) -> Result<()> {
    let entries = table
        .entries()
        .iter()
        .map(|(key, c)| CachedEntry {
            j: format!("{:x}", key.j),
            k: format!("{:x}", key.k),
            weight: [c.weight.re, c.weight.im],
            mat: c.mat.entries().iter().map(|v| [v.re, v.im]).collect(),
        })
        .collect();
    let cached = CachedTable {
        version: CACHE_VERSION,
        fingerprint: params_fingerprint(table.code(), params, strategy),
        code: table.code().size(),
        level: table.level(),
        entries,
    };
    serde_json::to_writer(writer, &cached).map_err(|e| Error::Cache(e.to_string()))
}

/// Loads a table, refusing it unless version and fingerprint match the
/// requested parameters.
pub fn load_table<R: Read>(
    reader: R,
    code: CodeSpec,
    params: &ErrorParams,
    strategy: ApproxStrategy,
) -> Result<ComponentTable<Complex64>> {
    let cached: CachedTable = serde_json::from_reader(reader).map_err(|e| Error::Cache(e.to_string()))?;
    if cached.version != CACHE_VERSION {
        return cache_err(format!("version {} (expected {CACHE_VERSION})", cached.version));
    }
    if cached.code != code.size() || cached.fingerprint != params_fingerprint(code, params, strategy) {
        return cache_err("fingerprint mismatch");
    }
    // Components act on one A/B memory pair.
    let dim = 4;
    let mut entries = Vec::with_capacity(cached.entries.len());
    for e in cached.entries {
        let parse = |s: &str| u128::from_str_radix(s, 16).map_err(|err| Error::Cache(format!("bad key {s}: {err}")));
        if e.mat.len() != dim * dim {
            return cache_err(format!("matrix has {} entries, expected {}", e.mat.len(), dim * dim));
        }
        let mut mat = DMat::zeros(2);
        for (dst, [re, im]) in mat.entries_mut().iter_mut().zip(e.mat) {
            *dst = Complex64::new(re, im);
        }
        let weight = Complex64::new(e.weight[0], e.weight[1]);
        entries.push((ComponentKey::new(parse(&e.j)?, parse(&e.k)?), Component { weight, mat }));
    }
    ComponentTable::from_entries(cached.level, code, entries)
}
