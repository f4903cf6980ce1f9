//! Flat `key = value` run configuration.
//!
//! Recognised keys:
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `out` | output directory | `out` |
//! | `n` | boundary nodes | per experiment |
//! | `rings` | mesh rings (optimize) | `n / 4` |
//! | `ring_divisor` | `rings = n / ring_divisor` (h-shape) | `4` |
//! | `ns` | comma separated grid sizes | per experiment |
//! | `ps` | comma separated exponents (p-sweep) | `2,4,…,16` |
//! | `steps` | optimisation steps | `50` |
//! | `seed` | oracle-check seed | `0` |
//! | `gamma`, `max_step` | Armijo parameters | `1e-3`, `0.5` |
//! | `eps_start`, `eps_min`, `tol`, `max_iter`, `relaxation` | Sinkhorn schedule | library defaults |
//! | `snapshot_every` | SVG snapshot period, `0` for first and last | `10` |
//! | `problem`, `method` | optimize selection | `laplace`, `all` |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

const KEYS: &[&str] = &[
    "out",
    "n",
    "rings",
    "ring_divisor",
    "ns",
    "ps",
    "steps",
    "seed",
    "gamma",
    "max_step",
    "eps_start",
    "eps_min",
    "tol",
    "max_iter",
    "relaxation",
    "snapshot_every",
    "problem",
    "method",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        for (k, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", k + 1))?;
            s.set(key.trim(), value.trim()).with_context(|| format!("line {}", k + 1))?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            bail!("unknown key `{key}`");
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("`{key} = {v}`: {e}")))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.values.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|x| x.trim().parse::<T>().map_err(|e| anyhow!("`{key}` entry `{x}`: {e}")))
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.values.get("out").map_or("out", String::as_str))
    }
}
