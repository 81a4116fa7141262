//! Plain `key = value` run configurations.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::optim::OptimizerKind;
use crate::train::Schedule;

/// Resolved settings of one run; later layers override earlier ones.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", k + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", k + 1)));
            }
            cfg.entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// Sets `key` only when a value is given.
    pub fn set_opt<T: Display>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    pub fn set_default(&mut self, key: &str, value: impl Display) {
        self.entries.entry(key.to_string()).or_insert_with(|| value.to_string());
    }

    pub fn overlay(&mut self, other: &RunConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .raw(key)
            .ok_or_else(|| Error::Config(format!("missing setting {key}")))?;
        raw.parse()
            .map_err(|_| Error::Config(format!("bad value {raw:?} for {key}")))
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None | Some("") => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    pub fn schedule_defaults(&mut self) {
        let d = Schedule::default();
        self.set_default("epochs", d.epochs);
        self.set_default("lr", d.learning_rate);
        self.set_default("patience", d.patience);
        self.set_default("batch_size", d.batch_size);
        self.set_default("optimizer", "sgd");
        self.set_default("weight_decay", d.weight_decay);
        self.set_default("seed", d.seed);
        self.set_default("train_encoder", d.train_encoder);
    }

    pub fn schedule(&self) -> Result<Schedule> {
        let optimizer = match self.raw("optimizer").unwrap_or("sgd") {
            "sgd" => OptimizerKind::Sgd,
            "adam" => OptimizerKind::adam(),
            other => return Err(Error::Config(format!("unknown optimizer {other:?}"))),
        };
        Ok(Schedule {
            epochs: self.get("epochs")?,
            learning_rate: self.get("lr")?,
            patience: self.get("patience")?,
            batch_size: self.get("batch_size")?,
            optimizer,
            weight_decay: self.get("weight_decay")?,
            seed: self.get("seed")?,
            train_encoder: self.get("train_encoder")?,
        })
    }
}

/// Comma-separated list, e.g. `42,1,2`.
pub fn parse_list<T: FromStr>(text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Config(format!("bad list item {s:?}"))))
        .collect()
}
