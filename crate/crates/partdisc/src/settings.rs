//! Run configuration: a flat TOML table covering training, inference and
//! evaluation knobs. `--set key=value` overrides win over file values.

use std::fs;
use std::path::Path;

use partdisc_core::detect::{DEFAULT_BOX_SIDE, DEFAULT_NMS_IOU, DEFAULT_SCORE_THRESHOLD};
use partdisc_core::eval::DEFAULT_RIDGE;
use partdisc_core::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub score_threshold: f64,
    /// Anchor side in pixels.
    pub box_side: f64,
    pub nms_iou: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            box_side: DEFAULT_BOX_SIDE,
            nms_iou: DEFAULT_NMS_IOU,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    /// Center distance over the image's longer side.
    pub l2_threshold: f64,
    pub ridge: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            l2_threshold: 0.1,
            ridge: DEFAULT_RIDGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub eval: EvalConfig,
}

fn table_of<T: Serialize>(v: &T) -> Table {
    match Value::try_from(v) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("config structs serialize to tables"),
    }
}

fn section<T: DeserializeOwned>(t: Table, what: &str) -> Result<T> {
    Value::Table(t)
        .try_into()
        .map_err(|e: toml::de::Error| AppError::Usage(format!("invalid {what} setting: {}", e.message())))
}

impl RunConfig {
    /// Builds a config from a flat table; every key must belong to exactly
    /// one section.
    pub fn from_table(table: Table) -> Result<Self> {
        let defaults = Self::default();
        let keys = [
            table_of(&defaults.train),
            table_of(&defaults.infer),
            table_of(&defaults.eval),
        ];
        let mut parts = [Table::new(), Table::new(), Table::new()];
        for (k, v) in table {
            let Some(i) = keys.iter().position(|s| s.contains_key(&k)) else {
                return Err(AppError::Usage(format!("unknown config key {k:?}")));
            };
            parts[i].insert(k, v);
        }
        let [t, i, e] = parts;
        let cfg = Self {
            train: section(t, "training")?,
            infer: section(i, "inference")?,
            eval: section(e, "evaluation")?,
        };
        cfg.train.validate().map_err(|e| AppError::Usage(e.to_string()))?;
        if !(cfg.infer.box_side > 0.0) || !(0.0..=1.0).contains(&cfg.infer.nms_iou) {
            return Err(AppError::Usage("box_side must be positive and nms_iou in [0, 1]".into()));
        }
        if !(cfg.eval.iou_threshold > 0.0 && cfg.eval.l2_threshold > 0.0 && cfg.eval.ridge >= 0.0) {
            return Err(AppError::Usage("evaluation thresholds must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match file {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| AppError::io(p, e))?;
                text.parse::<Table>()
                    .map_err(|e| AppError::Usage(format!("{}: {}", p.display(), e.message())))?
            }
            None => Table::new(),
        };
        for o in overrides {
            let (k, v) = parse_override(o)?;
            table.insert(k, v);
        }
        Self::from_table(table)
    }

    pub fn to_table(&self) -> Table {
        let mut t = table_of(&self.train);
        t.extend(table_of(&self.infer));
        t.extend(table_of(&self.eval));
        t
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_table()).expect("flat table serializes")
    }
}

/// `key=value`, where `value` is a TOML literal or else a bare string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let Some((k, v)) = s.split_once('=') else {
        return Err(AppError::Usage(format!("override {s:?} is not key=value")));
    };
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() {
        return Err(AppError::Usage(format!("override {s:?} has an empty key")));
    }
    let value = format!("v = {v}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}
