//! File formats: frequency CSV, scene JSON Lines, grouping JSON and the TOML
//! run configuration.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{GtTriplet, LossWeights, Prediction};
use crate::geometry::BoundingBox;
use crate::grouping::{FrequencyTable, PredicateGrouping, QueryGrouping};
use crate::simulator::{ScenarioConfig, Scene};
use crate::speaq::Strategy;

pub const PREDICATE_GROUPS_FILE: &str = "predicate_groups.json";
pub const QUERY_GROUPS_FILE: &str = "query_groups.json";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// `line` is 1-based.
    #[error("{source_name}, line {line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },
    #[error("{source_name}: {msg}")]
    Invalid { source_name: String, msg: String },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn parse(source_name: &str, line: usize, msg: impl ToString) -> Self {
        IoError::Parse {
            source_name: source_name.to_string(),
            line,
            msg: msg.to_string(),
        }
    }

    fn invalid(source_name: &str, msg: impl ToString) -> Self {
        IoError::Invalid {
            source_name: source_name.to_string(),
            msg: msg.to_string(),
        }
    }

    /// True for failures to read or write the file system.
    pub fn is_file_system(&self) -> bool {
        matches!(self, IoError::Io { .. })
    }
}

fn open(path: &Path) -> Result<fs::File, IoError> {
    fs::File::open(path).map_err(|e| IoError::io(path, e))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), IoError> {
    fs::write(path, contents).map_err(|e| IoError::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

// ---------------------------------------------------------------- frequencies

#[derive(Debug, Deserialize)]
struct FrequencyRow {
    predicate_id: usize,
    count: u64,
}

/// Parses `predicate_id,count` rows after a header line.
pub fn parse_frequency_csv<R: Read>(
    reader: R,
    source_name: &str,
) -> Result<FrequencyTable, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| IoError::parse(source_name, 1, e))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["predicate_id", "count"] {
        return Err(IoError::parse(
            source_name,
            1,
            "header must be `predicate_id,count`",
        ));
    }
    let mut entries = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            IoError::parse(source_name, line, e)
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row: FrequencyRow = record
            .deserialize(Some(&headers))
            .map_err(|e| IoError::parse(source_name, line, e))?;
        entries.push((row.predicate_id, row.count));
    }
    FrequencyTable::new(entries).map_err(|e| IoError::invalid(source_name, e))
}

pub fn read_frequency_csv(path: &Path) -> Result<FrequencyTable, IoError> {
    parse_frequency_csv(open(path)?, &path.display().to_string())
}

pub fn frequency_csv_string(table: &FrequencyTable) -> String {
    let mut out = String::from("predicate_id,count\n");
    for (id, count) in table.entries() {
        out.push_str(&format!("{id},{count}\n"));
    }
    out
}

// --------------------------------------------------------------------- scenes

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtRecord {
    s_box: BoundingBox,
    o_box: BoundingBox,
    s_cls: usize,
    o_cls: usize,
    p_cls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p_box: Option<BoundingBox>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredRecord {
    s_box: BoundingBox,
    o_box: BoundingBox,
    s_probs: Vec<f64>,
    o_probs: Vec<f64>,
    p_probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p_box: Option<BoundingBox>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRecord {
    gts: Vec<GtRecord>,
    preds: Vec<PredRecord>,
}

impl From<&Scene> for SceneRecord {
    fn from(s: &Scene) -> Self {
        SceneRecord {
            gts: s
                .gts
                .iter()
                .map(|t| GtRecord {
                    s_box: t.subject_box,
                    o_box: t.object_box,
                    s_cls: t.subject_class,
                    o_cls: t.object_class,
                    p_cls: t.predicate_class,
                    p_box: t.predicate_box,
                })
                .collect(),
            preds: s
                .preds
                .iter()
                .map(|p| PredRecord {
                    s_box: p.subject_box,
                    o_box: p.object_box,
                    s_probs: p.subject_probs.clone(),
                    o_probs: p.object_probs.clone(),
                    p_probs: p.predicate_probs.clone(),
                    p_box: p.predicate_box,
                })
                .collect(),
        }
    }
}

impl SceneRecord {
    fn into_scene(self) -> Result<Scene, String> {
        let gts = self
            .gts
            .into_iter()
            .map(|g| GtTriplet {
                subject_box: g.s_box,
                object_box: g.o_box,
                predicate_box: g.p_box,
                subject_class: g.s_cls,
                object_class: g.o_cls,
                predicate_class: g.p_cls,
            })
            .collect();
        let preds = self
            .preds
            .into_iter()
            .enumerate()
            .map(|(q, p)| {
                let pred = Prediction {
                    subject_box: p.s_box,
                    object_box: p.o_box,
                    predicate_box: p.p_box,
                    subject_probs: p.s_probs,
                    object_probs: p.o_probs,
                    predicate_probs: p.p_probs,
                    query_index: q,
                };
                pred.validate()
                    .map(|_| pred)
                    .map_err(|e| format!("prediction {q}: {e}"))
            })
            .collect::<Result<_, _>>()?;
        Ok(Scene { gts, preds })
    }
}

/// Parses one scene per non-blank line. Query indices follow the order of
/// `preds`.
pub fn parse_scenes<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<Scene>, IoError> {
    let mut scenes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IoError::parse(source_name, i + 1, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SceneRecord =
            serde_json::from_str(&line).map_err(|e| IoError::parse(source_name, i + 1, e))?;
        scenes.push(
            record
                .into_scene()
                .map_err(|e| IoError::parse(source_name, i + 1, e))?,
        );
    }
    Ok(scenes)
}

pub fn read_scenes(path: &Path) -> Result<Vec<Scene>, IoError> {
    parse_scenes(BufReader::new(open(path)?), &path.display().to_string())
}

/// Full-precision JSON Lines rendering of `scenes`.
pub fn scenes_jsonl_string(scenes: &[Scene]) -> String {
    scenes
        .iter()
        .map(|s| {
            serde_json::to_string(&SceneRecord::from(s)).expect("scene records serialize") + "\n"
        })
        .collect()
}

// ------------------------------------------------------------------ groupings

/// Writes both grouping files into `dir` at full precision.
pub fn write_groupings(
    dir: &Path,
    pg: &PredicateGrouping,
    qg: &QueryGrouping,
) -> Result<(PathBuf, PathBuf), IoError> {
    let p = dir.join(PREDICATE_GROUPS_FILE);
    let q = dir.join(QUERY_GROUPS_FILE);
    write_file(
        &p,
        &(serde_json::to_string_pretty(pg).expect("grouping serializes") + "\n"),
    )?;
    write_file(
        &q,
        &(serde_json::to_string_pretty(qg).expect("grouping serializes") + "\n"),
    )?;
    Ok((p, q))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| IoError::parse(&path.display().to_string(), e.line(), e))
}

pub fn read_predicate_grouping(path: &Path) -> Result<PredicateGrouping, IoError> {
    read_json(path)
}

pub fn read_query_grouping(path: &Path) -> Result<QueryGrouping, IoError> {
    read_json(path)
}

// --------------------------------------------------------------------- config

/// Strategy names accepted in configuration files and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyName {
    Single,
    Iou,
    Agnostic,
    Speaq,
}

impl StrategyName {
    pub fn with_params(self, iou_threshold: f64, agnostic_d: usize) -> Strategy {
        match self {
            StrategyName::Single => Strategy::Single,
            StrategyName::Iou => Strategy::Iou {
                threshold: iou_threshold,
            },
            StrategyName::Agnostic => Strategy::Agnostic { d: agnostic_d },
            StrategyName::Speaq => Strategy::Speaq,
        }
    }
}

/// Everything a run needs. Unknown keys are rejected at every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory; `--out-dir` takes precedence.
    pub out_dir: Option<PathBuf>,
    pub strategies: Vec<StrategyName>,
    /// Threshold of the IoU-based strategy.
    pub iou_threshold: f64,
    /// Constant duplication count of the class-agnostic strategy.
    pub agnostic_d: usize,
    pub write_csv: bool,
    pub write_svg: bool,
    pub loss: LossWeights,
    pub scenario: ScenarioConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: None,
            strategies: vec![
                StrategyName::Single,
                StrategyName::Iou,
                StrategyName::Agnostic,
                StrategyName::Speaq,
            ],
            iou_threshold: 0.7,
            agnostic_d: 3,
            write_csv: true,
            write_svg: false,
            loss: LossWeights::default(),
            scenario: ScenarioConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, source_name: &str) -> Result<Self, IoError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| {
                text[..s.start.min(text.len())].matches('\n').count() + 1
            });
            IoError::parse(source_name, line, e.message())
        })?;
        cfg.validate()
            .map_err(|msg| IoError::invalid(source_name, msg))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Self::from_toml_str(&read_to_string(path)?, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.strategies.is_empty() {
            return Err("strategies must not be empty".into());
        }
        let mut s = self.strategies.clone();
        s.sort();
        s.dedup();
        if s.len() != self.strategies.len() {
            return Err("strategies must not repeat".into());
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err("iou_threshold must lie in (0, 1]".into());
        }
        if self.agnostic_d == 0 {
            return Err("agnostic_d must be at least 1".into());
        }
        self.loss.validate().map_err(|e| e.to_string())?;
        self.scenario.validate().map_err(|e| e.to_string())
    }

    pub fn strategy_list(&self) -> Vec<Strategy> {
        self.strategies
            .iter()
            .map(|s| s.with_params(self.iou_threshold, self.agnostic_d))
            .collect()
    }
}
