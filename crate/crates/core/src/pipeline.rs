//! Layer-level latency accounting for a detector split across the host CPU,
//! a DLA and a vector unit, plus what-if remapping of host layers.
//!
//! The latency model is additive: layers run back to back, preprocessing
//! runs before the first one.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "CPU")]
    Cpu,
    #[serde(rename = "DLA", alias = "NVDLA")]
    Dla,
    #[serde(rename = "VECTOR")]
    Vector,
}

impl Unit {
    pub fn name(self) -> &'static str {
        match self {
            Unit::Cpu => "CPU",
            Unit::Dla => "DLA",
            Unit::Vector => "VECTOR",
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub unit: Unit,
    pub ms: f64,
}

/// A value reported alongside the measured table, checked at the
/// precision it was reported with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportedValue {
    pub value: f64,
    /// Decimal places the value was reported with.
    #[serde(default)]
    pub decimals: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineGraph {
    #[serde(rename = "layer")]
    pub layers: Vec<LayerEntry>,
    /// Size class to preprocessing milliseconds.
    #[serde(default)]
    pub preprocessing: BTreeMap<String, f64>,
    /// Size class to input resolution (informational).
    #[serde(default)]
    pub resolution: BTreeMap<String, u32>,
    /// Reported figures keyed by metric name (`total_ms`, `cpu_ms`,
    /// `end_to_end_ms`, `preprocessing_percent`).
    #[serde(default)]
    pub reported: BTreeMap<String, ReportedValue>,
}

impl PipelineGraph {
    pub fn new(layers: Vec<LayerEntry>) -> Result<Self> {
        let g = Self {
            layers,
            preprocessing: BTreeMap::new(),
            resolution: BTreeMap::new(),
            reported: BTreeMap::new(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("layer table is empty"));
        }
        for l in &self.layers {
            if !(l.ms.is_finite() && l.ms >= 0.0) {
                return Err(Error::config(format!("layer `{}` has invalid latency {}", l.name, l.ms)));
            }
        }
        for (k, v) in &self.preprocessing {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::config(format!("preprocessing `{k}` has invalid latency {v}")));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let g: PipelineGraph = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }
}

/// Reads a layer table.
pub fn load_layer_table(path: impl AsRef<Path>) -> Result<PipelineGraph> {
    let path = path.as_ref();
    let text =
        fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    PipelineGraph::from_toml_str(&text)
}

/// Table shipped with the crate.
pub fn default_layer_table() -> PipelineGraph {
    PipelineGraph::from_toml_str(include_str!("../configs/yolov3_layers.toml"))
        .expect("shipped layer table is valid")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Totals {
    pub total_ms: f64,
    pub per_unit: BTreeMap<Unit, f64>,
}

pub fn total_latency(graph: &PipelineGraph) -> Totals {
    let mut per_unit = BTreeMap::new();
    for l in &graph.layers {
        *per_unit.entry(l.unit).or_insert(0.0) += l.ms;
    }
    Totals {
        total_ms: graph.layers.iter().fold(0.0, |s, l| s + l.ms),
        per_unit,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EndToEnd {
    pub latency_ms: f64,
    pub fps: f64,
    pub preprocessing_ms: f64,
    pub preprocessing_fraction: f64,
}

pub fn end_to_end(graph: &PipelineGraph, size_class: &str) -> Result<EndToEnd> {
    let pre = *graph
        .preprocessing
        .get(size_class)
        .ok_or_else(|| Error::config(format!("unknown size class `{size_class}`")))?;
    Ok(end_to_end_with(graph, pre))
}

fn end_to_end_with(graph: &PipelineGraph, preprocessing_ms: f64) -> EndToEnd {
    let latency = total_latency(graph).total_ms + preprocessing_ms;
    EndToEnd {
        latency_ms: latency,
        fps: if latency > 0.0 { 1000.0 / latency } else { f64::INFINITY },
        preprocessing_ms,
        preprocessing_fraction: if latency > 0.0 { preprocessing_ms / latency } else { 0.0 },
    }
}

/// Moves every layer whose name matches `pattern` to `unit`, dividing its
/// latency by `speedup`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemapRule {
    pub pattern: String,
    pub unit: Unit,
    pub speedup: f64,
}

impl RemapRule {
    pub fn new(pattern: impl Into<String>, unit: Unit, speedup: f64) -> Result<Self> {
        let rule = Self {
            pattern: pattern.into(),
            unit,
            speedup,
        };
        rule.compile()?;
        Ok(rule)
    }

    fn compile(&self) -> Result<Regex> {
        if !(self.speedup.is_finite() && self.speedup > 0.0) {
            return Err(Error::config(format!(
                "rule `{}`: speedup must be > 0, got {}",
                self.pattern, self.speedup
            )));
        }
        Regex::new(&self.pattern).map_err(|e| Error::config(format!("rule `{}`: {e}", self.pattern)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemappedLayer {
    pub index: usize,
    pub name: String,
    pub unit_before: Unit,
    pub unit_after: Unit,
    pub ms_before: f64,
    pub ms_after: f64,
    pub speedup: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemapOutcome {
    pub graph: PipelineGraph,
    pub remapped: Vec<RemappedLayer>,
    /// Rules that matched nothing.
    pub warnings: Vec<String>,
}

/// Applies `rules` in order; a layer matched by several rules takes all of
/// them, so factors multiply.
pub fn apply_remap(graph: &PipelineGraph, rules: &[RemapRule]) -> Result<RemapOutcome> {
    let compiled = rules
        .iter()
        .map(|r| r.compile().map(|re| (re, r)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = graph.clone();
    let mut factors = vec![1.0f64; out.layers.len()];
    let mut warnings = Vec::new();
    for (re, rule) in &compiled {
        let mut hits = 0;
        for (layer, factor) in out.layers.iter_mut().zip(factors.iter_mut()) {
            if re.is_match(&layer.name) {
                layer.unit = rule.unit;
                layer.ms /= rule.speedup;
                *factor *= rule.speedup;
                hits += 1;
            }
        }
        if hits == 0 {
            warnings.push(format!("remap pattern `{}` matched no layer", rule.pattern));
        }
    }
    let remapped = graph
        .layers
        .iter()
        .zip(&out.layers)
        .zip(&factors)
        .enumerate()
        .filter(|(_, ((a, b), _))| a != b)
        .map(|(index, ((a, b), f))| RemappedLayer {
            index,
            name: a.name.clone(),
            unit_before: a.unit,
            unit_after: b.unit,
            ms_before: a.ms,
            ms_after: b.ms,
            speedup: *f,
        })
        .collect();
    Ok(RemapOutcome {
        graph: out,
        remapped,
        warnings,
    })
}

/// A named set of rules, optionally with a reported overall speedup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub reported_total_speedup: Option<f64>,
    #[serde(default, rename = "rule")]
    pub rules: Vec<RemapRule>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemapFile {
    #[serde(rename = "scenario")]
    pub scenarios: Vec<Scenario>,
}

impl RemapFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let f: RemapFile = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        for s in &f.scenarios {
            for r in &s.rules {
                r.compile()?;
            }
        }
        Ok(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn scenario(&self, name: &str) -> Result<&Scenario> {
        self.scenarios
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::config(format!("no remap scenario `{name}`")))
    }
}

/// Remap scenarios shipped with the crate.
pub fn default_remap_file() -> RemapFile {
    RemapFile::from_toml_str(include_str!("../configs/remap_scenarios.toml"))
        .expect("shipped remap file is valid")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub total_ms: f64,
    pub per_unit: BTreeMap<String, f64>,
    pub preprocessing_ms: f64,
    pub end_to_end_ms: f64,
    pub fps: f64,
    pub preprocessing_fraction: f64,
}

impl Summary {
    fn of(graph: &PipelineGraph, preprocessing_ms: f64) -> Self {
        let t = total_latency(graph);
        let e = end_to_end_with(graph, preprocessing_ms);
        Self {
            total_ms: t.total_ms,
            per_unit: t.per_unit.into_iter().map(|(u, ms)| (u.name().to_string(), ms)).collect(),
            preprocessing_ms,
            end_to_end_ms: e.latency_ms,
            fps: e.fps,
            preprocessing_fraction: e.preprocessing_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    /// Layer total before over after.
    pub total_speedup: f64,
    pub end_to_end_speedup: f64,
    pub fps_gain: f64,
    /// Summed latency of remapped layers, before and after.
    pub remapped_ms_before: f64,
    pub remapped_ms_after: f64,
}

/// Computed figure next to a reported one. `discrepancy` is set when the
/// computed value, rounded to the reported precision, differs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCheck {
    pub metric: String,
    pub reported: f64,
    pub computed: f64,
    pub discrepancy: bool,
}

impl ReferenceCheck {
    pub fn new(metric: &str, reported: &ReportedValue, computed: f64) -> Self {
        let scale = 10f64.powi(reported.decimals as i32);
        let rounded = (computed * scale).round() / scale;
        Self {
            metric: metric.to_string(),
            reported: reported.value,
            computed,
            discrepancy: (rounded - reported.value).abs() > 0.5 / scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub size_class: String,
    pub before: Summary,
    pub after: Summary,
    pub ratios: Ratios,
    #[serde(default)]
    pub remapped: Vec<RemappedLayer>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub references: Vec<ReferenceCheck>,
}

/// Reported-value keys understood by [`report`].
pub const REPORTED_METRICS: [&str; 4] = ["total_ms", "cpu_ms", "end_to_end_ms", "preprocessing_percent"];

/// Before/after comparison for one size class. Reported values stored in
/// the `before` graph are checked against the `before` figures.
pub fn report(before: &PipelineGraph, outcome: &RemapOutcome, size_class: &str) -> Result<Report> {
    let after = &outcome.graph;
    let pre = end_to_end(before, size_class)?.preprocessing_ms;
    let b = Summary::of(before, pre);
    let a = Summary::of(after, pre);
    let ratio = |x: f64, y: f64| if y > 0.0 { x / y } else { 1.0 };
    let ratios = Ratios {
        total_speedup: ratio(b.total_ms, a.total_ms),
        end_to_end_speedup: ratio(b.end_to_end_ms, a.end_to_end_ms),
        fps_gain: ratio(a.fps, b.fps),
        remapped_ms_before: outcome.remapped.iter().fold(0.0, |s, r| s + r.ms_before),
        remapped_ms_after: outcome.remapped.iter().fold(0.0, |s, r| s + r.ms_after),
    };
    let mut references = Vec::new();
    for metric in REPORTED_METRICS {
        if let Some(v) = before.reported.get(metric) {
            let computed = match metric {
                "total_ms" => b.total_ms,
                "cpu_ms" => b.per_unit.get(Unit::Cpu.name()).copied().unwrap_or(0.0),
                "end_to_end_ms" => b.end_to_end_ms,
                _ => 100.0 * b.preprocessing_fraction,
            };
            references.push(ReferenceCheck::new(metric, v, computed));
        }
    }
    Ok(Report {
        size_class: size_class.to_string(),
        before: b,
        after: a,
        ratios,
        remapped: outcome.remapped.clone(),
        warnings: outcome.warnings.clone(),
        references,
    })
}

/// Adds the scenario's reported overall speedup, if any, as an unasserted
/// reference next to the computed end-to-end speedup.
pub fn add_scenario_reference(report: &mut Report, scenario: &Scenario) {
    if let Some(v) = scenario.reported_total_speedup {
        report.references.push(ReferenceCheck::new(
            &format!("{}_total_speedup", scenario.name),
            &ReportedValue { value: v, decimals: 3 },
            report.ratios.end_to_end_speedup,
        ));
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Long format: `metric,value`, one leaf per row, dotted paths.
    pub fn to_csv(&self) -> Result<String> {
        let value = serde_json::to_value(self).expect("report serializes");
        let mut rows = Vec::new();
        flatten("", &value, &mut rows);
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::format(e.to_string());
        w.write_record(["metric", "value"]).map_err(err)?;
        for (k, v) in rows {
            w.write_record([k, v]).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers().map_err(|e| Error::format(e.to_string()))?;
        if headers != vec!["metric", "value"] {
            return Err(Error::format("expected header `metric,value`"));
        }
        let mut root = Value::Object(Map::new());
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::format(e.to_string()))?;
            let path: Vec<&str> = rec[0].split('.').collect();
            insert(&mut root, &path, parse_leaf(&rec[1]))?;
        }
        serde_json::from_value(root).map_err(|e| Error::format(e.to_string()))
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let join = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(m) => m.iter().for_each(|(k, v)| flatten(&join(k), v, out)),
        Value::Array(a) => a
            .iter()
            .enumerate()
            .for_each(|(i, v)| flatten(&join(&i.to_string()), v, out)),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn parse_leaf(s: &str) -> Value {
    match s {
        "true" => Value::Bool(true),
        "false" => Value::Bool(false),
        "null" => Value::Null,
        _ => {
            // std's float parser round-trips exactly
            if let Ok(u) = s.parse::<u64>() {
                Value::from(u)
            } else if let Ok(i) = s.parse::<i64>() {
                Value::from(i)
            } else if let Some(f) = s.parse::<f64>().ok().filter(|f| f.is_finite()) {
                Value::from(f)
            } else {
                Value::String(s.to_string())
            }
        }
    }
}

fn insert(node: &mut Value, path: &[&str], leaf: Value) -> Result<()> {
    let Some((head, rest)) = path.split_first() else {
        *node = leaf;
        return Ok(());
    };
    let bad = || Error::format(format!("conflicting CSV path at `{head}`"));
    if let Ok(idx) = head.parse::<usize>() {
        if node.is_null() || node.as_object().is_some_and(|m| m.is_empty()) {
            *node = Value::Array(Vec::new());
        }
        let arr = node.as_array_mut().ok_or_else(bad)?;
        if idx > arr.len() {
            return Err(Error::format(format!("CSV array index {idx} out of order")));
        }
        if idx == arr.len() {
            arr.push(Value::Null);
        }
        insert(&mut arr[idx], rest, leaf)
    } else {
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
        let obj = node.as_object_mut().ok_or_else(bad)?;
        insert(obj.entry(head.to_string()).or_insert(Value::Null), rest, leaf)
    }
}
