//! Flat `key = value` experiment configuration with one `[section]` per
//! experiment.
//!
//! ```text
//! # comment
//! [convergence-p2]
//! kind = convergence
//! problem = smooth-standing
//! p = 2
//! method = iga-stab
//! time_ratio = 5
//! mesh = 16, 32, 64, 128
//! ```

use std::str::FromStr;

use stwave_core::experiments::{ExperimentConfig, ExperimentKind, MethodKind, ProblemKind};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}, field `{field}`: {message}")]
    Field { line: usize, field: String, message: String },
    #[error("section [{section}] (line {line}): {message}")]
    Section { section: String, line: usize, message: String },
}

fn field_err(line: usize, field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_one<T: FromStr>(line: usize, field: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| field_err(line, field, format!("cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(line: usize, field: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    let items: Vec<&str> = value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(field_err(line, field, "empty list"));
    }
    items.into_iter().map(|s| parse_one(line, field, s)).collect()
}

/// Regularity: an integer or `max` (the default `p - 1`).
fn parse_regularity(line: usize, field: &str, value: &str) -> Result<Option<i64>, ConfigError> {
    if value == "max" {
        Ok(None)
    } else {
        parse_one(line, field, value).map(Some)
    }
}

struct Section {
    name: String,
    line: usize,
    entries: Vec<(usize, String, String)>,
}

fn build(section: &Section, default_seed: u64) -> Result<ExperimentConfig, ConfigError> {
    let get = |key: &str| section.entries.iter().find(|(_, k, _)| k == key);
    let missing = |what: &str| ConfigError::Section {
        section: section.name.clone(),
        line: section.line,
        message: format!("missing field `{what}`"),
    };
    let (l, _, v) = get("kind").ok_or_else(|| missing("kind"))?;
    let kind = ExperimentKind::parse(v).ok_or_else(|| field_err(*l, "kind", format!("unknown experiment `{v}`")))?;
    let (l, _, v) = get("problem").ok_or_else(|| missing("problem"))?;
    let problem = ProblemKind::parse(v).ok_or_else(|| field_err(*l, "problem", format!("unknown problem `{v}`")))?;
    let p = match get("p") {
        Some((l, k, v)) => parse_one(*l, k, v)?,
        None => 2,
    };
    let mut cfg = ExperimentConfig::new(&section.name, kind, problem, p);
    cfg.seed = default_seed;
    let mut has_mesh = false;
    for (line, key, value) in &section.entries {
        let (line, key, value) = (*line, key.as_str(), value.as_str());
        match key {
            "kind" | "problem" | "p" => {}
            "p_s" => cfg.space_degree = parse_one(line, key, value)?,
            "p_t" => cfg.time_degree = parse_one(line, key, value)?,
            "q_s" => cfg.space_regularity = parse_regularity(line, key, value)?,
            "q_t" => cfg.time_regularity = parse_regularity(line, key, value)?,
            "method" => {
                cfg.method = MethodKind::parse(value)
                    .ok_or_else(|| field_err(line, key, format!("unknown method `{value}`")))?
            }
            "delta" => {
                let d: f64 = parse_one(line, key, value)?;
                if !(d > 0.0 && d.is_finite()) {
                    return Err(field_err(line, key, "delta must be positive"));
                }
                cfg.delta = Some(d);
            }
            "final_time" => cfg.final_time = Some(parse_one(line, key, value)?),
            "mesh" => {
                cfg.space_elements = parse_list(line, key, value)?;
                has_mesh = true;
            }
            "time_ratio" => cfg.time_ratio = parse_one(line, key, value)?,
            "time_step" => cfg.time_step = Some(parse_one(line, key, value)?),
            "ratios" => cfg.ratios = parse_list(line, key, value)?,
            "deltas" => cfg.deltas = parse_list(line, key, value)?,
            "modes" => cfg.modes = parse_list(line, key, value)?,
            "samples" => cfg.samples = parse_one(line, key, value)?,
            "reference" => cfg.reference_elements = Some(parse_one(line, key, value)?),
            "c0_breakpoints" => cfg.c0_breakpoints = parse_list(line, key, value)?,
            "seed" => cfg.seed = parse_one(line, key, value)?,
            "output" => cfg.output = value.to_string(),
            _ => return Err(field_err(line, key, "unknown field")),
        }
    }
    // sweeps that do not refine need no mesh list
    if !has_mesh {
        if kind == ExperimentKind::CflSweep {
            cfg.space_elements = vec![1];
        } else {
            return Err(missing("mesh"));
        }
    }
    cfg.validate().map_err(|e| ConfigError::Section {
        section: section.name.clone(),
        line: section.line,
        message: e.to_string(),
    })?;
    Ok(cfg)
}

/// Parse a configuration file. `default_seed` is used by sections without
/// a `seed` field.
pub fn parse(text: &str, default_seed: u64) -> Result<Vec<ExperimentConfig>, ConfigError> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .map(str::trim)
                .filter(|n| !n.is_empty())
                .ok_or_else(|| ConfigError::Syntax {
                    line,
                    message: format!("malformed section header `{s}`"),
                })?;
            if sections.iter().any(|x| x.name == name) {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("duplicate section [{name}]"),
                });
            }
            sections.push(Section {
                name: name.to_string(),
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = s.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            message: format!("expected `key = value`, got `{s}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let section = sections.last_mut().ok_or_else(|| ConfigError::Syntax {
            line,
            message: "field outside of a section".into(),
        })?;
        if section.entries.iter().any(|(_, k, _)| k == key) {
            return Err(field_err(line, key, "duplicate field"));
        }
        section.entries.push((line, key.to_string(), value.to_string()));
    }
    if sections.is_empty() {
        return Err(ConfigError::Syntax {
            line: 0,
            message: "no experiment sections".into(),
        });
    }
    sections.iter().map(|s| build(s, default_seed)).collect()
}
