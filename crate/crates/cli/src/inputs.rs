//! Input validation and loading.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use evofuse_core::losses::{BBox, COMPONENT_COUNT};
use evofuse_core::pipeline::FusionPair;
use evofuse_core::{io, FeatureMap, Image};

use crate::{CliResult, Failure, SEED_ENV};

pub fn require_file(path: &Path, what: &str) -> CliResult {
    if !path.is_file() {
        return Err(Failure::Usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

pub fn require_dir(path: &Path, what: &str) -> CliResult {
    if !path.is_dir() {
        return Err(Failure::Usage(format!(
            "{what} {} is not a directory",
            path.display()
        )));
    }
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Runtime(anyhow!("malformed JSON in {}: {e}", path.display())))
}

pub fn load_image(path: &Path) -> CliResult<Image> {
    Ok(io::load_image(path)?)
}

/// Where a seed came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedSource {
    Flag,
    Env,
    File,
}

/// Seed precedence: `--seed` flag, then `EVOFUSE_SEED`, then the config file.
pub fn resolve_seed(flag: Option<u64>, file: u64) -> CliResult<(u64, SeedSource)> {
    if let Some(s) = flag {
        return Ok((s, SeedSource::Flag));
    }
    match std::env::var(SEED_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<u64>()
            .map(|s| (s, SeedSource::Env))
            .map_err(|_| Failure::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        _ => Ok((file, SeedSource::File)),
    }
}

/// Seven comma-separated nonnegative coefficients.
pub fn parse_genome(text: Option<&str>) -> CliResult<Vec<f64>> {
    let Some(text) = text else {
        return Ok(vec![1.0; COMPONENT_COUNT]);
    };
    let values: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Usage(format!("--genome {text:?}: {e}")))?;
    if values.len() != COMPONENT_COUNT {
        return Err(Failure::Usage(format!(
            "--genome needs {COMPONENT_COUNT} values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Failure::Usage(format!(
            "--genome {text:?}: coefficients must be finite and >= 0"
        )));
    }
    Ok(values)
}

pub fn parse_patch(text: &str) -> CliResult<[usize; 4]> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Usage(format!("--patch {text:?}: {e}")))?;
    parts.try_into().map_err(|p: Vec<usize>| {
        Failure::Usage(format!("--patch needs top,left,height,width; got {} values", p.len()))
    })
}

/// A labeled box in a pair directory; other detection fields are ignored.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct LabeledBox {
    pub gt: [f64; 4],
}

pub fn read_boxes(path: &Path) -> CliResult<Vec<BBox>> {
    let raw: Vec<LabeledBox> = read_json(path)?;
    raw.iter()
        .map(|b| BBox::from_array(b.gt))
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Runtime(anyhow!("{}: {e}", path.display())))
}

const IMAGE_EXTENSIONS: [&str; 2] = ["pgm", "png"];

fn find_image(dir: &Path, stem: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

/// Names `<name>` for which `<name>_<suffix>.{pgm,png}` exists, sorted.
pub fn stems_with_suffix(dir: &Path, suffix: &str) -> CliResult<Vec<String>> {
    let mut names = BTreeMap::new();
    let entries = fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?;
    for entry in entries {
        let entry = entry.with_context(|| format!("listing {}", dir.display()))?;
        let path = entry.path();
        let (Some(stem), Some(ext)) = (
            path.file_stem().and_then(|s| s.to_str()),
            path.extension().and_then(|s| s.to_str()),
        ) else {
            continue;
        };
        if !IMAGE_EXTENSIONS.contains(&ext) {
            continue;
        }
        if let Some(name) = stem.strip_suffix(suffix) {
            names.insert(name.to_string(), ());
        }
    }
    Ok(names.into_keys().collect())
}

/// Loads every `<name>_ir` / `<name>_vis` pair with optional `<name>_boxes.json`.
pub fn load_pairs(dir: &Path) -> CliResult<Vec<FusionPair>> {
    require_dir(dir, "pair directory")?;
    let mut pairs = Vec::new();
    for name in stems_with_suffix(dir, "_ir")? {
        let ir_path = find_image(dir, &format!("{name}_ir")).expect("listed above");
        let vis_path = find_image(dir, &format!("{name}_vis")).ok_or_else(|| {
            Failure::Runtime(anyhow!(
                "{} has no matching {name}_vis.pgm or {name}_vis.png",
                ir_path.display()
            ))
        })?;
        let boxes_path = dir.join(format!("{name}_boxes.json"));
        let boxes = if boxes_path.is_file() {
            read_boxes(&boxes_path)?
        } else {
            Vec::new()
        };
        let pair = FusionPair::new(name.clone(), load_image(&ir_path)?, load_image(&vis_path)?, boxes)
            .with_context(|| format!("pair {name} in {}", dir.display()))?;
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(Failure::Runtime(anyhow!(
            "{} holds no <name>_ir / <name>_vis image pairs",
            dir.display()
        )));
    }
    Ok(pairs)
}

/// Shape descriptor stored next to a raw feature file.
#[derive(Debug, Clone, Copy, Deserialize, Serialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct ShapeDescriptor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Sidecar path: the feature file with its extension replaced by `.json`.
pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

/// Reads a channel-major little-endian f32 feature map and its sidecar shape.
pub fn read_features(raw: &Path) -> CliResult<FeatureMap> {
    require_file(raw, "feature file")?;
    let side = sidecar_path(raw);
    require_file(&side, "feature shape descriptor")?;
    let shape: ShapeDescriptor = read_json(&side)?;
    let bytes = fs::read(raw).with_context(|| format!("reading {}", raw.display()))?;
    let expected = shape.channels * shape.height * shape.width * 4;
    if bytes.len() != expected {
        return Err(Failure::Runtime(anyhow!(
            "{} holds {} bytes, shape {}x{}x{} needs {expected}",
            raw.display(),
            bytes.len(),
            shape.channels,
            shape.height,
            shape.width
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    FeatureMap::new(shape.channels, shape.height, shape.width, data)
        .map_err(|e| Failure::Runtime(anyhow!("{}: {e}", raw.display())))
}
