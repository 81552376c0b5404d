//! Versioned JSON model files.
//!
//! Layout: `{"format_version", "checksum", "header": {task, target, config,
//! schema}, "trees": [...]}`. The checksum is the SHA-256 of the compact
//! encoding of `{"header", "trees"}`; saving a loaded model reproduces the
//! input bytes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ensemble::{ForestModel, WeightedTree};
use super::TrainConfig;
use crate::error::ForestError;
use crate::records::Schema;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    task: String,
    target: String,
    config: TrainConfig,
    schema: Schema,
}

#[derive(Serialize)]
struct Body<'a> {
    header: &'a Header,
    trees: &'a [WeightedTree],
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    checksum: String,
    header: Header,
    trees: Vec<WeightedTree>,
}

fn checksum(header: &Header, trees: &[WeightedTree]) -> Result<String, ForestError> {
    let body = serde_json::to_vec(&Body { header, trees })?;
    let digest = Sha256::digest(&body);
    let mut hex = String::with_capacity(64);
    for b in digest.iter() {
        write!(hex, "{b:02x}").expect("writing to a String");
    }
    Ok(hex)
}

pub fn save_model(model: &ForestModel) -> Result<String, ForestError> {
    let header = Header {
        task: model.task.clone(),
        target: model.target.clone(),
        config: model.config.clone(),
        schema: model.schema.clone(),
    };
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        checksum: checksum(&header, &model.trees)?,
        header,
        trees: model.trees.clone(),
    };
    let mut text = serde_json::to_string(&file)?;
    text.push('\n');
    Ok(text)
}

/// Parses a model file, rejecting unknown versions and checksum mismatches.
pub fn load_model(text: &str) -> Result<ForestModel, ForestError> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.format_version != FORMAT_VERSION {
        return Err(ForestError::FormatVersion(file.format_version));
    }
    let computed = checksum(&file.header, &file.trees)?;
    if computed != file.checksum {
        return Err(ForestError::Checksum {
            stored: file.checksum,
            computed,
        });
    }
    Ok(ForestModel {
        task: file.header.task,
        target: file.header.target,
        config: file.header.config,
        schema: file.header.schema,
        trees: file.trees,
    })
}
