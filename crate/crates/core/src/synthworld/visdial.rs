//! VisDial-style JSON import/export.
//!
//! Dialogue file:
//!
//! ```json
//! {"version": "...", "split": "...",
//!  "data": {"questions": [str], "answers": [str],
//!           "dialogs": [{"image_id": int, "caption": str,
//!                        "dialog": [{"question": idx, "answer": idx,
//!                                    "answer_options": [idx; N], "gt_index": int}]}]}}
//! ```
//!
//! Two optional extensions are read and written: a per-round `"relevance"`
//! array of 0/1 flags aligned with `answer_options`, and a per-dialog
//! `"seed"`. Without `"relevance"` only the ground-truth option is relevant.
//!
//! Feature side file:
//!
//! ```json
//! {"feature_len": N, "height": H, "width": W,
//!  "features": {"<image_id>": [f64; N*H*W]}}
//! ```

use std::collections::HashMap;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{CandidateSet, DialogueInstance, Round};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn schema(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn field<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Value> {
    obj.as_object()
        .ok_or_else(|| schema(path, "expected an object"))?
        .get(key)
        .ok_or_else(|| schema(format!("{path}.{key}"), "missing field"))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| schema(path, "expected an array"))
}

fn as_index(v: &Value, path: &str) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| schema(path, "expected a non-negative integer"))
}

fn as_str<'a>(v: &'a Value, path: &str) -> Result<&'a str> {
    v.as_str().ok_or_else(|| schema(path, "expected a string"))
}

fn string_pool(v: &Value, path: &str) -> Result<Vec<String>> {
    as_array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, s)| as_str(s, &format!("{path}[{i}]")).map(str::to_owned))
        .collect()
}

fn lookup<'a>(pool: &'a [String], idx: usize, path: &str, pool_name: &str) -> Result<&'a str> {
    pool.get(idx)
        .map(String::as_str)
        .ok_or_else(|| schema(path, format!("index {idx} outside {pool_name} pool of {}", pool.len())))
}

/// Parses a dialogue document and its feature side file.
pub fn parse_visdial(dialogs_json: &str, features_json: &str) -> Result<Vec<DialogueInstance>> {
    let doc: Value = serde_json::from_str(dialogs_json)?;
    let feats: Value = serde_json::from_str(features_json)?;
    let features = parse_features(&feats)?;

    field(&doc, "version", "$")?;
    field(&doc, "split", "$")?;
    let data = field(&doc, "data", "$")?;
    let questions = string_pool(field(data, "questions", "$.data")?, "$.data.questions")?;
    let answers = string_pool(field(data, "answers", "$.data")?, "$.data.answers")?;
    let dialogs = as_array(field(data, "dialogs", "$.data")?, "$.data.dialogs")?;

    let mut out = Vec::with_capacity(dialogs.len());
    for (di, dialog) in dialogs.iter().enumerate() {
        let dpath = format!("$.data.dialogs[{di}]");
        let id = field(dialog, "image_id", &dpath)?
            .as_u64()
            .ok_or_else(|| schema(format!("{dpath}.image_id"), "expected a non-negative integer"))?;
        let caption = as_str(field(dialog, "caption", &dpath)?, &format!("{dpath}.caption"))?;
        let seed = match dialog.get("seed") {
            None => 0,
            Some(v) => v
                .as_u64()
                .ok_or_else(|| schema(format!("{dpath}.seed"), "expected a non-negative integer"))?,
        };
        let rounds_json = as_array(field(dialog, "dialog", &dpath)?, &format!("{dpath}.dialog"))?;
        if rounds_json.is_empty() {
            return Err(schema(format!("{dpath}.dialog"), "a dialog needs at least one round"));
        }
        let mut rounds = Vec::with_capacity(rounds_json.len());
        for (ri, r) in rounds_json.iter().enumerate() {
            let rpath = format!("{dpath}.dialog[{ri}]");
            let q_idx = as_index(field(r, "question", &rpath)?, &format!("{rpath}.question"))?;
            let a_idx = as_index(field(r, "answer", &rpath)?, &format!("{rpath}.answer"))?;
            let question = lookup(&questions, q_idx, &format!("{rpath}.question"), "question")?;
            let answer = lookup(&answers, a_idx, &format!("{rpath}.answer"), "answer")?;
            let opts_path = format!("{rpath}.answer_options");
            let options = as_array(field(r, "answer_options", &rpath)?, &opts_path)?
                .iter()
                .enumerate()
                .map(|(oi, o)| {
                    let p = format!("{opts_path}[{oi}]");
                    lookup(&answers, as_index(o, &p)?, &p, "answer").map(str::to_owned)
                })
                .collect::<Result<Vec<_>>>()?;
            if options.is_empty() {
                return Err(schema(opts_path, "no answer options"));
            }
            let gt_path = format!("{rpath}.gt_index");
            let gt_index = as_index(field(r, "gt_index", &rpath)?, &gt_path)?;
            if gt_index >= options.len() {
                return Err(schema(
                    gt_path,
                    format!("gt_index {gt_index} out of range for {} options", options.len()),
                ));
            }
            if options[gt_index] != answer {
                return Err(schema(gt_path, "option at gt_index differs from the answer"));
            }
            if options.iter().filter(|o| *o == answer).count() != 1 {
                return Err(schema(opts_path, "the answer must appear exactly once"));
            }
            let relevance = match r.get("relevance") {
                None => (0..options.len()).map(|i| u8::from(i == gt_index)).collect(),
                Some(v) => {
                    let rel_path = format!("{rpath}.relevance");
                    let flags = as_array(v, &rel_path)?
                        .iter()
                        .enumerate()
                        .map(|(i, f)| match f.as_u64() {
                            Some(0) => Ok(0u8),
                            Some(1) => Ok(1u8),
                            _ => Err(schema(format!("{rel_path}[{i}]"), "expected 0 or 1")),
                        })
                        .collect::<Result<Vec<u8>>>()?;
                    if flags.len() != options.len() || flags[gt_index] != 1 {
                        return Err(schema(rel_path, "must align with options and mark gt_index"));
                    }
                    flags
                }
            };
            rounds.push(Round {
                question: question.to_owned(),
                answer: answer.to_owned(),
                candidates: CandidateSet {
                    options,
                    gt_index,
                    relevance,
                },
            });
        }
        let features = features
            .get(&id)
            .cloned()
            .ok_or_else(|| schema(format!("{dpath}.image_id"), format!("no features for image {id}")))?;
        out.push(DialogueInstance {
            id,
            seed,
            caption: caption.to_owned(),
            features,
            rounds,
            scene: None,
        });
    }
    Ok(out)
}

fn parse_features(v: &Value) -> Result<HashMap<u64, Tensor>> {
    let dim = |key: &str| -> Result<usize> {
        let n = as_index(field(v, key, "$features")?, &format!("$features.{key}"))?;
        if n == 0 {
            return Err(schema(format!("$features.{key}"), "must be positive"));
        }
        Ok(n)
    };
    let (n, h, w) = (dim("feature_len")?, dim("height")?, dim("width")?);
    let map = field(v, "features", "$features")?
        .as_object()
        .ok_or_else(|| schema("$features.features", "expected an object"))?;
    let mut out = HashMap::with_capacity(map.len());
    for (key, arr) in map {
        let path = format!("$features.features.{key}");
        let id: u64 = key
            .parse()
            .map_err(|_| schema(&path, "image id keys must be integers"))?;
        let values = as_array(arr, &path)?
            .iter()
            .enumerate()
            .map(|(i, x)| x.as_f64().ok_or_else(|| schema(format!("{path}[{i}]"), "expected a number")))
            .collect::<Result<Vec<f64>>>()?;
        let tensor = Tensor::new(&[n, h, w], values).map_err(|e| schema(&path, e.to_string()))?;
        out.insert(id, tensor);
    }
    Ok(out)
}

/// Reads a dialogue file plus its feature side file.
pub fn load_visdial_json(path: &Path, features_path: &Path) -> Result<Vec<DialogueInstance>> {
    let dialogs = std::fs::read_to_string(path)?;
    let features = std::fs::read_to_string(features_path)?;
    parse_visdial(&dialogs, &features)
}

fn intern(pool: &mut Vec<String>, index: &mut HashMap<String, usize>, s: &str) -> usize {
    if let Some(&i) = index.get(s) {
        return i;
    }
    pool.push(s.to_owned());
    index.insert(s.to_owned(), pool.len() - 1);
    pool.len() - 1
}

/// Serializes instances to `(dialogue JSON, feature JSON)` strings.
///
/// Pools are ordered by first appearance, so output is deterministic.
pub fn export_visdial(instances: &[DialogueInstance], split: &str) -> Result<(String, String)> {
    let (mut questions, mut q_index) = (Vec::new(), HashMap::new());
    let (mut answers, mut a_index) = (Vec::new(), HashMap::new());
    let mut dialogs = Vec::with_capacity(instances.len());
    let mut feature_map = Map::new();
    let mut dims: Option<Vec<usize>> = None;

    for inst in instances {
        let rounds: Vec<Value> = inst
            .rounds
            .iter()
            .map(|r| {
                let q = intern(&mut questions, &mut q_index, &r.question);
                let a = intern(&mut answers, &mut a_index, &r.answer);
                let opts: Vec<usize> = r
                    .candidates
                    .options
                    .iter()
                    .map(|o| intern(&mut answers, &mut a_index, o))
                    .collect();
                json!({
                    "question": q,
                    "answer": a,
                    "answer_options": opts,
                    "gt_index": r.candidates.gt_index,
                    "relevance": r.candidates.relevance,
                })
            })
            .collect();
        dialogs.push(json!({
            "image_id": inst.id,
            "caption": inst.caption,
            "seed": inst.seed,
            "dialog": rounds,
        }));
        match &dims {
            None => dims = Some(inst.features.shape().to_vec()),
            Some(d) if d.as_slice() != inst.features.shape() => {
                return Err(Error::InvalidArgument(format!(
                    "feature grids disagree in shape: {d:?} vs {:?}",
                    inst.features.shape()
                )))
            }
            Some(_) => {}
        }
        feature_map.insert(inst.id.to_string(), json!(inst.features.data()));
    }

    let doc = json!({
        "version": "1.0",
        "split": split,
        "data": {"questions": questions, "answers": answers, "dialogs": dialogs},
    });
    let dims = dims.unwrap_or_else(|| vec![1, 1, 1]);
    let feats = json!({
        "feature_len": dims[0],
        "height": dims[1],
        "width": dims[2],
        "features": feature_map,
    });
    Ok((serde_json::to_string(&doc)?, serde_json::to_string(&feats)?))
}
