//! Dataset splits, vocabulary and token-id encoding of rounds.

use std::path::Path;

use super::config::DataConfig;
use crate::error::{Error, Result};
use crate::model::EncodedRound;
use crate::synthworld::{export_visdial, generate_dataset, load_visdial_json, DialogueInstance};
use crate::text::{build_vocab, encode, tokenize, MaxLengths, Vocabulary, UNK};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<DialogueInstance>,
    pub val: Vec<DialogueInstance>,
    pub test: Vec<DialogueInstance>,
}

impl Splits {
    pub fn get(&self, split: &str) -> Result<&[DialogueInstance]> {
        match split {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::NotFound(format!("split `{other}`"))),
        }
    }
}

/// Generates all three splits, or loads them when `config.dir` is set.
pub fn load_splits(config: &DataConfig, seed: u64) -> Result<Splits> {
    if let Some(dir) = &config.dir {
        return read_splits(dir);
    }
    Ok(Splits {
        train: generate_dataset(&config.train, seed)?,
        val: generate_dataset(&config.val, seed)?,
        test: generate_dataset(&config.test, seed)?,
    })
}

pub fn split_files(dir: &Path, split: &str) -> (std::path::PathBuf, std::path::PathBuf) {
    (dir.join(format!("{split}.json")), dir.join(format!("{split}_features.json")))
}

pub fn read_splits(dir: &Path) -> Result<Splits> {
    let read = |split: &str| {
        let (d, f) = split_files(dir, split);
        load_visdial_json(&d, &f)
    };
    Ok(Splits {
        train: read("train")?,
        val: read("val")?,
        test: read("test")?,
    })
}

/// Writes every split as VisDial JSON plus its feature file, and the vocabulary.
pub fn write_splits(dir: &Path, splits: &Splits, vocab: &Vocabulary) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for split in SPLITS {
        let (dialogs, features) = export_visdial(splits.get(split)?, split)?;
        let (d, f) = split_files(dir, split);
        std::fs::write(d, dialogs)?;
        std::fs::write(f, features)?;
    }
    std::fs::write(dir.join("vocab.txt"), vocab.to_text())?;
    Ok(())
}

/// Token streams from captions, questions, answers and candidate options.
pub fn corpus(instances: &[DialogueInstance]) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for inst in instances {
        out.push(tokenize(&inst.caption));
        for r in &inst.rounds {
            out.push(tokenize(&r.question));
            out.push(tokenize(&r.answer));
            for o in &r.candidates.options {
                out.push(tokenize(o));
            }
        }
    }
    out
}

pub fn train_vocab(splits: &Splits, min_count: usize) -> Result<Vocabulary> {
    build_vocab(&corpus(&splits.train), min_count)
}

/// Encoded ids, with text that has no words mapped to a lone UNK.
pub(crate) fn ids(text: &str, vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    let ids = encode(text, vocab, max_len).ids;
    if ids.is_empty() {
        vec![UNK]
    } else {
        ids
    }
}

pub fn encode_dialogue(inst: &DialogueInstance, vocab: &Vocabulary, max: &MaxLengths) -> Result<Vec<EncodedRound>> {
    let shape = inst.features.shape();
    let n = shape[0];
    let image = inst.features.reshape(&[n, inst.features.len() / n])?;
    let mut history = vec![ids(&inst.caption, vocab, max.caption)];
    let mut out = Vec::with_capacity(inst.rounds.len());
    for (t, r) in inst.rounds.iter().enumerate() {
        let answer = ids(&r.answer, vocab, max.answer);
        out.push(EncodedRound {
            dialogue: inst.id,
            round: t,
            image: image.clone(),
            question: ids(&r.question, vocab, max.question),
            history: history.clone(),
            answer,
            candidates: r.candidates.options.iter().map(|o| ids(o, vocab, max.answer)).collect(),
            gt_index: r.candidates.gt_index,
            relevance: r.candidates.relevance.clone(),
        });
        history.push(ids(&format!("{} {}", r.question, r.answer), vocab, max.question + max.answer));
    }
    Ok(out)
}

pub fn encode_split(instances: &[DialogueInstance], vocab: &Vocabulary, max: &MaxLengths) -> Result<Vec<EncodedRound>> {
    let mut out = Vec::new();
    for inst in instances {
        out.extend(encode_dialogue(inst, vocab, max)?);
    }
    Ok(out)
}
