//! Templated question/answer generation over random scenes.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{render_features, Color, Object, Scene, Shape, Size, CODE_LEN};
use super::{CandidateSet, DialogueInstance, Round};
use crate::error::{Error, Result};

/// Parameters of one generated split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub dialogues: usize,
    pub rounds: usize,
    pub candidates: usize,
    pub grid_height: usize,
    pub grid_width: usize,
    pub feature_len: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// First dialogue id; splits use disjoint id ranges.
    pub id_offset: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            dialogues: 2000,
            rounds: 5,
            candidates: 20,
            grid_height: 4,
            grid_width: 4,
            feature_len: 64,
            min_objects: 1,
            max_objects: 6,
            id_offset: 0,
        }
    }
}

impl DatasetSpec {
    fn validate(&self) -> Result<()> {
        let cells = self.grid_height * self.grid_width;
        let problem = if self.dialogues == 0 {
            Some("at least one dialogue is required".to_string())
        } else if self.rounds == 0 {
            Some("at least one round is required".to_string())
        } else if self.candidates < 2 {
            Some("at least two candidates are required".to_string())
        } else if cells == 0 {
            Some("grid must have at least one cell".to_string())
        } else if self.min_objects == 0 || self.min_objects > self.max_objects {
            Some(format!(
                "object range {}..={} is empty or allows empty scenes",
                self.min_objects, self.max_objects
            ))
        } else if self.max_objects > cells {
            Some(format!("{} objects do not fit in {cells} cells", self.max_objects))
        } else if self.max_objects >= NUMBER_WORDS.len() {
            Some(format!("counts above {} have no answer words", NUMBER_WORDS.len() - 1))
        } else if self.feature_len < CODE_LEN {
            Some(format!("feature length must be at least {CODE_LEN}"))
        } else {
            None
        };
        match problem {
            Some(p) => Err(Error::Infeasible(p)),
            None => Ok(()),
        }
    }
}

const NUMBER_WORDS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

/// What an answer asserts, independent of its wording.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Meaning {
    Yes,
    No,
    Count(usize),
    Color(Color),
    Size(Size),
}

impl Meaning {
    /// Every surface form the generator uses for this meaning.
    pub fn variants(self) -> Vec<String> {
        match self {
            Meaning::Yes => vec!["yes".into(), "yes there is".into(), "yes i see one".into()],
            Meaning::No => vec!["no".into(), "no there is not".into(), "nope".into()],
            Meaning::Count(n) => {
                let w = NUMBER_WORDS[n];
                vec![w.to_string(), format!("i see {w}"), format!("i count {w}")]
            }
            Meaning::Color(c) => {
                let w = c.word();
                vec![w.to_string(), format!("it is {w}"), format!("{w} i think")]
            }
            Meaning::Size(s) => {
                let w = s.word();
                vec![w.to_string(), format!("it is {w}"), format!("it looks {w}")]
            }
        }
    }

    fn all() -> impl Iterator<Item = Meaning> {
        [Meaning::Yes, Meaning::No]
            .into_iter()
            .chain((0..NUMBER_WORDS.len()).map(Meaning::Count))
            .chain(Color::ALL.into_iter().map(Meaning::Color))
            .chain(Size::ALL.into_iter().map(Meaning::Size))
    }

    /// Looks up the meaning of a templated answer string.
    pub fn of_answer(answer: &str) -> Option<Meaning> {
        let answer = answer.trim();
        Self::all().find(|m| m.variants().iter().any(|v| v == answer))
    }
}

/// Template-level equivalence: same meaning, or identical strings.
pub fn answers_equivalent(a: &str, b: &str) -> bool {
    if a == b {
        return true;
    }
    match (Meaning::of_answer(a), Meaning::of_answer(b)) {
        (Some(x), Some(y)) => x == y,
        _ => false,
    }
}

/// The question templates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuestionKind {
    Exists { color: Color, shape: Shape },
    Count { shape: Shape },
    ColorOf { size: Option<Size>, shape: Shape },
    SizeOf { color: Color, shape: Shape },
    /// Follow-up whose answer depends on which shapes the history mentioned.
    AnythingElse,
}

impl QuestionKind {
    pub fn text(self) -> String {
        match self {
            QuestionKind::Exists { color, shape } => {
                format!("is there a {} {}", color.word(), shape.word())
            }
            QuestionKind::Count { shape } => format!("how many {} are there", shape.plural()),
            QuestionKind::ColorOf { size: None, shape } => {
                format!("what color is the {}", shape.word())
            }
            QuestionKind::ColorOf {
                size: Some(size),
                shape,
            } => format!("what color is the {} {}", size.word(), shape.word()),
            QuestionKind::SizeOf { color, shape } => {
                format!("what size is the {} {}", color.word(), shape.word())
            }
            QuestionKind::AnythingElse => "is there anything else".into(),
        }
    }

    pub fn shape(self) -> Option<Shape> {
        match self {
            QuestionKind::Exists { shape, .. }
            | QuestionKind::Count { shape }
            | QuestionKind::ColorOf { shape, .. }
            | QuestionKind::SizeOf { shape, .. } => Some(shape),
            QuestionKind::AnythingElse => None,
        }
    }

    /// Ground-truth meaning given the scene and the shapes mentioned so far.
    pub fn answer(self, scene: &Scene, mentioned: &BTreeSet<Shape>) -> Meaning {
        let yes_no = |b: bool| if b { Meaning::Yes } else { Meaning::No };
        match self {
            QuestionKind::Exists { color, shape } => {
                yes_no(scene.count_where(|o| o.color == color && o.shape == shape) > 0)
            }
            QuestionKind::Count { shape } => Meaning::Count(scene.count_where(|o| o.shape == shape)),
            QuestionKind::ColorOf { size, shape } => {
                let obj = scene
                    .objects()
                    .find(|o| o.shape == shape && size.is_none_or(|s| o.size == s));
                Meaning::Color(obj.map_or(Color::Red, |o| o.color))
            }
            QuestionKind::SizeOf { color, shape } => {
                let obj = scene.objects().find(|o| o.shape == shape && o.color == color);
                Meaning::Size(obj.map_or(Size::Small, |o| o.size))
            }
            QuestionKind::AnythingElse => {
                yes_no(scene.objects().any(|o| !mentioned.contains(&o.shape)))
            }
        }
    }
}

/// `splitmix64`-style mixing so every (seed, dialogue, purpose) gets its own stream.
pub(crate) fn derive_seed(seed: u64, id: u64, purpose: u64) -> u64 {
    let mut z = seed
        .wrapping_add(id.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(purpose.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn random_object(rng: &mut ChaCha8Rng) -> Object {
    Object {
        shape: *Shape::ALL.choose(rng).expect("non-empty"),
        color: *Color::ALL.choose(rng).expect("non-empty"),
        size: *Size::ALL.choose(rng).expect("non-empty"),
    }
}

fn random_scene(spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Scene {
    let cells = spec.grid_height * spec.grid_width;
    let count = rng.gen_range(spec.min_objects..=spec.max_objects);
    let mut grid = vec![None; cells];
    for pos in rand::seq::index::sample(rng, cells, count).into_vec() {
        grid[pos] = Some(random_object(rng));
    }
    Scene::new(spec.grid_height, spec.grid_width, grid).expect("at least one object placed")
}

fn pick_question(scene: &Scene, round: usize, rng: &mut ChaCha8Rng) -> QuestionKind {
    let objects: Vec<Object> = scene.objects().collect();
    let roll = rng.gen_range(0..100);
    let target = *objects.choose(rng).expect("scenes are non-empty");
    if round > 0 && roll < 20 {
        return QuestionKind::AnythingElse;
    }
    if roll < 45 {
        if rng.gen_bool(0.5) {
            return QuestionKind::Exists {
                color: target.color,
                shape: target.shape,
            };
        }
        return QuestionKind::Exists {
            color: *Color::ALL.choose(rng).expect("non-empty"),
            shape: *Shape::ALL.choose(rng).expect("non-empty"),
        };
    }
    if roll < 75 {
        return QuestionKind::Count {
            shape: *Shape::ALL.choose(rng).expect("non-empty"),
        };
    }
    if roll < 90 {
        if scene.count_where(|o| o.shape == target.shape) == 1 {
            return QuestionKind::ColorOf {
                size: None,
                shape: target.shape,
            };
        }
        if scene.count_where(|o| o.shape == target.shape && o.size == target.size) == 1 {
            return QuestionKind::ColorOf {
                size: Some(target.size),
                shape: target.shape,
            };
        }
        return QuestionKind::Count {
            shape: target.shape,
        };
    }
    if scene.count_where(|o| o.shape == target.shape && o.color == target.color) == 1 {
        return QuestionKind::SizeOf {
            color: target.color,
            shape: target.shape,
        };
    }
    QuestionKind::Exists {
        color: target.color,
        shape: target.shape,
    }
}

/// Candidate responses for one round: the positive plus `n - 1` distinct
/// negatives drawn from the other answers in `pool`, with the positive at a
/// seeded position.
pub fn sample_candidates(answer: &str, pool: &[String], n: usize, seed: u64) -> Result<CandidateSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("candidate count must be positive".into()));
    }
    let distinct: BTreeSet<&str> = pool.iter().map(String::as_str).collect();
    let others: Vec<&str> = distinct.into_iter().filter(|&a| a != answer).collect();
    if others.len() < n - 1 {
        return Err(Error::Infeasible(format!(
            "answer pool has {} alternatives to `{answer}`, need {}",
            others.len(),
            n - 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut options: Vec<String> = others
        .choose_multiple(&mut rng, n - 1)
        .map(|s| s.to_string())
        .collect();
    let gt_index = rng.gen_range(0..n);
    options.insert(gt_index, answer.to_string());
    let relevance = options
        .iter()
        .map(|o| u8::from(answers_equivalent(o, answer)))
        .collect();
    Ok(CandidateSet {
        options,
        gt_index,
        relevance,
    })
}

struct DraftRound {
    question: String,
    answer: String,
}

struct Draft {
    id: u64,
    scene: Scene,
    caption: String,
    rounds: Vec<DraftRound>,
}

fn draft_dialogue(spec: &DatasetSpec, seed: u64, id: u64) -> Draft {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, id, 0));
    let scene = random_scene(spec, &mut rng);
    let objects: Vec<Object> = scene.objects().collect();
    let featured = *objects.choose(&mut rng).expect("scenes are non-empty");
    let caption = format!(
        "a picture with a {} {} {}",
        featured.size.word(),
        featured.color.word(),
        featured.shape.word()
    );
    let mut mentioned = BTreeSet::from([featured.shape]);
    let mut rounds = Vec::with_capacity(spec.rounds);
    for round in 0..spec.rounds {
        let kind = pick_question(&scene, round, &mut rng);
        let meaning = kind.answer(&scene, &mentioned);
        let answer = meaning.variants().choose(&mut rng).expect("non-empty").clone();
        if let Some(shape) = kind.shape() {
            mentioned.insert(shape);
        }
        rounds.push(DraftRound {
            question: kind.text(),
            answer,
        });
    }
    Draft {
        id,
        scene,
        caption,
        rounds,
    }
}

/// Generates one split. Output depends only on `(spec, seed)`.
pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> Result<Vec<DialogueInstance>> {
    spec.validate()?;
    let drafts: Vec<Draft> = (0..spec.dialogues as u64)
        .map(|i| draft_dialogue(spec, seed, spec.id_offset + i))
        .collect();

    let pool: Vec<String> = drafts
        .iter()
        .flat_map(|d| d.rounds.iter().map(|r| r.answer.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if pool.len() < spec.candidates {
        return Err(Error::Infeasible(format!(
            "{} candidates requested but only {} distinct answers were generated",
            spec.candidates,
            pool.len()
        )));
    }

    drafts
        .into_iter()
        .map(|d| {
            let features = render_features(&d.scene, spec.feature_len)?;
            let rounds = d
                .rounds
                .into_iter()
                .enumerate()
                .map(|(t, r)| {
                    let cand_seed = derive_seed(seed, d.id, 1 + t as u64);
                    let candidates = sample_candidates(&r.answer, &pool, spec.candidates, cand_seed)?;
                    Ok(Round {
                        question: r.question,
                        answer: r.answer,
                        candidates,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(DialogueInstance {
                id: d.id,
                seed,
                caption: d.caption,
                features,
                rounds,
                scene: Some(d.scene),
            })
        })
        .collect()
}

/// Recovers a question's template from its text.
pub fn parse_question(text: &str) -> Option<QuestionKind> {
    let words: Vec<&str> = text.split_whitespace().collect();
    match words.as_slice() {
        ["is", "there", "anything", "else"] => Some(QuestionKind::AnythingElse),
        ["is", "there", "a", color, shape] => Some(QuestionKind::Exists {
            color: Color::parse(color)?,
            shape: Shape::parse(shape)?,
        }),
        ["how", "many", shapes, "are", "there"] => Some(QuestionKind::Count {
            shape: Shape::parse(shapes)?,
        }),
        ["what", "color", "is", "the", shape] => Some(QuestionKind::ColorOf {
            size: None,
            shape: Shape::parse(shape)?,
        }),
        ["what", "color", "is", "the", size, shape] => Some(QuestionKind::ColorOf {
            size: Some(Size::parse(size)?),
            shape: Shape::parse(shape)?,
        }),
        ["what", "size", "is", "the", color, shape] => Some(QuestionKind::SizeOf {
            color: Color::parse(color)?,
            shape: Shape::parse(shape)?,
        }),
        _ => None,
    }
}
