//! Interactive question answering about one scene.

use std::io::{BufRead, Write};

use super::data::ids;
use super::inspect::greedy_answer;
use crate::error::Result;
use crate::model::{EncodedRound, Model};
use crate::numerics::Tensor;
use crate::synthworld::DialogueInstance;
use crate::text::{MaxLengths, Vocabulary};

pub const HELP: &str = "Type a question and press enter. Directives: :reset clears the dialogue history, :quit exits.";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ChatReply {
    Answer(String),
    /// Empty input; nothing changed.
    Reprompt,
    Reset,
    Quit,
    Help(String),
}

pub struct ChatSession<'a> {
    model: &'a Model,
    vocab: &'a Vocabulary,
    max: MaxLengths,
    dialogue: u64,
    image: Tensor,
    caption: Vec<usize>,
    history: Vec<Vec<usize>>,
}

impl<'a> ChatSession<'a> {
    pub fn new(model: &'a Model, vocab: &'a Vocabulary, max: MaxLengths, inst: &DialogueInstance) -> Result<Self> {
        let n = inst.features.shape()[0];
        let image = inst.features.reshape(&[n, inst.features.len() / n])?;
        let caption = ids(&inst.caption, vocab, max.caption);
        Ok(Self {
            model,
            vocab,
            dialogue: inst.id,
            image,
            history: vec![caption.clone()],
            caption,
            max,
        })
    }

    /// Caption plus one entry per answered question.
    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Answers greedily and appends the exchange to the history.
    pub fn ask(&mut self, question: &str) -> Result<String> {
        let round = EncodedRound {
            dialogue: self.dialogue,
            round: self.history.len() - 1,
            image: self.image.clone(),
            question: ids(question, self.vocab, self.max.question),
            history: self.history.clone(),
            answer: Vec::new(),
            candidates: Vec::new(),
            gt_index: 0,
            relevance: Vec::new(),
        };
        let answer = greedy_answer(self.model, self.vocab, &round)?;
        self.history.push(ids(
            &format!("{question} {answer}"),
            self.vocab,
            self.max.question + self.max.answer,
        ));
        Ok(answer)
    }

    pub fn reset(&mut self) {
        self.history = vec![self.caption.clone()];
    }

    pub fn handle(&mut self, line: &str) -> Result<ChatReply> {
        let line = line.trim();
        if line.is_empty() {
            return Ok(ChatReply::Reprompt);
        }
        if let Some(directive) = line.strip_prefix(':') {
            return Ok(match directive {
                "quit" => ChatReply::Quit,
                "reset" => {
                    self.reset();
                    ChatReply::Reset
                }
                _ => ChatReply::Help(format!("unknown directive `{line}`. {HELP}")),
            });
        }
        Ok(ChatReply::Answer(self.ask(line)?))
    }
}

/// Reads lines until `:quit` or end of input.
pub fn run_chat<R: BufRead, W: Write>(session: &mut ChatSession<'_>, input: R, mut output: W) -> Result<()> {
    writeln!(output, "{HELP}")?;
    write!(output, "> ")?;
    output.flush()?;
    for line in input.lines() {
        match session.handle(&line?)? {
            ChatReply::Quit => return Ok(()),
            ChatReply::Answer(a) => writeln!(output, "{a}")?,
            ChatReply::Reset => writeln!(output, "(history cleared)")?,
            ChatReply::Help(h) => writeln!(output, "{h}")?,
            ChatReply::Reprompt => {}
        }
        write!(output, "> ")?;
        output.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::synthworld::{generate_dataset, DatasetSpec};
    use crate::text::build_vocab;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Model, Vocabulary, DialogueInstance) {
        let spec = DatasetSpec {
            dialogues: 30,
            candidates: 8,
            feature_len: 12,
            ..DatasetSpec::default()
        };
        let data = generate_dataset(&spec, 4).unwrap();
        let vocab = build_vocab(&super::super::data::corpus(&data), 1).unwrap();
        let cfg = ModelConfig {
            embed_dim: 8,
            hidden: 12,
            i_max: 2,
            max_answer_len: 4,
        };
        let model = Model::new(cfg, vocab.len(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        (model, vocab, data[0].clone())
    }

    #[test]
    fn directives_and_history() {
        let (model, vocab, inst) = setup();
        let mut s = ChatSession::new(&model, &vocab, MaxLengths::default(), &inst).unwrap();
        assert_eq!(s.handle("   ").unwrap(), ChatReply::Reprompt);
        assert_eq!(s.history_len(), 1);
        assert!(matches!(s.handle("how many circles are there").unwrap(), ChatReply::Answer(_)));
        assert_eq!(s.history_len(), 2);
        assert!(matches!(s.handle(":bogus").unwrap(), ChatReply::Help(h) if h.contains(":quit")));
        assert_eq!(s.history_len(), 2);
        assert_eq!(s.handle(":reset").unwrap(), ChatReply::Reset);
        assert_eq!(s.history_len(), 1);
        assert_eq!(s.handle(":quit").unwrap(), ChatReply::Quit);
    }

    #[test]
    fn answers_are_deterministic() {
        let (model, vocab, inst) = setup();
        let mut a = ChatSession::new(&model, &vocab, MaxLengths::default(), &inst).unwrap();
        let mut b = ChatSession::new(&model, &vocab, MaxLengths::default(), &inst).unwrap();
        for q in ["is there a red circle", "is there anything else"] {
            assert_eq!(a.ask(q).unwrap(), b.ask(q).unwrap());
        }
    }

    #[test]
    fn loop_stops_at_quit() {
        let (model, vocab, inst) = setup();
        let mut s = ChatSession::new(&model, &vocab, MaxLengths::default(), &inst).unwrap();
        let input = "\nwhat color is the square\n:nope\n:quit\nnever read\n";
        let mut out = Vec::new();
        run_chat(&mut s, input.as_bytes(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("unknown directive"));
        assert_eq!(s.history_len(), 2);
    }
}
