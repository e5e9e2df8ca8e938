//! Evaluation items: loading, validation, and option shuffling.
//!
//! Items arrive as JSONL, one object per line:
//!
//! ```json
//! {"id":"q1","question":"...","image":"path.png",
//!  "options":[{"letter":"A","text":"..."},{"letter":"B","text":"..."}],
//!  "answer":"A","task_type":"multiple_choice","source":"mmb",
//!  "category":{"task":"perception","sub":"VI"}}
//! ```
//!
//! `image` is optional; absent means a text-only item. Yes/no items use the
//! literal tokens `"Yes"`/`"No"` in place of option letters (the loader also
//! normalizes letter-keyed yes/no options to those tokens).

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;

/// Task families items are grouped into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskCategory {
    Perception,
    Reasoning,
    Mastery,
}

/// The ten sub-abilities, four perception, three reasoning, three mastery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubAbility {
    /// Visual identification
    VI,
    /// Text recognition
    TR,
    /// Aesthetic perception
    AP,
    /// Spatial awareness
    SA,
    /// Logical reasoning
    LR,
    /// Scientific reasoning
    SR,
    /// Cross-domain reasoning
    CDR,
    /// Natural sciences
    NS,
    /// Social studies
    SS,
    /// Applied arts
    AA,
}

impl SubAbility {
    /// The task family this sub-ability belongs to.
    pub fn task(self) -> TaskCategory {
        match self {
            SubAbility::VI | SubAbility::TR | SubAbility::AP | SubAbility::SA => {
                TaskCategory::Perception
            }
            SubAbility::LR | SubAbility::SR | SubAbility::CDR => TaskCategory::Reasoning,
            SubAbility::NS | SubAbility::SS | SubAbility::AA => TaskCategory::Mastery,
        }
    }
}

impl fmt::Display for SubAbility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Task/sub-ability pair; `sub` must belong to `task`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CategoryLabel {
    pub task: TaskCategory,
    pub sub: SubAbility,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    MultipleChoice,
    YesNo,
}

/// One answer option: a selection token plus its text. For multiple choice
/// the token is a single uppercase letter; for yes/no it is the literal
/// word `Yes` or `No`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    #[serde(rename = "letter")]
    pub token: String,
    pub text: String,
}

/// One evaluation question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    #[serde(rename = "question")]
    pub question_text: String,
    #[serde(rename = "image", skip_serializing_if = "Option::is_none", default)]
    pub image_ref: Option<String>,
    pub options: Vec<Choice>,
    #[serde(rename = "answer")]
    pub answer_key: String,
    pub task_type: TaskType,
    #[serde(rename = "source")]
    pub source_dataset: String,
    pub category: CategoryLabel,
}

impl Item {
    /// Text of the correct option.
    pub fn answer_text(&self) -> &str {
        &self
            .options
            .iter()
            .find(|c| c.token == self.answer_key)
            .expect("validated item has its answer among the options")
            .text
    }

    /// Tokens of all options, in presentation order.
    pub fn option_tokens(&self) -> Vec<&str> {
        self.options.iter().map(|c| c.token.as_str()).collect()
    }

    pub fn has_option(&self, token: &str) -> bool {
        self.options.iter().any(|c| c.token == token)
    }

    /// The options rendered one per line, `A: text` style.
    pub fn options_block(&self) -> String {
        let mut out = String::new();
        for choice in &self.options {
            out.push_str(&choice.token);
            out.push_str(": ");
            out.push_str(&choice.text);
            out.push('\n');
        }
        out.pop();
        out
    }

    fn validate(&self) -> Result<(), DatasetError> {
        if self.options.len() < 2 {
            return Err(DatasetError::Invalid {
                id: self.id.clone(),
                reason: "fewer than two options".into(),
            });
        }
        let mut seen = Vec::new();
        for choice in &self.options {
            if seen.contains(&choice.token.as_str()) {
                return Err(DatasetError::Invalid {
                    id: self.id.clone(),
                    reason: format!("duplicate option token {:?}", choice.token),
                });
            }
            seen.push(&choice.token);
        }
        match self.task_type {
            TaskType::MultipleChoice => {
                for (i, choice) in self.options.iter().enumerate() {
                    let expected = letter_for_index(i);
                    if choice.token != expected {
                        return Err(DatasetError::Invalid {
                            id: self.id.clone(),
                            reason: format!(
                                "option {} has token {:?}, expected {:?} (contiguous from A)",
                                i, choice.token, expected
                            ),
                        });
                    }
                }
            }
            TaskType::YesNo => {
                let tokens: Vec<&str> = self.options.iter().map(|c| c.token.as_str()).collect();
                if tokens != ["Yes", "No"] {
                    return Err(DatasetError::Invalid {
                        id: self.id.clone(),
                        reason: format!("yes/no item must have options [Yes, No], got {tokens:?}"),
                    });
                }
            }
        }
        if self
            .options
            .iter()
            .filter(|c| c.token == self.answer_key)
            .count()
            != 1
        {
            return Err(DatasetError::InvalidAnswerKey {
                id: self.id.clone(),
                answer: self.answer_key.clone(),
            });
        }
        Ok(())
    }

    /// Yes/no items are accepted with letter tokens (`A`/`B` over texts
    /// Yes/No) and rewritten to the literal word tokens the yes/no system
    /// prompt expects.
    fn normalize(&mut self) -> Result<(), DatasetError> {
        if self.task_type != TaskType::YesNo {
            return Ok(());
        }
        if self.options.len() != 2 {
            return Err(DatasetError::Invalid {
                id: self.id.clone(),
                reason: "yes/no item must have exactly two options".into(),
            });
        }
        let mut tokens = Vec::with_capacity(2);
        for choice in &self.options {
            let word = match choice.text.trim().to_ascii_lowercase().as_str() {
                "yes" => "Yes",
                "no" => "No",
                other => {
                    return Err(DatasetError::Invalid {
                        id: self.id.clone(),
                        reason: format!("yes/no option text must be Yes or No, got {other:?}"),
                    })
                }
            };
            tokens.push(word.to_string());
        }
        if tokens[0] == tokens[1] {
            return Err(DatasetError::Invalid {
                id: self.id.clone(),
                reason: "yes/no item repeats the same option".into(),
            });
        }
        if let Some(pos) = self.options.iter().position(|c| c.token == self.answer_key) {
            self.answer_key = tokens[pos].clone();
        }
        for (choice, token) in self.options.iter_mut().zip(tokens) {
            choice.text = token.clone();
            choice.token = token;
        }
        // Canonical presentation order: Yes then No.
        if self.options[0].token == "No" {
            self.options.swap(0, 1);
        }
        Ok(())
    }
}

fn letter_for_index(i: usize) -> String {
    char::from(b'A' + i as u8).to_string()
}

/// An immutable, id-indexed set of items.
#[derive(Debug, Clone, Default)]
pub struct ItemCollection {
    items: Vec<Item>,
    index: HashMap<String, usize>,
}

impl ItemCollection {
    pub fn new(items: Vec<Item>) -> Result<Self, DatasetError> {
        let mut index = HashMap::with_capacity(items.len());
        for (pos, item) in items.iter().enumerate() {
            item.validate()?;
            if index.insert(item.id.clone(), pos).is_some() {
                return Err(DatasetError::DuplicateId { id: item.id.clone() });
            }
        }
        Ok(Self { items, index })
    }

    pub fn get(&self, id: &str) -> Option<&Item> {
        self.index.get(id).map(|&pos| &self.items[pos])
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Item> {
        self.items.iter()
    }

    /// Serialize back to the JSONL schema, one item per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), DatasetError> {
        for item in &self.items {
            let line = serde_json::to_string(item).map_err(|e| DatasetError::Invalid {
                id: item.id.clone(),
                reason: e.to_string(),
            })?;
            writeln!(out, "{line}").map_err(DatasetError::Io)?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate item id {id:?}")]
    DuplicateId { id: String },
    #[error("item {id:?}: answer key {answer:?} does not name exactly one option")]
    InvalidAnswerKey { id: String, answer: String },
    #[error("item {id:?}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("option shuffling does not apply to yes/no items")]
    NotApplicable,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Load and validate a JSONL item file.
pub fn load_items(path: &Path) -> Result<ItemCollection, DatasetError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut item: Item = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            line: lineno + 1,
            reason: e.to_string(),
        })?;
        item.normalize()?;
        items.push(item);
    }
    ItemCollection::new(items)
}

/// Permute a multiple-choice item's options with a seeded Fisher-Yates
/// shuffle, remapping the answer key so it still names the correct text.
/// Letters stay contiguous from `A`; only the texts move.
pub fn shuffle_options(item: &Item, shuffle_seed: u64) -> Result<Item, DatasetError> {
    if item.task_type != TaskType::MultipleChoice {
        return Err(DatasetError::NotApplicable);
    }
    let n = item.options.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = seed::stream(shuffle_seed, &["shuffle-options", &item.id], 0);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let mut shuffled = item.clone();
    let mut new_answer = None;
    for (slot, &src) in perm.iter().enumerate() {
        shuffled.options[slot] = Choice {
            token: letter_for_index(slot),
            text: item.options[src].text.clone(),
        };
        if item.options[src].token == item.answer_key {
            new_answer = Some(letter_for_index(slot));
        }
    }
    shuffled.answer_key = new_answer.expect("answer option survives the permutation");
    Ok(shuffled)
}

#[cfg(test)]
pub(crate) fn mc_item(id: &str, n_options: usize, answer: usize) -> Item {
    let options = (0..n_options)
        .map(|i| Choice {
            token: letter_for_index(i),
            text: format!("option text {i}"),
        })
        .collect();
    Item {
        id: id.to_string(),
        question_text: format!("question for {id}?"),
        image_ref: None,
        options,
        answer_key: letter_for_index(answer),
        task_type: TaskType::MultipleChoice,
        source_dataset: "unit".into(),
        category: CategoryLabel {
            task: TaskCategory::Perception,
            sub: SubAbility::VI,
        },
    }
}

#[cfg(test)]
pub(crate) fn yesno_item(id: &str, answer_yes: bool) -> Item {
    Item {
        id: id.to_string(),
        question_text: format!("is {id} blue?"),
        image_ref: None,
        options: vec![
            Choice { token: "Yes".into(), text: "Yes".into() },
            Choice { token: "No".into(), text: "No".into() },
        ],
        answer_key: if answer_yes { "Yes".into() } else { "No".into() },
        task_type: TaskType::YesNo,
        source_dataset: "unit".into(),
        category: CategoryLabel {
            task: TaskCategory::Perception,
            sub: SubAbility::VI,
        },
    }
}
