use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::TokenId;

use super::CorpusError;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const THINK_OPEN: TokenId = 2;
pub const THINK_CLOSE: TokenId = 3;
pub const BOX_OPEN: TokenId = 4;
pub const BOX_CLOSE: TokenId = 5;
pub const SEP: TokenId = 6;
const DIGIT_BASE: TokenId = 7;
pub const PLUS: TokenId = 17;
pub const MINUS: TokenId = 18;
pub const TIMES: TokenId = 19;
pub const EQUALS: TokenId = 20;
const WORD_BASE: TokenId = 21;

pub const SUBJECTS: u8 = 12;
pub const VERBS: u8 = 8;
pub const PREFIX_LEN: u8 = 4;
/// subjects, verbs, question marker, step terminator, think prefix
pub const WORDS_PER_DIALECT: TokenId = SUBJECTS as TokenId + VERBS as TokenId + 2 + PREFIX_LEN as TokenId;

const SLOT_QUESTION: u8 = SUBJECTS + VERBS;
const SLOT_STEP_END: u8 = SLOT_QUESTION + 1;
const SLOT_PREFIX: u8 = SLOT_STEP_END + 1;

/// A surface dialect. Index 0 is the high-resource dialect `H`; indices
/// `1..=K` are the low-resource dialects `L1..LK`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Dialect(pub u8);

impl Dialect {
    pub const HIGH: Dialect = Dialect(0);

    pub fn is_high(self) -> bool {
        self.0 == 0
    }

    pub fn name(self) -> String {
        if self.is_high() {
            "H".to_string()
        } else {
            format!("L{}", self.0)
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        if name == "H" {
            return Some(Self::HIGH);
        }
        let n: u8 = name.strip_prefix('L')?.parse().ok()?;
        (n > 0 && name == format!("L{n}")).then_some(Dialect(n))
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Operator {
    Plus,
    Minus,
    Times,
}

impl Operator {
    pub const ALL: [Operator; 3] = [Operator::Plus, Operator::Minus, Operator::Times];

    pub fn apply(self, a: i64, b: i64) -> i64 {
        match self {
            Operator::Plus => a + b,
            Operator::Minus => a - b,
            Operator::Times => a * b,
        }
    }

    pub fn token(self) -> TokenId {
        match self {
            Operator::Plus => PLUS,
            Operator::Minus => MINUS,
            Operator::Times => TIMES,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Operator::Plus => '+',
            Operator::Minus => '-',
            Operator::Times => '*',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WordSlot {
    Subject(u8),
    Verb(u8),
    Question,
    StepEnd,
    Prefix(u8),
}

impl WordSlot {
    fn index(self) -> u8 {
        match self {
            WordSlot::Subject(i) => i,
            WordSlot::Verb(i) => SUBJECTS + i,
            WordSlot::Question => SLOT_QUESTION,
            WordSlot::StepEnd => SLOT_STEP_END,
            WordSlot::Prefix(i) => SLOT_PREFIX + i,
        }
    }

    fn from_index(i: u8) -> Self {
        match i {
            i if i < SUBJECTS => WordSlot::Subject(i),
            i if i < SLOT_QUESTION => WordSlot::Verb(i - SUBJECTS),
            SLOT_QUESTION => WordSlot::Question,
            SLOT_STEP_END => WordSlot::StepEnd,
            i => WordSlot::Prefix(i - SLOT_PREFIX),
        }
    }

    fn valid(self) -> bool {
        match self {
            WordSlot::Subject(i) => i < SUBJECTS,
            WordSlot::Verb(i) => i < VERBS,
            WordSlot::Prefix(i) => i < PREFIX_LEN,
            _ => true,
        }
    }
}

/// Decoded form of one token id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Token {
    Bos,
    Eos,
    ThinkOpen,
    ThinkClose,
    BoxOpen,
    BoxClose,
    Sep,
    Digit(u8),
    Op(Operator),
    Equals,
    Word { dialect: Dialect, slot: WordSlot },
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Bos => f.write_str("<bos>"),
            Token::Eos => f.write_str("<eos>"),
            Token::ThinkOpen => f.write_str("<think>"),
            Token::ThinkClose => f.write_str("</think>"),
            Token::BoxOpen => f.write_str("<box>"),
            Token::BoxClose => f.write_str("</box>"),
            Token::Sep => f.write_str("<sep>"),
            Token::Digit(d) => write!(f, "{d}"),
            Token::Op(op) => write!(f, "{}", op.symbol()),
            Token::Equals => f.write_str("="),
            Token::Word { dialect, slot } => match slot {
                WordSlot::Subject(i) => write!(f, "{dialect}.subj{i}"),
                WordSlot::Verb(i) => write!(f, "{dialect}.verb{i}"),
                WordSlot::Question => write!(f, "{dialect}.what"),
                WordSlot::StepEnd => write!(f, "{dialect}.then"),
                WordSlot::Prefix(i) => write!(f, "{dialect}.pre{i}"),
            },
        }
    }
}

/// Token id layout: specials, shared math tokens, then one disjoint word
/// partition per dialect.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vocab {
    n_low: u8,
}

impl Vocab {
    /// Vocabulary with `H` plus `n_low` low-resource dialects.
    pub fn new(n_low: u8) -> Self {
        Self { n_low }
    }

    pub fn n_low(&self) -> u8 {
        self.n_low
    }

    pub fn size(&self) -> usize {
        (WORD_BASE + WORDS_PER_DIALECT * (self.n_low as TokenId + 1)) as usize
    }

    pub fn dialects(&self) -> impl Iterator<Item = Dialect> {
        (0..=self.n_low).map(Dialect)
    }

    pub fn low_dialects(&self) -> impl Iterator<Item = Dialect> {
        (1..=self.n_low).map(Dialect)
    }

    pub fn check_dialect(&self, d: Dialect) -> Result<(), CorpusError> {
        if d.0 <= self.n_low {
            Ok(())
        } else {
            Err(CorpusError::UnknownDialect(d.name()))
        }
    }

    pub fn parse_dialect(&self, name: &str) -> Result<Dialect, CorpusError> {
        let d = Dialect::parse(name).ok_or_else(|| CorpusError::UnknownDialect(name.to_string()))?;
        self.check_dialect(d)?;
        Ok(d)
    }

    /// Half-open id range of a dialect's word partition.
    pub fn partition(&self, d: Dialect) -> std::ops::Range<TokenId> {
        let start = WORD_BASE + WORDS_PER_DIALECT * d.0 as TokenId;
        start..start + WORDS_PER_DIALECT
    }

    /// Dialect owning `id`, or `None` for special and shared tokens.
    pub fn dialect_of(&self, id: TokenId) -> Option<Dialect> {
        if id < WORD_BASE || id as usize >= self.size() {
            return None;
        }
        Some(Dialect(((id - WORD_BASE) / WORDS_PER_DIALECT) as u8))
    }

    pub fn word(&self, d: Dialect, slot: WordSlot) -> TokenId {
        self.partition(d).start + slot.index() as TokenId
    }

    pub fn digit(d: u8) -> TokenId {
        DIGIT_BASE + d as TokenId
    }

    pub fn digit_value(id: TokenId) -> Option<u8> {
        (DIGIT_BASE..DIGIT_BASE + 10)
            .contains(&id)
            .then(|| (id - DIGIT_BASE) as u8)
    }

    pub fn encode(&self, token: Token) -> Result<TokenId, CorpusError> {
        Ok(match token {
            Token::Bos => BOS,
            Token::Eos => EOS,
            Token::ThinkOpen => THINK_OPEN,
            Token::ThinkClose => THINK_CLOSE,
            Token::BoxOpen => BOX_OPEN,
            Token::BoxClose => BOX_CLOSE,
            Token::Sep => SEP,
            Token::Digit(d) if d < 10 => Self::digit(d),
            Token::Digit(d) => return Err(CorpusError::Encode(format!("digit {d}"))),
            Token::Op(op) => op.token(),
            Token::Equals => EQUALS,
            Token::Word { dialect, slot } => {
                self.check_dialect(dialect)?;
                if !slot.valid() {
                    return Err(CorpusError::Encode(format!("{slot:?}")));
                }
                self.word(dialect, slot)
            }
        })
    }

    pub fn decode(&self, id: TokenId) -> Result<Token, CorpusError> {
        Ok(match id {
            BOS => Token::Bos,
            EOS => Token::Eos,
            THINK_OPEN => Token::ThinkOpen,
            THINK_CLOSE => Token::ThinkClose,
            BOX_OPEN => Token::BoxOpen,
            BOX_CLOSE => Token::BoxClose,
            SEP => Token::Sep,
            PLUS => Token::Op(Operator::Plus),
            MINUS => Token::Op(Operator::Minus),
            TIMES => Token::Op(Operator::Times),
            EQUALS => Token::Equals,
            id if Self::digit_value(id).is_some() => Token::Digit(Self::digit_value(id).unwrap()),
            id => {
                let dialect = self.dialect_of(id).ok_or(CorpusError::Decode(id))?;
                let slot = WordSlot::from_index((id - self.partition(dialect).start) as u8);
                Token::Word { dialect, slot }
            }
        })
    }

    pub fn encode_all(&self, tokens: &[Token]) -> Result<Vec<TokenId>, CorpusError> {
        tokens.iter().map(|&t| self.encode(t)).collect()
    }

    pub fn decode_all(&self, ids: &[TokenId]) -> Result<Vec<Token>, CorpusError> {
        ids.iter().map(|&id| self.decode(id)).collect()
    }

    /// Space-separated human-readable form; unknown ids print as `?id`.
    pub fn to_text(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| match self.decode(id) {
                Ok(t) => t.to_string(),
                Err(_) => format!("?{id}"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Tokens of an integer: optional minus, then decimal digits.
    pub fn number(value: i64) -> Vec<TokenId> {
        let mut out = Vec::new();
        if value < 0 {
            out.push(MINUS);
        }
        out.extend(value.unsigned_abs().to_string().bytes().map(|b| Self::digit(b - b'0')));
        out
    }

    pub fn think_prefix(&self, d: Dialect) -> Result<Vec<TokenId>, CorpusError> {
        self.check_dialect(d)?;
        Ok((0..PREFIX_LEN).map(|i| self.word(d, WordSlot::Prefix(i))).collect())
    }

    pub fn to_file(&self) -> VocabFile {
        VocabFile {
            size: self.size(),
            specials: Specials {
                bos: BOS,
                eos: EOS,
                think_open: THINK_OPEN,
                think_close: THINK_CLOSE,
                box_open: BOX_OPEN,
                box_close: BOX_CLOSE,
                sep: SEP,
            },
            digits: (0..10).map(Self::digit).collect(),
            operators: Operators {
                plus: PLUS,
                minus: MINUS,
                times: TIMES,
                equals: EQUALS,
            },
            dialects: self
                .dialects()
                .map(|d| DialectEntry {
                    name: d.name(),
                    start: self.partition(d).start,
                    end: self.partition(d).end,
                    step_end: self.word(d, WordSlot::StepEnd),
                    think_prefix: self.think_prefix(d).unwrap(),
                })
                .collect(),
        }
    }

    /// Rebuilds a vocabulary from its sidecar file, checking the layout.
    pub fn from_file(file: &VocabFile) -> Result<Self, CorpusError> {
        let n = file.dialects.len();
        if n == 0 || n > 64 {
            return Err(CorpusError::Format("vocab: bad dialect count".into()));
        }
        let v = Vocab::new((n - 1) as u8);
        if &v.to_file() != file {
            return Err(CorpusError::Format("vocab: layout does not match this build".into()));
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Specials {
    pub bos: TokenId,
    pub eos: TokenId,
    pub think_open: TokenId,
    pub think_close: TokenId,
    pub box_open: TokenId,
    pub box_close: TokenId,
    pub sep: TokenId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Operators {
    pub plus: TokenId,
    pub minus: TokenId,
    pub times: TokenId,
    pub equals: TokenId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialectEntry {
    pub name: String,
    pub start: TokenId,
    pub end: TokenId,
    pub step_end: TokenId,
    pub think_prefix: Vec<TokenId>,
}

/// Contents of `vocab.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabFile {
    pub size: usize,
    pub specials: Specials,
    pub digits: Vec<TokenId>,
    pub operators: Operators,
    pub dialects: Vec<DialectEntry>,
}
