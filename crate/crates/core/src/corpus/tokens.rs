//! Sub-word token counting for the corpus size filter and prompt budgets.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use tiktoken_rs::CoreBPE;

use super::CorpusError;
use crate::metric::tokenize_code;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Tokenizer {
    /// Byte-level BPE with the 100k-merge vocabulary used by GPT-3.5/GPT-4 class models.
    #[default]
    #[serde(rename = "cl100k_base")]
    Cl100kBase,
    /// Byte-level BPE with the 200k-merge vocabulary used by GPT-4o class models.
    #[serde(rename = "o200k_base")]
    O200kBase,
    /// One token per C lexeme; fast, vocabulary-free, not a sub-word count.
    #[serde(rename = "c_lexical")]
    CLexical,
}

impl Tokenizer {
    pub const ALL: [Tokenizer; 3] = [Tokenizer::Cl100kBase, Tokenizer::O200kBase, Tokenizer::CLexical];

    pub fn id(self) -> &'static str {
        match self {
            Tokenizer::Cl100kBase => "cl100k_base",
            Tokenizer::O200kBase => "o200k_base",
            Tokenizer::CLexical => "c_lexical",
        }
    }

    pub fn count(self, text: &str) -> usize {
        if text.is_empty() {
            return 0;
        }
        match self {
            Tokenizer::Cl100kBase => cl100k().encode_ordinary(text).len(),
            Tokenizer::O200kBase => o200k().encode_ordinary(text).len(),
            Tokenizer::CLexical => tokenize_code(text).len(),
        }
    }
}

impl fmt::Display for Tokenizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Tokenizer {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Tokenizer::ALL
            .into_iter()
            .find(|t| t.id() == s)
            .ok_or_else(|| CorpusError::UnknownTokenizer(s.to_string()))
    }
}

fn cl100k() -> &'static CoreBPE {
    static BPE: OnceLock<CoreBPE> = OnceLock::new();
    BPE.get_or_init(|| tiktoken_rs::cl100k_base().expect("bundled cl100k vocabulary loads"))
}

fn o200k() -> &'static CoreBPE {
    static BPE: OnceLock<CoreBPE> = OnceLock::new();
    BPE.get_or_init(|| tiktoken_rs::o200k_base().expect("bundled o200k vocabulary loads"))
}

/// Counts tokens of `snippet` under the tokenizer named by `tokenizer_id`.
pub fn count_tokens(snippet: &str, tokenizer_id: &str) -> Result<usize, CorpusError> {
    Ok(tokenizer_id.parse::<Tokenizer>()?.count(snippet))
}
