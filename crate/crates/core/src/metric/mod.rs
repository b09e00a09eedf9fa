//! CodeBLEU similarity between C snippets.
//!
//! Four components feed the composite: plain n-gram BLEU, keyword-weighted
//! n-gram BLEU, AST subtree match and dataflow match. A component that is
//! undefined for the reference (no qualifying subtrees, no def-use edges)
//! is left out and its weight is spread over the rest in proportion.

mod bleu;
mod dataflow;
mod lexer;
mod syntax;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{ngram_match, weighted_ngram_match, BleuScore, Smoothing, DEFAULT_KEYWORD_WEIGHT, DEFAULT_MAX_N};
pub use dataflow::{dataflow_match, extract_dataflow, DataflowEdge, DataflowGraph, DefSite};
pub use lexer::{is_c_keyword, tokenize_code, TokenKind, TokenSequence, C_KEYWORDS};
pub use syntax::syntax_match;
pub use tree::{parse_c, NodeId, SyntaxNode, SyntaxTree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("the parser produced no tree")]
    ParseFailed,
    #[error("both snippets are empty")]
    EmptyComparison,
    #[error("invalid component weights: {0}")]
    InvalidWeights(String),
    #[error("every component with nonzero weight is undefined for this reference")]
    NoWeightedComponents,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricWeights {
    pub ngram: f64,
    pub weighted_ngram: f64,
    pub ast: f64,
    pub dataflow: f64,
}

impl Default for MetricWeights {
    fn default() -> Self {
        Self { ngram: 0.25, weighted_ngram: 0.25, ast: 0.25, dataflow: 0.25 }
    }
}

impl MetricWeights {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn validate(&self) -> Result<(), MetricError> {
        let all = [self.ngram, self.weighted_ngram, self.ast, self.dataflow];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(MetricError::InvalidWeights(format!("weights must be finite and non-negative, got {all:?}")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(MetricError::InvalidWeights(format!("weights must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityBreakdown {
    pub ngram: f64,
    pub weighted_ngram: f64,
    pub ast: Option<f64>,
    pub dataflow: Option<f64>,
    pub composite: f64,
    pub weights: MetricWeights,
}

impl SimilarityBreakdown {
    /// Builds a breakdown from component scores, renormalizing the weights
    /// over the components that are present.
    pub fn combine(
        ngram: f64,
        weighted_ngram: f64,
        ast: Option<f64>,
        dataflow: Option<f64>,
        weights: MetricWeights,
    ) -> Result<Self, MetricError> {
        let parts = [
            (Some(ngram), weights.ngram),
            (Some(weighted_ngram), weights.weighted_ngram),
            (ast, weights.ast),
            (dataflow, weights.dataflow),
        ];
        let mass: f64 = parts.iter().filter(|(s, _)| s.is_some()).map(|(_, w)| w).sum();
        if mass <= 0.0 {
            return Err(MetricError::NoWeightedComponents);
        }
        let dot: f64 = parts.iter().filter_map(|(s, w)| s.map(|s| s * w)).sum();
        let composite = (dot / mass).clamp(0.0, 1.0);
        Ok(Self { ngram, weighted_ngram, ast, dataflow, composite, weights })
    }

    /// All-zero scores, used where no candidate exists.
    pub fn zero(weights: MetricWeights) -> Self {
        Self { ngram: 0.0, weighted_ngram: 0.0, ast: Some(0.0), dataflow: Some(0.0), composite: 0.0, weights }
    }
}

/// CodeBLEU of `candidate` against `reference`.
pub fn codebleu(candidate: &str, reference: &str, weights: &MetricWeights) -> Result<SimilarityBreakdown, MetricError> {
    weights.validate()?;
    let cand_tokens = tokenize_code(candidate);
    let ref_tokens = tokenize_code(reference);
    if cand_tokens.is_empty() && ref_tokens.is_empty() {
        return Err(MetricError::EmptyComparison);
    }
    let ngram = ngram_match(&cand_tokens, &ref_tokens, DEFAULT_MAX_N, Smoothing::AddOne).value;
    let weighted = weighted_ngram_match(&cand_tokens, &ref_tokens, DEFAULT_KEYWORD_WEIGHT).value;

    let cand_tree = parse_c(candidate)?;
    let ref_tree = parse_c(reference)?;
    let ast = syntax_match(&cand_tree, &ref_tree);
    let flow = dataflow_match(&extract_dataflow(&cand_tree), &extract_dataflow(&ref_tree));

    SimilarityBreakdown::combine(ngram, weighted, ast, flow, *weights)
}
