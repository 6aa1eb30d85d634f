//! Character-to-token alignment and the field/background token partition.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{GeomField, ParsedOutput};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlignError {
    #[error("view/text mismatch: tokens cover {view} chars, parsed text has {text}")]
    LengthMismatch { view: usize, text: usize },
}

/// Decoded pieces of a token sequence with cumulative character offsets.
/// `offsets[t]` is the end of token `t`; token `t` covers
/// `offsets[t-1]..offsets[t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerView {
    pieces: Vec<String>,
    offsets: Vec<usize>,
}

impl TokenizerView {
    pub fn from_pieces<S: Into<String>>(pieces: impl IntoIterator<Item = S>) -> Self {
        let pieces: Vec<String> = pieces.into_iter().map(Into::into).collect();
        let mut end = 0;
        let offsets = pieces
            .iter()
            .map(|p| {
                end += p.chars().count();
                end
            })
            .collect();
        TokenizerView { pieces, offsets }
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn text_len(&self) -> usize {
        self.offsets.last().copied().unwrap_or(0)
    }

    pub fn text(&self) -> String {
        self.pieces.concat()
    }

    /// Character interval of token `t`.
    pub fn char_range(&self, t: usize) -> (usize, usize) {
        let start = if t == 0 { 0 } else { self.offsets[t - 1] };
        (start, self.offsets[t])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenizerMode {
    /// One token per character.
    Char,
    /// Split wherever the text switches between digits and non-digits.
    DigitBoundary,
}

/// Lossless reference tokenizer used by tests and tools; real deployments
/// bring their own [`TokenizerView`].
pub fn reference_tokenizer(text: &str, mode: TokenizerMode) -> TokenizerView {
    match mode {
        TokenizerMode::Char => TokenizerView::from_pieces(text.chars().map(String::from)),
        TokenizerMode::DigitBoundary => {
            let mut pieces: Vec<String> = Vec::new();
            let mut last_digit = None;
            for c in text.chars() {
                let digit = c.is_ascii_digit();
                match pieces.last_mut() {
                    Some(p) if last_digit == Some(digit) => p.push(c),
                    _ => pieces.push(c.to_string()),
                }
                last_digit = Some(digit);
            }
            TokenizerView::from_pieces(pieces)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenOwner {
    Field(GeomField),
    Background,
}

/// Disjoint assignment of every token to one geometric field or to the
/// background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSpanPartition {
    owners: Vec<TokenOwner>,
}

impl TokenSpanPartition {
    pub fn from_owners(owners: Vec<TokenOwner>) -> Self {
        TokenSpanPartition { owners }
    }

    /// Everything in the background.
    pub fn background_only(len: usize) -> Self {
        TokenSpanPartition { owners: vec![TokenOwner::Background; len] }
    }

    pub fn len(&self) -> usize {
        self.owners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.owners.is_empty()
    }

    pub fn owners(&self) -> &[TokenOwner] {
        &self.owners
    }

    pub fn owner(&self, t: usize) -> TokenOwner {
        self.owners[t]
    }

    pub fn field_tokens(&self, f: GeomField) -> Vec<usize> {
        self.tokens_where(TokenOwner::Field(f))
    }

    pub fn background(&self) -> Vec<usize> {
        self.tokens_where(TokenOwner::Background)
    }

    fn tokens_where(&self, owner: TokenOwner) -> Vec<usize> {
        (0..self.owners.len()).filter(|&t| self.owners[t] == owner).collect()
    }
}

/// Assigns token `t` to field `f` iff its character interval overlaps the
/// span of `f`. A token touching two spans goes to the one that starts first.
/// Fields without a span route nowhere.
pub fn char_to_token_spans(view: &TokenizerView, parsed: &ParsedOutput) -> Result<TokenSpanPartition, AlignError> {
    if view.text_len() != parsed.text_len {
        return Err(AlignError::LengthMismatch { view: view.text_len(), text: parsed.text_len });
    }
    let mut spans: Vec<_> = GeomField::ALL.iter().filter_map(|&f| parsed.span(f).map(|s| (s, f))).collect();
    spans.sort_by_key(|(s, _)| s.start);

    let mut owners = vec![TokenOwner::Background; view.len()];
    // Spans are disjoint and sorted, and token ranges are monotone, so one
    // forward sweep suffices.
    let mut first = 0;
    for (t, owner) in owners.iter_mut().enumerate() {
        let (start, end) = view.char_range(t);
        while first < spans.len() && spans[first].0.end <= start {
            first += 1;
        }
        if let Some((span, f)) = spans[first..].iter().find(|(s, _)| s.overlaps(start, end)) {
            debug_assert!(span.overlaps(start, end));
            *owner = TokenOwner::Field(*f);
        }
    }
    Ok(TokenSpanPartition { owners })
}
