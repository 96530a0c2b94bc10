use alloc::string::String;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("token counting failed: {0}")]
pub struct TokenCountError(pub String);

/// Counts tokens of a text under some tokenizer.
pub trait TokenCounter {
    fn count(&self, text: &str) -> Result<usize, TokenCountError>;

    /// Largest character count whose prefix fits in `budget` tokens.
    /// The default binary-searches over prefixes and assumes counts grow
    /// monotonically with prefix length.
    fn max_prefix_chars(&self, text: &str, budget: usize) -> Result<usize, TokenCountError> {
        let total = text.chars().count();
        let (mut lo, mut hi) = (0usize, total);
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if self.count(prefix(text, mid))? <= budget {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        Ok(lo)
    }
}

/// Fixed characters-per-token estimate (4 by default, so 8192 tokens is
/// about 32k characters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharRatio(pub f64);

impl Default for CharRatio {
    fn default() -> Self {
        CharRatio(4.0)
    }
}

impl TokenCounter for CharRatio {
    fn count(&self, text: &str) -> Result<usize, TokenCountError> {
        Ok(libm::ceil(text.chars().count() as f64 / self.0) as usize)
    }

    fn max_prefix_chars(&self, text: &str, budget: usize) -> Result<usize, TokenCountError> {
        let cap = libm::floor(budget as f64 * self.0) as usize;
        Ok(text.chars().count().min(cap))
    }
}

fn prefix(text: &str, chars: usize) -> &str {
    match text.char_indices().nth(chars) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Truncated {
    pub text: String,
    pub truncated: bool,
    pub token_estimate: usize,
}

/// Hard tail cut to the token budget; may split words.
pub fn truncate_to_budget(text: &str, budget: usize, counter: &dyn TokenCounter) -> Result<Truncated, TokenCountError> {
    let keep = counter.max_prefix_chars(text, budget)?;
    let kept = prefix(text, keep);
    Ok(Truncated {
        text: String::from(kept),
        truncated: kept.len() < text.len(),
        token_estimate: counter.count(kept)?,
    })
}
