//! A model-free n-gram drafter.

use std::collections::HashMap;

use rand::Rng;

use super::dist::CategoricalDist;
use super::verify::DraftProposal;
use super::SpecDecError;

/// Context-to-next-token counts harvested from a token corpus.
///
/// Lookups apply add-one smoothing over the whole vocabulary, so every
/// context (including unseen ones, which degrade to uniform) yields a
/// strictly positive distribution and drafted tokens can always be verified.
#[derive(Debug, Clone)]
pub struct NGramTable {
    order: usize,
    vocab_size: usize,
    counts: HashMap<Vec<usize>, Vec<u64>>,
}

impl NGramTable {
    pub fn from_corpus(
        corpus: &[usize],
        order: usize,
        vocab_size: usize,
    ) -> Result<Self, SpecDecError> {
        if order == 0 {
            return Err(SpecDecError::BadOrder);
        }
        if vocab_size < 2 || vocab_size > super::MAX_VOCAB {
            return Err(SpecDecError::BadVocabSize(vocab_size));
        }
        if corpus.len() < order + 1 {
            return Err(SpecDecError::CorpusTooShort(order + 1));
        }
        for &token in corpus {
            if token >= vocab_size {
                return Err(SpecDecError::TokenOutOfRange { token, vocab: vocab_size });
            }
        }
        let mut counts: HashMap<Vec<usize>, Vec<u64>> = HashMap::new();
        for window in corpus.windows(order + 1) {
            let context = window[..order].to_vec();
            let next = window[order];
            counts.entry(context).or_insert_with(|| vec![0; vocab_size])[next] += 1;
        }
        Ok(NGramTable { order, vocab_size, counts })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Smoothed next-token distribution after `context`.
    pub fn dist(&self, context: &[usize]) -> Result<CategoricalDist, SpecDecError> {
        if context.len() < self.order {
            return Err(SpecDecError::ContextTooShort {
                needed: self.order,
                got: context.len(),
            });
        }
        let key = &context[context.len() - self.order..];
        for &token in key {
            if token >= self.vocab_size {
                return Err(SpecDecError::TokenOutOfRange { token, vocab: self.vocab_size });
            }
        }
        let weights: Vec<f64> = match self.counts.get(key) {
            Some(row) => row.iter().map(|&c| (c + 1) as f64).collect(),
            None => vec![1.0; self.vocab_size],
        };
        CategoricalDist::from_weights(&weights)
    }
}

/// Drafts `k` tokens by repeated greedy table lookup (ties resolve to the
/// lowest token id). The proposal carries the smoothed distributions the
/// lookups were taken from.
pub fn ngram_draft(
    table: &NGramTable,
    context: &[usize],
    k: usize,
) -> Result<DraftProposal, SpecDecError> {
    draft_with(table, context, k, |dist| dist.argmax())
}

/// Like [`ngram_draft`] but samples each token from the smoothed
/// distribution, preserving the exactness guarantee of verification.
pub fn ngram_draft_sampled<R: Rng + ?Sized>(
    table: &NGramTable,
    context: &[usize],
    k: usize,
    rng: &mut R,
) -> Result<DraftProposal, SpecDecError> {
    draft_with(table, context, k, |dist| dist.sample(rng))
}

fn draft_with(
    table: &NGramTable,
    context: &[usize],
    k: usize,
    mut pick: impl FnMut(&CategoricalDist) -> usize,
) -> Result<DraftProposal, SpecDecError> {
    if k == 0 {
        return Err(SpecDecError::EmptyDraft);
    }
    let mut extended = context.to_vec();
    let mut tokens = Vec::with_capacity(k);
    let mut dists = Vec::with_capacity(k);
    for _ in 0..k {
        let dist = table.dist(&extended)?;
        let token = pick(&dist);
        tokens.push(token);
        extended.push(token);
        dists.push(dist);
    }
    DraftProposal::new(tokens, dists)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Substream;

    // Tokens: a = 0, b = 1.
    const A: usize = 0;
    const B: usize = 1;

    #[test]
    fn alternating_corpus_drafts_alternation() {
        let corpus = vec![A, B, A, B, A, B];
        let table = NGramTable::from_corpus(&corpus, 1, 2).unwrap();
        let proposal = ngram_draft(&table, &[A], 2).unwrap();
        assert_eq!(proposal.tokens(), &[B, A]);
        // After 'a' the table saw only 'b' three times: (3+1)/(3+2).
        assert!((proposal.per_position_dists()[0].prob(B) - 0.8).abs() < 1e-15);
        assert!((proposal.per_position_dists()[0].prob(A) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn unseen_context_is_uniform() {
        let corpus = vec![A, A, A, A];
        let table = NGramTable::from_corpus(&corpus, 2, 3).unwrap();
        let dist = table.dist(&[B, B]).unwrap();
        assert_eq!(dist.probs(), &[1.0 / 3.0; 3]);
    }

    #[test]
    fn lookup_uses_only_the_last_order_tokens() {
        let corpus = vec![A, B, A, B, A, B];
        let table = NGramTable::from_corpus(&corpus, 1, 2).unwrap();
        let short = table.dist(&[A]).unwrap();
        let long = table.dist(&[B, B, B, A]).unwrap();
        assert_eq!(short, long);
    }

    #[test]
    fn context_shorter_than_order_is_an_error() {
        let corpus = vec![A, B, A, B];
        let table = NGramTable::from_corpus(&corpus, 2, 2).unwrap();
        let err = table.dist(&[A]).unwrap_err();
        assert_eq!(err, SpecDecError::ContextTooShort { needed: 2, got: 1 });
    }

    #[test]
    fn corpus_validation() {
        assert_eq!(NGramTable::from_corpus(&[A, B], 0, 2).unwrap_err(), SpecDecError::BadOrder);
        assert_eq!(
            NGramTable::from_corpus(&[A], 1, 2).unwrap_err(),
            SpecDecError::CorpusTooShort(2)
        );
        assert_eq!(
            NGramTable::from_corpus(&[A, 7], 1, 2).unwrap_err(),
            SpecDecError::TokenOutOfRange { token: 7, vocab: 2 }
        );
    }

    #[test]
    fn sampled_drafts_follow_table_distributions() {
        let corpus = vec![A, B, A, B, A, B, A, A, A, B];
        let table = NGramTable::from_corpus(&corpus, 1, 2).unwrap();
        let mut rng = Substream::new(8, &[0]).rng();
        let mut first_token_b = 0u32;
        let n = 50_000;
        for _ in 0..n {
            let proposal = ngram_draft_sampled(&table, &[A], 1, &mut rng).unwrap();
            if proposal.tokens()[0] == B {
                first_token_b += 1;
            }
        }
        let expect = table.dist(&[A]).unwrap().prob(B);
        let freq = f64::from(first_token_b) / n as f64;
        assert!((freq - expect).abs() < 0.01, "freq {freq} vs {expect}");
    }
}
