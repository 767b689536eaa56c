//! Corpus-level BLEU, ROUGE-L and CIDEr over tokenized sentences.

use std::collections::BTreeMap;

use super::EvalError;

type Sentence = Vec<String>;

fn ngrams(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn check_corpus(candidates: &[Sentence], references: &[Vec<Sentence>]) -> Result<(), EvalError> {
    if candidates.is_empty() {
        return Err(EvalError::Input("empty corpus".into()));
    }
    if candidates.len() != references.len() {
        return Err(EvalError::Input(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if references.iter().any(|r| r.is_empty()) {
        return Err(EvalError::Input("candidate without references".into()));
    }
    Ok(())
}

/// Corpus BLEU-n: geometric mean of clipped n-gram precisions for orders
/// `1..=n`, times the brevity penalty against the closest reference length
/// (shorter on ties). No smoothing.
pub fn bleu(candidates: &[Sentence], references: &[Vec<Sentence>], n: usize) -> Result<f64, EvalError> {
    check_corpus(candidates, references)?;
    if !(1..=4).contains(&n) {
        return Err(EvalError::Input(format!("BLEU order {n} outside 1..=4")));
    }
    let mut matched = vec![0usize; n];
    let mut total = vec![0usize; n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (cand, refs) in candidates.iter().zip(references) {
        cand_len += cand.len();
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .expect("references are nonempty");
        for k in 1..=n {
            let counts = ngrams(cand, k);
            let ref_counts: Vec<_> = refs.iter().map(|r| ngrams(r, k)).collect();
            for (g, c) in counts {
                let max_ref = ref_counts.iter().map(|rc| rc.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
                matched[k - 1] += c.min(max_ref);
            }
            total[k - 1] += cand.len().saturating_sub(k - 1);
        }
    }
    if cand_len == 0 || matched.contains(&0) {
        return Ok(0.0);
    }
    let log_p: f64 = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / n as f64;
    let bp = (1.0 - ref_len as f64 / cand_len as f64).min(0.0).exp();
    Ok(bp * log_p.exp())
}

pub fn bleu_1_to_4(candidates: &[Sentence], references: &[Vec<Sentence>]) -> Result<[f64; 4], EvalError> {
    Ok([
        bleu(candidates, references, 1)?,
        bleu(candidates, references, 2)?,
        bleu(candidates, references, 3)?,
        bleu(candidates, references, 4)?,
    ])
}

pub fn lcs_len<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// ROUGE-L of one candidate: LCS precision and recall maximized over the
/// references, combined as `(1+β²)PR / (R + β²P)`.
pub fn rouge_l_sentence(candidate: &[String], references: &[Sentence]) -> f64 {
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let (mut p, mut r) = (0.0f64, 0.0f64);
    for reference in references.iter().filter(|r| !r.is_empty()) {
        let l = lcs_len(candidate, reference) as f64;
        p = p.max(l / candidate.len() as f64);
        r = r.max(l / reference.len() as f64);
    }
    if p == 0.0 || r == 0.0 {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean sentence ROUGE-L over the corpus.
pub fn rouge_l(candidates: &[Sentence], references: &[Vec<Sentence>]) -> Result<f64, EvalError> {
    check_corpus(candidates, references)?;
    let total: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| rouge_l_sentence(c, r))
        .sum();
    Ok(total / candidates.len() as f64)
}

pub const CIDER_SCALE: f64 = 10.0;

/// CIDEr: for each order 1..=4, term frequencies weighted by
/// `ln(N / df)` (df counted over the N reference sets), cosine similarity
/// of candidate and each reference, averaged over references and orders,
/// scaled by ten, and averaged over the corpus.
pub fn cider(candidates: &[Sentence], references: &[Vec<Sentence>]) -> Result<f64, EvalError> {
    check_corpus(candidates, references)?;
    let docs = references.len();
    if docs < 2 {
        return Err(EvalError::Input("CIDEr needs reference sets for at least two images".into()));
    }
    let mut df: BTreeMap<&[String], usize> = BTreeMap::new();
    for refs in references {
        let mut seen: BTreeMap<&[String], ()> = BTreeMap::new();
        for r in refs {
            for k in 1..=4 {
                for g in ngrams(r, k).into_keys() {
                    seen.insert(g, ());
                }
            }
        }
        for g in seen.into_keys() {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_n = (docs as f64).ln();
    let vector = |s: &'_ [String], k: usize| -> BTreeMap<Vec<String>, f64> {
        let counts = ngrams(s, k);
        let total: usize = counts.values().sum();
        counts
            .into_iter()
            .map(|(g, c)| {
                let idf = log_n - (df.get(g).copied().unwrap_or(0).max(1) as f64).ln();
                (g.to_vec(), c as f64 / total as f64 * idf)
            })
            .collect()
    };
    let cosine = |a: &BTreeMap<Vec<String>, f64>, b: &BTreeMap<Vec<String>, f64>| -> f64 {
        let dot: f64 = a.iter().filter_map(|(g, x)| b.get(g).map(|y| x * y)).sum();
        let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    };
    let mut total = 0.0;
    for (cand, refs) in candidates.iter().zip(references) {
        let mut score = 0.0;
        for k in 1..=4 {
            let cv = vector(cand, k);
            let sims: f64 = refs.iter().map(|r| cosine(&cv, &vector(r, k))).sum();
            score += sims / refs.len() as f64;
        }
        total += CIDER_SCALE * score / 4.0;
    }
    Ok(total / candidates.len() as f64)
}
