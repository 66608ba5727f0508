use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AnswerSet, Constituent, Prediction};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode", content = "tolerance")]
pub enum NumericMode {
    /// Equality of canonical decimal values.
    #[default]
    Exact,
    /// Numbers match when `|a - b| <= tolerance * max(|a|, |b|)`.
    Epsilon(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct MatchConfig {
    #[serde(default)]
    pub numeric: NumericMode,
    /// Set semantics instead of multiset semantics, at both levels.
    #[serde(default)]
    pub dedupe: bool,
}

/// Set-match: a perfect matching between tuples, where tuples match iff
/// their constituent multisets match.
pub fn answers_match(pred: &AnswerSet, gold: &AnswerSet, cfg: &MatchConfig) -> bool {
    match cfg.numeric {
        NumericMode::Exact if !cfg.dedupe => pred.key() == gold.key(),
        NumericMode::Exact => deduped_key(pred) == deduped_key(gold),
        NumericMode::Epsilon(tol) => {
            let (p, g) = if cfg.dedupe {
                (deduped_key(pred), deduped_key(gold))
            } else {
                (pred.key().to_vec(), gold.key().to_vec())
            };
            tolerant_sets_match(&p, &g, tol)
        }
    }
}

fn deduped_key(set: &AnswerSet) -> Vec<Vec<Constituent>> {
    let mut tuples: Vec<Vec<Constituent>> = set
        .key()
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.dedup();
            t
        })
        .collect();
    tuples.sort();
    tuples.dedup();
    tuples
}

fn tolerant_constituent_match(a: &Constituent, b: &Constituent, tol: f64) -> bool {
    match (a, b) {
        (Constituent::Number(x), Constituent::Number(y)) => {
            if x == y {
                return true;
            }
            let (x, y) = (x.to_f64(), y.to_f64());
            (x - y).abs() <= tol * x.abs().max(y.abs())
        }
        _ => a == b,
    }
}

fn tolerant_sets_match(pred: &[Vec<Constituent>], gold: &[Vec<Constituent>], tol: f64) -> bool {
    perfect_matching(pred.len(), gold.len(), |i, j| {
        let (p, g) = (&pred[i], &gold[j]);
        p.len() == g.len()
            && perfect_matching(p.len(), g.len(), |a, b| tolerant_constituent_match(&p[a], &g[b], tol))
    })
}

/// Kuhn's augmenting-path bipartite matching; true iff every left vertex can
/// be matched and both sides have the same size.
fn perfect_matching(left: usize, right: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    if left != right {
        return false;
    }
    let adj: Vec<Vec<usize>> = (0..left).map(|i| (0..right).filter(|&j| edge(i, j)).collect()).collect();
    let mut owner: Vec<Option<usize>> = vec![None; right];

    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].map_or(true, |k| augment(k, adj, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }

    (0..left).all(|i| {
        let mut seen = vec![false; right];
        augment(i, &adj, &mut seen, &mut owner)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VoteError {
    #[error("majority vote over zero candidates")]
    EmptyInput,
}

/// Plurality vote over candidate predictions.
///
/// Candidates are grouped under the first representative they match. A unique
/// largest group wins with `is_majority = true`; on a tie one of the tied
/// representatives is drawn uniformly from `rng` and `is_majority = false`.
pub fn majority_answer<R: Rng + ?Sized>(
    candidates: &[Prediction],
    cfg: &MatchConfig,
    rng: &mut R,
) -> Result<(Prediction, bool), VoteError> {
    if candidates.is_empty() {
        return Err(VoteError::EmptyInput);
    }
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for (i, cand) in candidates.iter().enumerate() {
        match groups.iter_mut().find(|(rep, _)| candidates[*rep].agrees_with(cand, cfg)) {
            Some((_, count)) => *count += 1,
            None => groups.push((i, 1)),
        }
    }
    let best = groups.iter().map(|&(_, n)| n).max().expect("non-empty");
    let tied: Vec<usize> = groups.iter().filter(|&&(_, n)| n == best).map(|&(rep, _)| rep).collect();
    if tied.len() == 1 {
        return Ok((candidates[tied[0]].clone(), true));
    }
    let pick = tied[rng.gen_range(0..tied.len())];
    Ok((candidates[pick].clone(), false))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::answer::canonicalize_answer;

    fn set(s: &str) -> AnswerSet {
        canonicalize_answer(s).unwrap()
    }

    fn ans(s: &str) -> Prediction {
        Prediction::Answer(set(s))
    }

    const EXACT: MatchConfig = MatchConfig { numeric: NumericMode::Exact, dedupe: false };

    #[test]
    fn order_insensitive() {
        assert!(answers_match(&set("[('a',1),('b',2)]"), &set("[('b',2),('a',1)]"), &EXACT));
        assert!(answers_match(&set("[(1,'a')]"), &set("[('a',1)]"), &EXACT));
    }

    #[test]
    fn empty_cases() {
        assert!(answers_match(&set("[]"), &set("[]"), &EXACT));
        assert!(!answers_match(&set("[]"), &set("[('x',)]"), &EXACT));
    }

    #[test]
    fn exact_decimal_fixture() {
        assert!(answers_match(&set("[(2.35,)]"), &set("[(2.35,)]"), &EXACT));
        assert!(answers_match(&set("[(2.350,)]"), &set("[('2.35',)]"), &EXACT));
        assert!(!answers_match(&set("[(2.351,)]"), &set("[(2.35,)]"), &EXACT));
    }

    #[test]
    fn multiset_vs_set_semantics() {
        let rep = set("[('a',), ('a',)]");
        let one = set("[('a',)]");
        assert!(!answers_match(&rep, &one, &EXACT));
        let dedupe = MatchConfig { dedupe: true, ..EXACT };
        assert!(answers_match(&rep, &one, &dedupe));
        assert!(answers_match(&set("[('a','a',1)]"), &set("[(1,'a')]"), &dedupe));
        assert!(!answers_match(&set("[('a','a',1)]"), &set("[(1,'a')]"), &EXACT));
    }

    #[test]
    fn case_sensitive_text() {
        assert!(!answers_match(&set("[('Celtic',)]"), &set("[('celtic',)]"), &EXACT));
        assert!(answers_match(&set("[(' Celtic ',)]"), &set("[('Celtic',)]"), &EXACT));
    }

    #[test]
    fn epsilon_mode_uses_relative_tolerance() {
        let eps = MatchConfig { numeric: NumericMode::Epsilon(1e-6), dedupe: false };
        let a = set("[(0.30000000000000004, 'x'), (1, 2)]");
        let b = set("[(2, 1), ('x', 0.3)]");
        assert!(!answers_match(&a, &b, &EXACT));
        assert!(answers_match(&a, &b, &eps));
        assert!(!answers_match(&set("[(0.31,)]"), &set("[(0.3,)]"), &eps));
        assert!(!answers_match(&set("[(1,)]"), &set("[('1x',)]"), &eps));
    }

    #[test]
    fn epsilon_matching_pairs_nearby_values() {
        let eps = MatchConfig { numeric: NumericMode::Epsilon(1.5e-7), dedupe: false };
        let a = set("[(1.0000001,), (1.0000002,)]");
        let b = set("[(1.0,), (1.0000002,)]");
        assert!(answers_match(&a, &b, &eps));
    }

    #[test]
    fn majority_two_of_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (p, maj) =
            majority_answer(&[ans("[(1,)]"), ans("[(1,)]"), ans("[(2,)]")], &EXACT, &mut rng).unwrap();
        assert_eq!(p, ans("[(1,)]"));
        assert!(maj);
        let (p, maj) =
            majority_answer(&[ans("[(7,)]"), ans("[(7,)]"), ans("[(7,)]")], &EXACT, &mut rng).unwrap();
        assert_eq!(p, ans("[(7,)]"));
        assert!(maj);
    }

    #[test]
    fn majority_tie_is_seeded_random() {
        let cands = [ans("[('A',)]"), ans("[('B',)]"), ans("[('C',)]")];
        let mut seen = std::collections::HashSet::new();
        for seed in 0..64 {
            let (p, maj) = majority_answer(&cands, &EXACT, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(!maj);
            let (q, _) = majority_answer(&cands, &EXACT, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(p, q);
            seen.insert(p.answer().unwrap().to_literal());
        }
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn failures_form_singleton_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (p, maj) = majority_answer(
            &[Prediction::Failure, Prediction::Failure, ans("[(1,)]"), ans("[(1,)]")],
            &EXACT,
            &mut rng,
        )
        .unwrap();
        assert_eq!(p, ans("[(1,)]"));
        assert!(maj);
        let (p, maj) = majority_answer(&vec![Prediction::Failure; 5], &EXACT, &mut rng).unwrap();
        assert!(p.is_failure());
        assert!(!maj);
    }

    #[test]
    fn majority_empty_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(majority_answer(&[], &EXACT, &mut rng), Err(VoteError::EmptyInput));
    }
}
