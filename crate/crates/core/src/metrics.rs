//! Diversity measures for augmented data and entity-level F1.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use thiserror::Error;

use crate::corpus::{bio_spans, Dataset, Span, Utterance};
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("original corpus has no word types")]
    EmptyOriginal,
    #[error("prediction and gold disagree: {0}")]
    AlignmentMismatch(String),
}

fn word_types(d: &Dataset) -> HashSet<&str> {
    d.iter()
        .flat_map(|u| u.tokens().iter().map(String::as_str))
        .collect()
}

/// Percentage of word types in `augmented` that never occur in `original`,
/// relative to the number of word types in `original`.
pub fn word_diversity(augmented: &Dataset, original: &Dataset) -> Result<f64, MetricsError> {
    let orig = word_types(original);
    if orig.is_empty() {
        return Err(MetricsError::EmptyOriginal);
    }
    let new = word_types(augmented).difference(&orig).count();
    Ok(100.0 * new as f64 / orig.len() as f64)
}

/// Slot values replaced by their bare slot type, one token per slot.
pub fn delexicalize(u: &Utterance) -> Vec<String> {
    let mut out = Vec::with_capacity(u.len());
    let mut spans = bio_spans(u.tags()).into_iter().peekable();
    let mut i = 0;
    while i < u.len() {
        match spans.peek() {
            Some((ty, span)) if span.start == i => {
                out.push(ty.clone());
                i = span.end;
                spans.next();
            }
            _ => {
                out.push(u.tokens()[i].clone());
                i += 1;
            }
        }
    }
    out
}

fn delex_set(exec: Execution, d: &Dataset) -> HashSet<Vec<String>> {
    par::map(exec, &d.utterances, delexicalize)
        .into_iter()
        .collect()
}

/// Percentage of augmented sentences whose delexicalized pattern is absent
/// from the original corpus. Zero for an empty augmented set.
pub fn originality_delex(augmented: &Dataset, original: &Dataset) -> f64 {
    novel_patterns(Execution::default(), augmented, original).1
}

fn novel_patterns(exec: Execution, augmented: &Dataset, original: &Dataset) -> (usize, f64) {
    if augmented.is_empty() {
        return (0, 0.0);
    }
    let seen = delex_set(exec, original);
    let novel = par::map(exec, &augmented.utterances, |u| {
        !seen.contains(&delexicalize(u))
    })
    .into_iter()
    .filter(|&n| n)
    .count();
    (novel, 100.0 * novel as f64 / augmented.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityReport {
    /// Percent.
    pub word_diversity: f64,
    /// Percent.
    pub originality_delex: f64,
    pub new_word_types: BTreeSet<String>,
    pub novel_pattern_count: usize,
}

impl DiversityReport {
    /// `key<TAB>value` lines.
    pub fn to_tsv(&self) -> String {
        let words: Vec<&str> = self.new_word_types.iter().map(String::as_str).collect();
        format!(
            "word_diversity\t{:.4}\noriginality_delex\t{:.4}\nnovel_pattern_count\t{}\nnew_word_type_count\t{}\nnew_word_types\t{}\n",
            self.word_diversity,
            self.originality_delex,
            self.novel_pattern_count,
            self.new_word_types.len(),
            words.join(" ")
        )
    }
}

impl fmt::Display for DiversityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<24}{:>10.2}",
            "word diversity (%)", self.word_diversity
        )?;
        writeln!(
            f,
            "{:<24}{:>10.2}",
            "originality-delex (%)", self.originality_delex
        )?;
        writeln!(
            f,
            "{:<24}{:>10}",
            "new word types",
            self.new_word_types.len()
        )?;
        write!(
            f,
            "{:<24}{:>10}",
            "novel patterns", self.novel_pattern_count
        )
    }
}

pub fn diversity_report(
    augmented: &Dataset,
    original: &Dataset,
) -> Result<DiversityReport, MetricsError> {
    diversity_report_with(Execution::default(), augmented, original)
}

pub fn diversity_report_with(
    exec: Execution,
    augmented: &Dataset,
    original: &Dataset,
) -> Result<DiversityReport, MetricsError> {
    let word_diversity = word_diversity(augmented, original)?;
    let orig = word_types(original);
    let new_word_types = word_types(augmented)
        .difference(&orig)
        .map(|s| s.to_string())
        .collect();
    let (novel_pattern_count, originality_delex) = novel_patterns(exec, augmented, original);
    Ok(DiversityReport {
        word_diversity,
        originality_delex,
        new_word_types,
        novel_pattern_count,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Scores {
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Scores {
    fn from_counts(true_positives: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(true_positives, predicted);
        let recall = ratio(true_positives, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Scores {
            true_positives,
            predicted,
            gold,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Report {
    pub overall: Scores,
    pub per_type: BTreeMap<String, Scores>,
}

impl F1Report {
    pub fn precision(&self) -> f64 {
        self.overall.precision
    }

    pub fn recall(&self) -> f64 {
        self.overall.recall
    }

    pub fn f1(&self) -> f64 {
        self.overall.f1
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "precision\t{:.6}\nrecall\t{:.6}\nf1\t{:.6}\ntrue_positives\t{}\npredicted\t{}\ngold\t{}\n",
            self.overall.precision,
            self.overall.recall,
            self.overall.f1,
            self.overall.true_positives,
            self.overall.predicted,
            self.overall.gold
        );
        for (ty, s) in &self.per_type {
            out.push_str(&format!("f1.{ty}\t{:.6}\n", s.f1));
        }
        out
    }
}

impl fmt::Display for F1Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<24}{:>10}{:>10}{:>10}{:>8}",
            "type", "precision", "recall", "f1", "gold"
        )?;
        for (ty, s) in &self.per_type {
            writeln!(
                f,
                "{ty:<24}{:>10.4}{:>10.4}{:>10.4}{:>8}",
                s.precision, s.recall, s.f1, s.gold
            )?;
        }
        let o = &self.overall;
        write!(
            f,
            "{:<24}{:>10.4}{:>10.4}{:>10.4}{:>8}",
            "overall", o.precision, o.recall, o.f1, o.gold
        )
    }
}

#[derive(Default)]
struct Counts {
    tp: BTreeMap<String, usize>,
    pred: BTreeMap<String, usize>,
    gold: BTreeMap<String, usize>,
}

impl Counts {
    fn merge(mut self, other: Counts) -> Counts {
        for (mine, theirs) in [
            (&mut self.tp, other.tp),
            (&mut self.pred, other.pred),
            (&mut self.gold, other.gold),
        ] {
            for (k, v) in theirs {
                *mine.entry(k).or_default() += v;
            }
        }
        self
    }
}

fn utterance_counts(pred: &Utterance, gold: &Utterance) -> Counts {
    let p: HashSet<(String, Span)> = bio_spans(pred.tags()).into_iter().collect();
    let g: HashSet<(String, Span)> = bio_spans(gold.tags()).into_iter().collect();
    let mut c = Counts::default();
    for (ty, _) in &p {
        *c.pred.entry(ty.clone()).or_default() += 1;
    }
    for e in &g {
        *c.gold.entry(e.0.clone()).or_default() += 1;
        if p.contains(e) {
            *c.tp.entry(e.0.clone()).or_default() += 1;
        }
    }
    c
}

/// Exact `(type, span)` matching over BIO chunks.
pub fn entity_f1(pred: &Dataset, gold: &Dataset) -> Result<F1Report, MetricsError> {
    entity_f1_with(Execution::default(), pred, gold)
}

pub fn entity_f1_with(
    exec: Execution,
    pred: &Dataset,
    gold: &Dataset,
) -> Result<F1Report, MetricsError> {
    if pred.len() != gold.len() {
        return Err(MetricsError::AlignmentMismatch(format!(
            "{} predicted vs {} gold utterances",
            pred.len(),
            gold.len()
        )));
    }
    if let Some(i) = (0..pred.len()).find(|&i| pred.utterances[i].len() != gold.utterances[i].len())
    {
        return Err(MetricsError::AlignmentMismatch(format!(
            "utterance {}: {} vs {} tokens",
            i + 1,
            pred.utterances[i].len(),
            gold.utterances[i].len()
        )));
    }
    let pairs: Vec<(&Utterance, &Utterance)> = pred.iter().zip(gold.iter()).collect();
    let counts = par::map(exec, &pairs, |(p, g)| utterance_counts(p, g))
        .into_iter()
        .fold(Counts::default(), Counts::merge);
    let types: BTreeSet<&String> = counts.pred.keys().chain(counts.gold.keys()).collect();
    let get = |m: &BTreeMap<String, usize>, k: &str| m.get(k).copied().unwrap_or(0);
    let per_type = types
        .into_iter()
        .map(|ty| {
            (
                ty.clone(),
                Scores::from_counts(
                    get(&counts.tp, ty),
                    get(&counts.pred, ty),
                    get(&counts.gold, ty),
                ),
            )
        })
        .collect();
    let sum = |m: &BTreeMap<String, usize>| m.values().sum::<usize>();
    Ok(F1Report {
        overall: Scores::from_counts(sum(&counts.tp), sum(&counts.pred), sum(&counts.gold)),
        per_type,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn utt(words: &str, tags: &str) -> Utterance {
        Utterance::new(
            words.split(' ').collect(),
            tags.split(' ').collect::<Vec<_>>(),
            "i",
        )
        .unwrap()
    }

    fn ds(utts: Vec<Utterance>) -> Dataset {
        Dataset::new("t", utts)
    }

    #[test]
    fn word_diversity_cases() {
        let orig = ds(vec![
            utt("a b c d e", "O O O O O"),
            utt("f g h i j", "O O O O O"),
        ]);
        let same = ds(vec![utt("a b j", "O O O")]);
        assert_eq!(word_diversity(&same, &orig).unwrap(), 0.0);
        let two_new = ds(vec![utt("a x y x", "O O O O")]);
        assert_relative_eq!(word_diversity(&two_new, &orig).unwrap(), 20.0);
        assert_eq!(
            word_diversity(&two_new, &ds(vec![])),
            Err(MetricsError::EmptyOriginal)
        );
    }

    #[test]
    fn delexicalization_uses_bare_types() {
        let u = utt("fly to new york on monday", "O O B-city I-city O B-day");
        assert_eq!(delexicalize(&u), ["fly", "to", "city", "on", "day"]);
        let u = utt("x y", "B-a B-a");
        assert_eq!(delexicalize(&u), ["a", "a"]);
    }

    #[test]
    fn originality_cases() {
        let orig = ds(vec![utt("fly to boston", "O O B-city"), utt("hello", "O")]);
        assert_eq!(originality_delex(&orig, &orig), 0.0);
        let value_swapped = ds(vec![utt("fly to san jose", "O O B-city I-city")]);
        assert_eq!(originality_delex(&value_swapped, &orig), 0.0);
        let aug = ds(vec![
            utt("fly to denver", "O O B-city"),
            utt("go to denver", "O O B-city"),
            utt("hi", "O"),
            utt("denver please", "B-city O"),
        ]);
        assert_relative_eq!(originality_delex(&aug, &orig), 75.0);
        assert_eq!(originality_delex(&ds(vec![]), &orig), 0.0);
    }

    #[test]
    fn report_collects_new_types() {
        let orig = ds(vec![utt("fly to boston", "O O B-city")]);
        let aug = ds(vec![utt("fly to san jose", "O O B-city I-city")]);
        let r = diversity_report(&aug, &orig).unwrap();
        assert_eq!(
            r.new_word_types.iter().cloned().collect::<Vec<_>>(),
            ["jose", "san"]
        );
        assert_eq!(r.novel_pattern_count, 0);
        assert!(r.to_tsv().contains("new_word_types\tjose san\n"));
    }

    #[test]
    fn f1_hand_cases() {
        let gold = ds(vec![utt("fly from boston to denver", "O O B-from O B-to")]);
        let r = entity_f1(&gold, &gold).unwrap();
        assert_eq!((r.precision(), r.recall(), r.f1()), (1.0, 1.0, 1.0));

        let half = ds(vec![utt("fly from boston to denver", "O O B-from O O")]);
        let r = entity_f1(&half, &gold).unwrap();
        assert_eq!(r.precision(), 1.0);
        assert_eq!(r.recall(), 0.5);
        assert!((r.f1() - 2.0 / 3.0).abs() < 1e-12);

        let wrong_type = ds(vec![utt("fly from boston to denver", "O O B-to O B-to")]);
        let r = entity_f1(&wrong_type, &gold).unwrap();
        assert_eq!(r.per_type["from"].f1, 0.0);
        assert_eq!(r.overall.true_positives, 1);
        assert_eq!(r.overall.predicted, 2);
    }

    #[test]
    fn f1_alignment_errors() {
        let a = ds(vec![utt("a b", "O O")]);
        let b = ds(vec![utt("a b c", "O O O")]);
        assert!(matches!(
            entity_f1(&a, &b),
            Err(MetricsError::AlignmentMismatch(_))
        ));
        assert!(matches!(
            entity_f1(&a, &ds(vec![])),
            Err(MetricsError::AlignmentMismatch(_))
        ));
    }

    #[test]
    fn f1_without_entities_is_zero() {
        let a = ds(vec![utt("a b", "O O")]);
        let r = entity_f1(&a, &a).unwrap();
        assert_eq!(r.f1(), 0.0);
    }
}
