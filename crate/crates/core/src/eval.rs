//! Equivalence-normalized ("fair") and raw ("non-fair") evaluation of
//! predicted LaTeX against one-to-many ground-truth labels: character
//! recall, edit distance, and token BLEU, best match over labels.

use crate::ast;
use crate::lexer::{self, Token, TokenKind};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Fair,
    NonFair,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("label string is empty")]
    EmptyLabel,
    #[error("empty evaluation corpus")]
    EmptyCorpus,
    #[error("rule would not terminate: {0}")]
    NonTerminatingRule(String),
    #[error("bad rule file: {0}")]
    RuleFormat(String),
    #[error("latex error: {0}")]
    Latex(String),
}

impl From<ast::ParseError> for EvalError {
    fn from(e: ast::ParseError) -> Self {
        EvalError::Latex(e.to_string())
    }
}

impl From<lexer::LexError> for EvalError {
    fn from(e: lexer::LexError) -> Self {
        EvalError::Latex(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Rules
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
enum PatTok {
    /// Literal token text.
    Lit(String),
    /// `#1`..`#9`; binds one token or one balanced brace group.
    Wild(u8),
}

#[derive(Debug, Clone)]
struct CompiledRule {
    pattern: Vec<PatTok>,
    replacement: Vec<PatTok>,
}

/// Token-rewriting rules that map render-equivalent LaTeX to one canonical
/// form. Rules are applied to a fixed point; the load-time measure check
/// keeps that terminating.
#[derive(Debug, Clone, Default)]
pub struct EquivalenceRuleSet {
    rules: Vec<CompiledRule>,
    pub builtins_enabled: bool,
}

#[derive(Debug, Deserialize)]
struct RuleFileEntry {
    pattern: String,
    replacement: String,
}

#[derive(Debug, Deserialize)]
struct RuleFile {
    #[serde(default)]
    rules: Vec<RuleFileEntry>,
    #[serde(default = "default_true")]
    builtins: bool,
}

fn default_true() -> bool {
    true
}

fn compile_fragment(src: &str) -> Result<Vec<PatTok>, EvalError> {
    let toks = lexer::tokenize_significant(src)?;
    let mut out = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        if toks[i].kind == TokenKind::OperatorSymbol
            && toks[i].text == "#"
            && i + 1 < toks.len()
            && toks[i + 1].kind == TokenKind::Digit
        {
            let d = toks[i + 1].text.as_bytes()[0] - b'0';
            if d == 0 {
                return Err(EvalError::RuleFormat("wildcard index must be 1-9".into()));
            }
            out.push(PatTok::Wild(d));
            i += 2;
        } else {
            out.push(PatTok::Lit(toks[i].text.clone()));
            i += 1;
        }
    }
    Ok(out)
}

fn literal_measure(frag: &[PatTok]) -> (usize, usize, Vec<&str>) {
    let lits: Vec<&str> = frag
        .iter()
        .filter_map(|p| match p {
            PatTok::Lit(s) => Some(s.as_str()),
            PatTok::Wild(_) => None,
        })
        .collect();
    (lits.len(), lits.iter().map(|s| s.len()).sum(), lits)
}

impl EquivalenceRuleSet {
    pub fn builtins() -> EquivalenceRuleSet {
        EquivalenceRuleSet { rules: Vec::new(), builtins_enabled: true }
    }

    pub fn empty() -> EquivalenceRuleSet {
        EquivalenceRuleSet { rules: Vec::new(), builtins_enabled: false }
    }

    pub fn add_rule(&mut self, pattern: &str, replacement: &str) -> Result<(), EvalError> {
        let pat = compile_fragment(pattern)?;
        let rep = compile_fragment(replacement)?;
        if pat.is_empty() {
            return Err(EvalError::RuleFormat("empty pattern".into()));
        }
        // Every replacement wildcard must come from the pattern, once each.
        for w in rep.iter().filter_map(|p| match p {
            PatTok::Wild(d) => Some(d),
            _ => None,
        }) {
            let in_pat = pat.iter().filter(|p| **p == PatTok::Wild(*w)).count();
            let in_rep = rep.iter().filter(|p| **p == PatTok::Wild(*w)).count();
            if in_pat != 1 || in_rep != 1 {
                return Err(EvalError::RuleFormat(format!(
                    "wildcard #{w} must appear exactly once on each side"
                )));
            }
        }
        // Strict decrease of (literal count, literal chars, texts) per
        // application; this is what makes fixed-point rewriting terminate.
        let pm = literal_measure(&pat);
        let rm = literal_measure(&rep);
        if rm >= pm {
            return Err(EvalError::NonTerminatingRule(format!(
                "{pattern} -> {replacement}"
            )));
        }
        self.rules.push(CompiledRule { pattern: pat, replacement: rep });
        Ok(())
    }

    /// Load from JSON: {"rules": [{"pattern", "replacement"}], "builtins": bool}.
    pub fn from_json(json: &str) -> Result<EquivalenceRuleSet, EvalError> {
        let file: RuleFile =
            serde_json::from_str(json).map_err(|e| EvalError::RuleFormat(e.to_string()))?;
        let mut set = EquivalenceRuleSet { rules: Vec::new(), builtins_enabled: file.builtins };
        for r in &file.rules {
            set.add_rule(&r.pattern, &r.replacement)?;
        }
        Ok(set)
    }
}

fn match_at(tokens: &[Token], pos: usize, pattern: &[PatTok]) -> Option<(usize, HashMap<u8, Vec<Token>>)> {
    let mut i = pos;
    let mut bindings: HashMap<u8, Vec<Token>> = HashMap::new();
    for p in pattern {
        match p {
            PatTok::Lit(text) => {
                if tokens.get(i).map(|t| t.text.as_str()) != Some(text.as_str()) {
                    return None;
                }
                i += 1;
            }
            PatTok::Wild(d) => {
                let t = tokens.get(i)?;
                if t.kind == TokenKind::OpenGroup {
                    let mut depth = 0usize;
                    let start = i;
                    loop {
                        let t2 = tokens.get(i)?;
                        match t2.kind {
                            TokenKind::OpenGroup => depth += 1,
                            TokenKind::CloseGroup => {
                                depth -= 1;
                                if depth == 0 {
                                    i += 1;
                                    break;
                                }
                            }
                            _ => {}
                        }
                        i += 1;
                    }
                    bindings.insert(*d, tokens[start..i].to_vec());
                } else {
                    bindings.insert(*d, vec![t.clone()]);
                    i += 1;
                }
            }
        }
    }
    Some((i, bindings))
}

fn apply_rules_fixpoint(mut tokens: Vec<Token>, rules: &[CompiledRule]) -> Vec<Token> {
    if rules.is_empty() {
        return tokens;
    }
    // Terminates by the load-time measure check; the cap is a backstop.
    'outer: for _ in 0..100_000 {
        for pos in 0..tokens.len() {
            for rule in rules {
                if let Some((end, bindings)) = match_at(&tokens, pos, &rule.pattern) {
                    let mut replacement = Vec::new();
                    for p in &rule.replacement {
                        match p {
                            PatTok::Lit(text) => replacement.push(Token {
                                kind: classify_text(text),
                                text: text.clone(),
                                position: 0,
                            }),
                            PatTok::Wild(d) => {
                                replacement.extend(bindings.get(d).cloned().unwrap_or_default())
                            }
                        }
                    }
                    tokens.splice(pos..end, replacement);
                    continue 'outer;
                }
            }
        }
        return tokens;
    }
    tokens
}

fn classify_text(text: &str) -> TokenKind {
    match lexer::tokenize_significant(text) {
        Ok(ts) if ts.len() == 1 => ts[0].kind,
        _ => TokenKind::OperatorSymbol,
    }
}

// ---------------------------------------------------------------------------
// Builtin normalization pass
// ---------------------------------------------------------------------------

const COMMAND_ALIASES: &[(&str, &str)] = &[
    ("\\dfrac", "\\frac"),
    ("\\tfrac", "\\frac"),
    ("\\le", "\\leq"),
    ("\\ne", "\\neq"),
    ("\\to", "\\rightarrow"),
    ("\\rm", "\\mathrm"),
];

const SPACING_COMMANDS: &[&str] = &["\\,", "\\;", "\\!", "\\quad", "\\qquad", "\\ "];

const SIZED_DELIMS: &[&str] = &["(", ")", "[", "]", "\\{", "\\}", "|"];

fn builtin_pass(tokens: Vec<Token>) -> Vec<Token> {
    let mut out: Vec<Token> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let t = &tokens[i];
        if t.kind == TokenKind::Command {
            if SPACING_COMMANDS.contains(&t.text.as_str()) {
                i += 1;
                continue;
            }
            if (t.text == "\\left" || t.text == "\\right")
                && tokens
                    .get(i + 1)
                    .is_some_and(|n| SIZED_DELIMS.contains(&n.text.as_str()))
            {
                i += 1; // drop the sizing command, keep the delimiter
                continue;
            }
            if let Some((_, to)) = COMMAND_ALIASES.iter().find(|(from, _)| *from == t.text) {
                out.push(Token { kind: TokenKind::Command, text: to.to_string(), position: t.position });
                i += 1;
                continue;
            }
        }
        // {\rm X ...} -> \mathrm{X ...}
        if t.kind == TokenKind::OpenGroup
            && tokens
                .get(i + 1)
                .is_some_and(|n| n.kind == TokenKind::Command && n.text == "\\rm")
        {
            out.push(Token {
                kind: TokenKind::Command,
                text: "\\mathrm".to_string(),
                position: t.position,
            });
            out.push(t.clone()); // keep the open brace after the command
            i += 2;
            continue;
        }
        out.push(t.clone());
        i += 1;
    }
    out
}

fn builtin_fixpoint(mut tokens: Vec<Token>) -> Vec<Token> {
    for _ in 0..1000 {
        let next = builtin_pass(tokens.clone());
        if next == tokens {
            return tokens;
        }
        tokens = next;
    }
    tokens
}

/// Rewrite to canonical form: canonical tokens, builtin equivalence pass,
/// user rules to a fixed point, then canonical serialization. Idempotent.
pub fn normalize(latex: &str, rules: &EquivalenceRuleSet) -> Result<String, EvalError> {
    // Canonicalize first so rule patterns always see canonical token streams.
    let canonical = ast::parse_formula(latex)?.serialize();
    let mut tokens = lexer::tokenize_significant(&canonical)?;
    if rules.builtins_enabled {
        tokens = builtin_fixpoint(tokens);
    }
    tokens = apply_rules_fixpoint(tokens, &rules.rules);
    let rewritten = crate::subformula::join_tokens(&tokens);
    Ok(ast::parse_formula(&rewritten)?.serialize())
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Levenshtein distance over Unicode scalar values, unit costs.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - edit_distance / label_length`. Deliberately unclamped: gross
/// over-generation drives it negative.
pub fn char_recall(prediction: &str, label: &str) -> Result<f64, EvalError> {
    let len = label.chars().count();
    if len == 0 {
        return Err(EvalError::EmptyLabel);
    }
    Ok(1.0 - edit_distance(prediction, label) as f64 / len as f64)
}

fn bleu_tokens(s: &str) -> Vec<String> {
    match lexer::tokenize_significant(s) {
        Ok(ts) => ts.into_iter().map(|t| t.text).collect(),
        // Malformed strings fall back to character tokens.
        Err(_) => s.chars().map(|c| c.to_string()).collect(),
    }
}

/// BLEU over lexer tokens, n-grams up to 4, add-one smoothing for orders
/// with zero matches, brevity penalty `exp(1 - r/c)` when the candidate is
/// shorter than the reference.
pub fn bleu(prediction: &str, label: &str) -> f64 {
    let pred = bleu_tokens(prediction);
    let refr = bleu_tokens(label);
    if pred.is_empty() {
        return if refr.is_empty() { 1.0 } else { 0.0 };
    }
    let mut log_sum = 0.0;
    for k in 1..=4usize {
        let total = pred.len().saturating_sub(k - 1);
        let mut ref_counts: HashMap<&[String], usize> = HashMap::new();
        if refr.len() >= k {
            for w in refr.windows(k) {
                *ref_counts.entry(w).or_insert(0) += 1;
            }
        }
        let mut matched = 0usize;
        let mut pred_counts: HashMap<&[String], usize> = HashMap::new();
        if pred.len() >= k {
            for w in pred.windows(k) {
                *pred_counts.entry(w).or_insert(0) += 1;
            }
        }
        for (w, c) in &pred_counts {
            matched += (*c).min(ref_counts.get(w).copied().unwrap_or(0));
        }
        let p = if matched == 0 {
            (matched + 1) as f64 / (total + 1) as f64
        } else {
            matched as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let mut score = (log_sum / 4.0).exp();
    if pred.len() < refr.len() {
        score *= (1.0 - refr.len() as f64 / pred.len() as f64).exp();
    }
    score.clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Sample / corpus evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub id: String,
    pub prediction: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub cr: f64,
    pub aed: usize,
    pub bleu: f64,
}

/// Per-metric best label indices alongside the scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub scores: MetricScores,
    pub best_label_cr: usize,
    pub best_label_aed: usize,
    pub best_label_bleu: usize,
    /// Normalization failed; raw strings were scored instead.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerSampleReport {
    pub id: String,
    pub nonfair: SampleScores,
    pub fair: SampleScores,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateScores {
    pub mean_cr: f64,
    pub mean_aed: f64,
    pub mean_bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_sample: Vec<PerSampleReport>,
    pub aggregate_nonfair: AggregateScores,
    pub aggregate_fair: AggregateScores,
}

fn score_against(prediction: &str, labels: &[String]) -> (MetricScores, usize, usize, usize) {
    let mut best_cr = f64::NEG_INFINITY;
    let mut best_cr_i = 0;
    let mut best_aed = usize::MAX;
    let mut best_aed_i = 0;
    let mut best_bleu = f64::NEG_INFINITY;
    let mut best_bleu_i = 0;
    for (i, label) in labels.iter().enumerate() {
        let aed = edit_distance(prediction, label);
        let cr = match char_recall(prediction, label) {
            Ok(v) => v,
            // Empty label string: recall over a unit denominator.
            Err(_) => 1.0 - aed as f64,
        };
        let bs = bleu(prediction, label);
        if cr > best_cr {
            best_cr = cr;
            best_cr_i = i;
        }
        if aed < best_aed {
            best_aed = aed;
            best_aed_i = i;
        }
        if bs > best_bleu {
            best_bleu = bs;
            best_bleu_i = i;
        }
    }
    (
        MetricScores { cr: best_cr, aed: best_aed, bleu: best_bleu },
        best_cr_i,
        best_aed_i,
        best_bleu_i,
    )
}

/// Score one sample. Fair mode normalizes prediction and labels first; if any
/// of them fails to normalize, the raw strings are scored and flagged.
pub fn evaluate_sample(
    sample: &EvalSample,
    rules: &EquivalenceRuleSet,
    mode: EvalMode,
) -> SampleScores {
    let (prediction, labels, fallback) = match mode {
        EvalMode::NonFair => (sample.prediction.clone(), sample.labels.clone(), false),
        EvalMode::Fair => {
            let pred = normalize(&sample.prediction, rules);
            let labs: Result<Vec<String>, EvalError> =
                sample.labels.iter().map(|l| normalize(l, rules)).collect();
            match (pred, labs) {
                (Ok(p), Ok(ls)) => (p, ls, false),
                _ => (sample.prediction.clone(), sample.labels.clone(), true),
            }
        }
    };
    let (scores, ci, ai, bi) = score_against(&prediction, &labels);
    SampleScores {
        scores,
        best_label_cr: ci,
        best_label_aed: ai,
        best_label_bleu: bi,
        fallback,
    }
}

/// Fair and non-fair scores for every sample plus arithmetic-mean aggregates.
pub fn evaluate_corpus(
    samples: &[EvalSample],
    rules: &EquivalenceRuleSet,
) -> Result<EvalReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let per_sample: Vec<PerSampleReport> = samples
        .iter()
        .map(|s| PerSampleReport {
            id: s.id.clone(),
            nonfair: evaluate_sample(s, rules, EvalMode::NonFair),
            fair: evaluate_sample(s, rules, EvalMode::Fair),
        })
        .collect();
    let n = per_sample.len() as f64;
    let agg = |pick: fn(&PerSampleReport) -> &SampleScores| AggregateScores {
        mean_cr: per_sample.iter().map(|p| pick(p).scores.cr).sum::<f64>() / n,
        mean_aed: per_sample.iter().map(|p| pick(p).scores.aed as f64).sum::<f64>() / n,
        mean_bleu: per_sample.iter().map(|p| pick(p).scores.bleu).sum::<f64>() / n,
    };
    Ok(EvalReport {
        aggregate_nonfair: agg(|p| &p.nonfair),
        aggregate_fair: agg(|p| &p.fair),
        per_sample,
    })
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Report JSON with real numbers fixed to six decimal places.
pub fn report_to_json(report: &EvalReport) -> String {
    let mut r = report.clone();
    for p in &mut r.per_sample {
        for s in [&mut p.nonfair, &mut p.fair] {
            s.scores.cr = round6(s.scores.cr);
            s.scores.bleu = round6(s.scores.bleu);
        }
    }
    for a in [&mut r.aggregate_nonfair, &mut r.aggregate_fair] {
        a.mean_cr = round6(a.mean_cr);
        a.mean_aed = round6(a.mean_aed);
        a.mean_bleu = round6(a.mean_bleu);
    }
    serde_json::to_string_pretty(&r).expect("report serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_dfrac_normalizes() {
        let rules = EquivalenceRuleSet::builtins();
        assert_eq!(normalize("\\dfrac{1}{2}", &rules).unwrap(), "\\frac{1}{2}");
    }

    #[test]
    fn builtin_left_right_stripped() {
        let rules = EquivalenceRuleSet::builtins();
        assert_eq!(normalize("\\left( x \\right)", &rules).unwrap(), "(x)");
        assert_eq!(normalize("\\left[ y \\right]", &rules).unwrap(), "[y]");
    }

    #[test]
    fn builtin_spacing_removed_and_rm_rewritten() {
        let rules = EquivalenceRuleSet::builtins();
        assert_eq!(normalize("a \\, b \\quad c", &rules).unwrap(), "abc");
        assert_eq!(normalize("{\\rm Xy}", &rules).unwrap(), "\\mathrm{Xy}");
    }

    #[test]
    fn builtin_aliases() {
        let rules = EquivalenceRuleSet::builtins();
        assert_eq!(normalize("a \\le b", &rules).unwrap(), "a\\leq b");
        assert_eq!(normalize("a \\to b", &rules).unwrap(), "a\\rightarrow b");
        assert_eq!(normalize("a \\ne b", &rules).unwrap(), "a\\neq b");
    }

    #[test]
    fn normalize_is_idempotent() {
        let rules = EquivalenceRuleSet::builtins();
        for src in [
            "\\dfrac{1}{2}",
            "\\left( \\dfrac{a}{b} \\right)",
            "a^2 + {\\rm id}",
            "x \\, \\le \\; y",
            "\\begin{matrix}a&\\tfrac{1}{2}\\\\c&d\\end{matrix}",
        ] {
            let once = normalize(src, &rules).unwrap();
            let twice = normalize(&once, &rules).unwrap();
            assert_eq!(once, twice, "not idempotent on {src}");
        }
    }

    #[test]
    fn user_rules_apply_and_terminate() {
        let mut rules = EquivalenceRuleSet::empty();
        rules.add_rule("\\varepsilon", "\\epsilon").unwrap();
        assert_eq!(normalize("\\varepsilon + x", &rules).unwrap(), "\\epsilon+x");
    }

    #[test]
    fn growing_rule_rejected() {
        let mut rules = EquivalenceRuleSet::empty();
        assert!(matches!(
            rules.add_rule("\\frac", "\\dfrac"),
            Err(EvalError::NonTerminatingRule(_))
        ));
        assert!(matches!(
            rules.add_rule("x", "x"),
            Err(EvalError::NonTerminatingRule(_))
        ));
    }

    #[test]
    fn wildcard_rule_binds_groups() {
        let mut rules = EquivalenceRuleSet::empty();
        // \binomial{a}{b} -> \binom{a}{b}
        rules.add_rule("\\binomial#1#2", "\\binom#1#2").unwrap();
        assert_eq!(
            normalize("\\binomial{n}{k}", &rules).unwrap(),
            "\\binom{n}{k}"
        );
    }

    #[test]
    fn rule_file_roundtrip() {
        let json = r#"{"rules":[{"pattern":"\\varepsilon","replacement":"\\epsilon"}],"builtins":true}"#;
        let rules = EquivalenceRuleSet::from_json(json).unwrap();
        assert!(rules.builtins_enabled);
        assert_eq!(normalize("\\varepsilon", &rules).unwrap(), "\\epsilon");
    }

    #[test]
    fn edit_distance_basics() {
        assert_eq!(edit_distance("abc", "abc"), 0);
        assert_eq!(edit_distance("x^2", "x^3"), 1);
        assert_eq!(edit_distance("", "ab"), 2);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
    }

    #[test]
    fn char_recall_examples() {
        assert_eq!(char_recall("x^2", "x^2").unwrap(), 1.0);
        let cr = char_recall("x^3", "x^2").unwrap();
        assert!((cr - (1.0 - 1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(char_recall("aaaaaa", "a").unwrap(), -4.0);
        assert!(matches!(char_recall("x", ""), Err(EvalError::EmptyLabel)));
    }

    #[test]
    fn bleu_boundaries() {
        assert!((bleu("a + b", "a + b") - 1.0).abs() < 1e-12);
        assert_eq!(bleu("", "a + b"), 0.0);
        let s = bleu("a + b", "a + c");
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn fair_vs_nonfair_dfrac() {
        let sample = EvalSample {
            id: "s".into(),
            prediction: "\\frac{1}{2}".into(),
            labels: vec!["\\dfrac{1}{2}".into()],
        };
        let rules = EquivalenceRuleSet::builtins();
        let nf = evaluate_sample(&sample, &rules, EvalMode::NonFair);
        assert_eq!(nf.scores.aed, 1);
        assert!((nf.scores.cr - (1.0 - 1.0 / 12.0)).abs() < 1e-12);
        let f = evaluate_sample(&sample, &rules, EvalMode::Fair);
        assert_eq!(f.scores.aed, 0);
        assert_eq!(f.scores.cr, 1.0);
    }

    #[test]
    fn best_over_labels() {
        let sample = EvalSample {
            id: "s".into(),
            prediction: "b+c".into(),
            labels: vec!["zzzzz".into(), "b+c".into()],
        };
        let rules = EquivalenceRuleSet::empty();
        let s = evaluate_sample(&sample, &rules, EvalMode::NonFair);
        assert_eq!(s.scores.aed, 0);
        assert_eq!(s.best_label_aed, 1);
    }

    #[test]
    fn fair_without_rules_is_canonical_serialize_only() {
        let sample = EvalSample {
            id: "s".into(),
            prediction: "a^{2}".into(),
            labels: vec!["a^2".into()],
        };
        let s = evaluate_sample(&sample, &EquivalenceRuleSet::empty(), EvalMode::Fair);
        assert_eq!(s.scores.aed, 0);
    }

    #[test]
    fn malformed_prediction_falls_back() {
        let sample = EvalSample {
            id: "s".into(),
            prediction: "{a".into(),
            labels: vec!["{a}".into()],
        };
        let s = evaluate_sample(&sample, &EquivalenceRuleSet::builtins(), EvalMode::Fair);
        assert!(s.fallback);
        assert_eq!(s.scores.aed, 1);
    }

    #[test]
    fn corpus_aggregates_are_means_and_order_free() {
        let rules = EquivalenceRuleSet::empty();
        let mk = |id: &str, p: &str, l: &str| EvalSample {
            id: id.into(),
            prediction: p.into(),
            labels: vec![l.into()],
        };
        let mut samples = vec![mk("a", "xy", "xy"), mk("b", "x", "xy")];
        let r1 = evaluate_corpus(&samples, &rules).unwrap();
        assert!((r1.aggregate_nonfair.mean_cr - 0.75).abs() < 1e-12);
        samples.reverse();
        let r2 = evaluate_corpus(&samples, &rules).unwrap();
        assert_eq!(r1.aggregate_nonfair, r2.aggregate_nonfair);
        assert!(matches!(evaluate_corpus(&[], &rules), Err(EvalError::EmptyCorpus)));
    }

    #[test]
    fn report_json_rounds_to_six_places() {
        let rules = EquivalenceRuleSet::empty();
        let samples = vec![EvalSample {
            id: "a".into(),
            prediction: "ab".into(),
            labels: vec!["abc".into()],
        }];
        let json = report_to_json(&evaluate_corpus(&samples, &rules).unwrap());
        assert!(json.contains("0.666667"), "{json}");
    }
}
