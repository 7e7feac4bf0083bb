//! Formula corpora: JSONL loading with per-line diagnostics, complexity
//! statistics over (level group, line bin, domain), and a constructive
//! random-formula synthesizer with exact target level and line count.

use crate::ast::{self, AstNode, FracStyle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Math,
    Stat,
    Phy,
    QFin,
    QBio,
    Econ,
    Eess,
    Cs,
}

impl Domain {
    pub const ALL: [Domain; 8] = [
        Domain::Math,
        Domain::Stat,
        Domain::Phy,
        Domain::QFin,
        Domain::QBio,
        Domain::Econ,
        Domain::Eess,
        Domain::Cs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Math => "math",
            Domain::Stat => "stat",
            Domain::Phy => "phy",
            Domain::QFin => "q-fin",
            Domain::QBio => "q-bio",
            Domain::Econ => "econ",
            Domain::Eess => "eess",
            Domain::Cs => "cs",
        }
    }

    pub fn from_str_name(s: &str) -> Option<Domain> {
        Domain::ALL.iter().copied().find(|d| d.as_str() == s)
    }

    pub fn index(self) -> usize {
        Domain::ALL.iter().position(|d| *d == self).unwrap()
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisplayMode {
    Inline,
    Display,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub domain: Domain,
    pub latex: String,
    pub labels: Vec<String>,
    pub display_mode: DisplayMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadDiagnostic {
    /// 1-based line number in the JSONL file.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct LoadResult {
    pub records: Vec<CorpusRecord>,
    pub diagnostics: Vec<LoadDiagnostic>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("infeasible synthesis spec: {0}")]
    InfeasibleSpec(String),
}

/// Load a JSONL corpus. Malformed lines become diagnostics, never silent
/// drops; well-formed lines still load.
pub fn load_corpus(path: &Path) -> Result<LoadResult, CorpusError> {
    let content = std::fs::read_to_string(path)?;
    Ok(load_corpus_str(&content))
}

pub fn load_corpus_str(content: &str) -> LoadResult {
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                diagnostics.push(LoadDiagnostic { line: lineno, message: format!("schema: {e}") });
                continue;
            }
        };
        if record.labels.is_empty() {
            diagnostics.push(LoadDiagnostic {
                line: lineno,
                message: "schema: labels must be non-empty".to_string(),
            });
            continue;
        }
        if !seen_ids.insert(record.id.clone()) {
            diagnostics.push(LoadDiagnostic {
                line: lineno,
                message: format!("schema: duplicate id {:?}", record.id),
            });
            continue;
        }
        if let Err(e) = ast::parse_formula(&record.latex) {
            diagnostics.push(LoadDiagnostic { line: lineno, message: format!("latex: {e}") });
            continue;
        }
        if let Some(e) = record.labels.iter().find_map(|l| ast::parse_formula(l).err()) {
            diagnostics.push(LoadDiagnostic { line: lineno, message: format!("label: {e}") });
            continue;
        }
        records.push(record);
    }
    LoadResult { records, diagnostics }
}

pub fn save_corpus(records: &[CorpusRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Statistics table
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LevelGroup {
    L1to2,
    L3to5,
    L6to7,
}

impl LevelGroup {
    pub const ALL: [LevelGroup; 3] = [LevelGroup::L1to2, LevelGroup::L3to5, LevelGroup::L6to7];

    pub fn of(level: u32) -> Option<LevelGroup> {
        match level {
            1..=2 => Some(LevelGroup::L1to2),
            3..=5 => Some(LevelGroup::L3to5),
            6..=7 => Some(LevelGroup::L6to7),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LevelGroup::L1to2 => "[1-2]",
            LevelGroup::L3to5 => "[3-5]",
            LevelGroup::L6to7 => "[6-7]",
        }
    }

    pub fn from_str_name(s: &str) -> Option<LevelGroup> {
        LevelGroup::ALL.iter().copied().find(|g| g.as_str() == s)
    }

    fn index(self) -> usize {
        LevelGroup::ALL.iter().position(|g| *g == self).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LineBin {
    A, // 1-3 lines
    B, // 4-8
    C, // 9-20
    D, // 21-51
}

impl LineBin {
    pub const ALL: [LineBin; 4] = [LineBin::A, LineBin::B, LineBin::C, LineBin::D];

    pub fn of(lines: usize) -> Option<LineBin> {
        match lines {
            1..=3 => Some(LineBin::A),
            4..=8 => Some(LineBin::B),
            9..=20 => Some(LineBin::C),
            21..=51 => Some(LineBin::D),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LineBin::A => "A",
            LineBin::B => "B",
            LineBin::C => "C",
            LineBin::D => "D",
        }
    }

    pub fn from_str_name(s: &str) -> Option<LineBin> {
        LineBin::ALL.iter().copied().find(|b| b.as_str() == s)
    }

    fn index(self) -> usize {
        LineBin::ALL.iter().position(|b| *b == self).unwrap()
    }
}

/// 3 level groups x 4 line bins x 8 domains grid of record counts, plus the
/// records that fall outside the grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatTable {
    counts: [[[u64; 8]; 4]; 3],
    pub overflow: Vec<String>,
}

impl Default for StatTable {
    fn default() -> Self {
        StatTable { counts: [[[0; 8]; 4]; 3], overflow: Vec::new() }
    }
}

impl StatTable {
    pub fn get(&self, g: LevelGroup, b: LineBin, d: Domain) -> u64 {
        self.counts[g.index()][b.index()][d.index()]
    }

    pub fn set(&mut self, g: LevelGroup, b: LineBin, d: Domain, v: u64) {
        self.counts[g.index()][b.index()][d.index()] = v;
    }

    pub fn increment(&mut self, g: LevelGroup, b: LineBin, d: Domain) {
        self.counts[g.index()][b.index()][d.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().flatten().sum()
    }

    /// CSV export: level_group,line_bin,domain,count, all 96 cells.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["level_group", "line_bin", "domain", "count"]).unwrap();
        for g in LevelGroup::ALL {
            for b in LineBin::ALL {
                for d in Domain::ALL {
                    w.write_record([
                        g.as_str(),
                        b.as_str(),
                        d.as_str(),
                        &self.get(g, b, d).to_string(),
                    ])
                    .unwrap();
                }
            }
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn from_csv(text: &str) -> Option<StatTable> {
        let mut table = StatTable::default();
        let mut r = csv::Reader::from_reader(text.as_bytes());
        for rec in r.records() {
            let rec = rec.ok()?;
            let g = LevelGroup::from_str_name(rec.get(0)?)?;
            let b = LineBin::from_str_name(rec.get(1)?)?;
            let d = Domain::from_str_name(rec.get(2)?)?;
            let count: u64 = rec.get(3)?.parse().ok()?;
            table.set(g, b, d, count);
        }
        Some(table)
    }
}

/// Bin every record by (hierarchical level, line count, domain). Records
/// outside levels 1-7 or lines 1-51 land in the overflow list.
pub fn stat_table(records: &[CorpusRecord]) -> StatTable {
    let mut table = StatTable::default();
    for record in records {
        let ast = match ast::parse_formula(&record.latex) {
            Ok(a) => a,
            Err(e) => {
                table.overflow.push(format!("{}: unparseable ({e})", record.id));
                continue;
            }
        };
        match (LevelGroup::of(ast.level), LineBin::of(ast.line_count)) {
            (Some(g), Some(b)) => table.increment(g, b, record.domain),
            _ => table.overflow.push(format!(
                "{}: level {} lines {} outside grid",
                record.id, ast.level, ast.line_count
            )),
        }
    }
    table
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub target_level: u32,
    pub target_lines: usize,
    pub max_chars: usize,
    pub rng_seed: u64,
}

const LETTERS: &[&str] = &[
    "a", "b", "c", "d", "e", "f", "g", "h", "k", "m", "n", "p", "q", "r", "s", "t", "u", "v",
    "w", "x", "y", "z",
];
const OPERATORS: &[&str] = &["+", "-", "="];
const ZERO_ARG_COMMANDS: &[&str] = &["\\alpha", "\\beta", "\\gamma", "\\lambda", "\\mu", "\\pi"];
const ENV_NAMES: &[&str] = &["matrix", "pmatrix", "bmatrix", "cases"];

fn atom(rng: &mut ChaCha8Rng) -> AstNode {
    if rng.gen_bool(0.15) {
        AstNode::GenericCommand {
            name: ZERO_ARG_COMMANDS[rng.gen_range(0..ZERO_ARG_COMMANDS.len())][1..].to_string(),
            args: Vec::new(),
        }
    } else if rng.gen_bool(0.2) {
        AstNode::Atom(rng.gen_range(0..10).to_string())
    } else {
        AstNode::Atom(LETTERS[rng.gen_range(0..LETTERS.len())].to_string())
    }
}

/// A node with `hierarchical_level` exactly `k` (k >= 1). Every constructor
/// here adds exactly one level over its deepest child.
fn core(k: u32, rng: &mut ChaCha8Rng, minimal: bool) -> AstNode {
    debug_assert!(k >= 1);
    let inner = if k == 1 { atom(rng) } else { core(k - 1, rng, minimal) };
    let choice = if minimal { 0 } else { rng.gen_range(0..if k >= 2 { 5 } else { 4 }) };
    match choice {
        0 => AstNode::Script {
            base: Box::new(atom(rng)),
            sub: None,
            sup: Some(Box::new(inner)),
        },
        1 => AstNode::Script {
            base: Box::new(atom(rng)),
            sub: Some(Box::new(inner)),
            sup: None,
        },
        2 => AstNode::Frac {
            numerator: Box::new(inner),
            denominator: Box::new(atom(rng)),
            style: FracStyle::Plain,
        },
        3 => AstNode::Radical { degree: None, radicand: Box::new(inner) },
        _ => {
            // Single-row environment; one cell holds the deep child.
            let name = ENV_NAMES[rng.gen_range(0..ENV_NAMES.len())].to_string();
            let mut cells = vec![AstNode::Sequence(vec![inner])];
            for _ in 0..rng.gen_range(0..2usize) {
                cells.push(AstNode::Sequence(vec![atom(rng)]));
            }
            AstNode::Environment { name, rows: vec![cells] }
        }
    }
}

/// Simple level<=1 filler segment for extra lines: `x` or `x=y`.
fn filler_segment(rng: &mut ChaCha8Rng, out: &mut Vec<AstNode>) {
    out.push(atom(rng));
    if rng.gen_bool(0.5) {
        out.push(AstNode::Atom("=".to_string()));
        out.push(atom(rng));
    }
}

/// Generate a LaTeX string whose measured hierarchical level and line count
/// equal the spec exactly, within the character budget. Deterministic per
/// seed.
pub fn synth_formula(spec: &SynthSpec) -> Result<String, CorpusError> {
    if spec.target_level > 7 {
        return Err(CorpusError::InfeasibleSpec(format!(
            "target_level {} above 7",
            spec.target_level
        )));
    }
    if spec.target_lines == 0 {
        return Err(CorpusError::InfeasibleSpec("target_lines must be >= 1".into()));
    }
    if spec.target_level == 0 && spec.target_lines > 1 {
        return Err(CorpusError::InfeasibleSpec(
            "a single character cannot span multiple lines".into(),
        ));
    }
    let min_chars = spec.target_level as usize + 1 + (spec.target_lines - 1);
    if spec.max_chars < min_chars {
        return Err(CorpusError::InfeasibleSpec(format!(
            "max_chars {} below the minimum {} for this level/lines",
            spec.max_chars, min_chars
        )));
    }

    for minimal in [false, true] {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        let root = build(spec, &mut rng, minimal);
        if ast::char_count(&root) <= spec.max_chars {
            let out = ast::serialize_node(&root);
            debug_assert_eq!(ast::hierarchical_level(&root), spec.target_level);
            debug_assert_eq!(ast::line_count(&root), spec.target_lines);
            return Ok(out);
        }
    }
    // Minimal construction stays within min_chars <= max_chars.
    unreachable!("minimal construction exceeded the validated budget")
}

fn build(spec: &SynthSpec, rng: &mut ChaCha8Rng, minimal: bool) -> AstNode {
    if spec.target_level == 0 {
        return AstNode::Sequence(vec![AstNode::Atom(
            LETTERS[rng.gen_range(0..LETTERS.len())].to_string(),
        )]);
    }
    let mut children = vec![core(spec.target_level, rng, minimal)];
    for _ in 1..spec.target_lines {
        children.push(AstNode::RowBreak);
        if minimal {
            children.push(atom(rng));
        } else {
            filler_segment(rng, &mut children);
        }
    }
    if !minimal {
        // Pad with extra operator-joined atoms while the budget allows.
        let mut current = ast::char_count(&AstNode::Sequence(children.clone()));
        while current + 2 <= spec.max_chars && rng.gen_bool(0.6) {
            children.push(AstNode::Atom(
                OPERATORS[rng.gen_range(0..OPERATORS.len())].to_string(),
            ));
            children.push(atom(rng));
            current += 2;
        }
    }
    AstNode::Sequence(children)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::parse_formula;

    fn record_line(id: &str, latex: &str) -> String {
        format!(
            r#"{{"id":"{id}","domain":"math","latex":"{latex}","labels":["{latex}"],"display_mode":"inline"}}"#
        )
    }

    #[test]
    fn loads_well_formed_corpus() {
        let content = format!(
            "{}\n{}\n{}\n",
            record_line("a", "x+y"),
            record_line("b", "z^2"),
            record_line("c", "q")
        );
        let r = load_corpus_str(&content);
        assert_eq!(r.records.len(), 3);
        assert!(r.diagnostics.is_empty());
    }

    #[test]
    fn missing_labels_is_schema_error_other_lines_load() {
        let content = format!(
            "{}\n{}\n",
            r#"{"id":"a","domain":"math","latex":"x","display_mode":"inline"}"#,
            record_line("b", "y")
        );
        let r = load_corpus_str(&content);
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.diagnostics.len(), 1);
        assert_eq!(r.diagnostics[0].line, 1);
    }

    #[test]
    fn duplicate_id_is_schema_error() {
        let content = format!("{}\n{}\n", record_line("a", "x"), record_line("a", "y"));
        let r = load_corpus_str(&content);
        assert_eq!(r.records.len(), 1);
        assert!(r.diagnostics[0].message.contains("duplicate"));
    }

    #[test]
    fn save_load_roundtrip() {
        let content = format!("{}\n{}\n", record_line("a", "x+y"), record_line("b", "z^2"));
        let r1 = load_corpus_str(&content);
        let saved = save_corpus(&r1.records);
        let r2 = load_corpus_str(&saved);
        assert_eq!(r1.records, r2.records);
    }

    #[test]
    fn binning_matches_reference_cells() {
        // level 4, 5 lines -> ([3-5], B); level 1, 1 line -> ([1-2], A)
        let deep = synth_formula(&SynthSpec {
            target_level: 4,
            target_lines: 5,
            max_chars: 40,
            rng_seed: 9,
        })
        .unwrap();
        let records = vec![
            CorpusRecord {
                id: "deep".into(),
                domain: Domain::Math,
                latex: deep,
                labels: vec!["x".into()],
                display_mode: DisplayMode::Display,
            },
            CorpusRecord {
                id: "flat".into(),
                domain: Domain::Cs,
                latex: "a+b".into(),
                labels: vec!["a+b".into()],
                display_mode: DisplayMode::Inline,
            },
        ];
        let t = stat_table(&records);
        assert_eq!(t.get(LevelGroup::L3to5, LineBin::B, Domain::Math), 1);
        assert_eq!(t.get(LevelGroup::L1to2, LineBin::A, Domain::Cs), 1);
        assert_eq!(t.total(), 2);
    }

    #[test]
    fn level_zero_goes_to_overflow() {
        let records = vec![CorpusRecord {
            id: "atom".into(),
            domain: Domain::Math,
            latex: "q".into(),
            labels: vec!["q".into()],
            display_mode: DisplayMode::Inline,
        }];
        let t = stat_table(&records);
        assert_eq!(t.total(), 0);
        assert_eq!(t.overflow.len(), 1);
    }

    #[test]
    fn csv_roundtrip() {
        let mut t = StatTable::default();
        t.increment(LevelGroup::L1to2, LineBin::A, Domain::Math);
        t.increment(LevelGroup::L6to7, LineBin::D, Domain::Cs);
        let csv = t.to_csv();
        let back = StatTable::from_csv(&csv).unwrap();
        assert_eq!(back.get(LevelGroup::L1to2, LineBin::A, Domain::Math), 1);
        assert_eq!(back.get(LevelGroup::L6to7, LineBin::D, Domain::Cs), 1);
        assert_eq!(back.total(), t.total());
    }

    #[test]
    fn synth_level_zero_is_single_letter() {
        let s = synth_formula(&SynthSpec {
            target_level: 0,
            target_lines: 1,
            max_chars: 10,
            rng_seed: 1,
        })
        .unwrap();
        let f = parse_formula(&s).unwrap();
        assert_eq!(f.level, 0);
        assert_eq!(f.char_count, 1);
    }

    #[test]
    fn synth_hits_spec_exactly() {
        for seed in 0..50 {
            let spec = SynthSpec {
                target_level: 1 + (seed % 7) as u32,
                target_lines: 1 + (seed % 4) as usize,
                max_chars: 40,
                rng_seed: seed,
            };
            let s = synth_formula(&spec).unwrap();
            let f = parse_formula(&s).unwrap();
            assert_eq!(f.level, spec.target_level, "formula {s}");
            assert_eq!(f.line_count, spec.target_lines, "formula {s}");
            assert!(f.char_count <= spec.max_chars, "formula {s}");
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let spec = SynthSpec { target_level: 3, target_lines: 2, max_chars: 30, rng_seed: 42 };
        assert_eq!(synth_formula(&spec).unwrap(), synth_formula(&spec).unwrap());
    }

    #[test]
    fn infeasible_specs_rejected() {
        assert!(synth_formula(&SynthSpec {
            target_level: 0,
            target_lines: 3,
            max_chars: 10,
            rng_seed: 1
        })
        .is_err());
        assert!(synth_formula(&SynthSpec {
            target_level: 8,
            target_lines: 1,
            max_chars: 10,
            rng_seed: 1
        })
        .is_err());
        assert!(synth_formula(&SynthSpec {
            target_level: 5,
            target_lines: 1,
            max_chars: 2,
            rng_seed: 1
        })
        .is_err());
    }
}
