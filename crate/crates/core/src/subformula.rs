//! Decompose a formula into candidate sub-formulas, sample them under a
//! coverage constraint, simulate random cropping over the token stream, and
//! emit render manifests for training-instance construction.

use crate::ast::{self, AstNode, FormulaAst};
use crate::lexer::{self, Token, TokenKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_PART_COUNT: usize = 4;
pub const DEFAULT_COVERAGE_THETA: f64 = 0.7;
pub const DEFAULT_LAMBDA: f64 = 0.3;
pub const DEFAULT_TARGET_SIZE: u32 = 448;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathStep {
    /// Index into `AstNode::children`.
    Child(usize),
    /// Whole row of the environment at the current path.
    EnvRow(usize),
    /// Operator-delimited run `[start, end)` of the sequence at the path.
    Run(usize, usize),
}

/// A standalone-renderable subtree of a formula.
#[derive(Debug, Clone, PartialEq)]
pub struct SubFormula {
    pub node_path: Vec<PathStep>,
    pub latex: String,
    pub char_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CropMode {
    NoCrop,
    FullRandomCrop,
    FullSubFormulaCrop,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePlan {
    pub mode: CropMode,
    pub n: usize,
    pub coverage_theta: f64,
    pub lambda_percent: f64,
    pub rng_seed: u64,
}

impl SamplePlan {
    pub fn new(mode: CropMode, rng_seed: u64) -> SamplePlan {
        SamplePlan {
            mode,
            n: DEFAULT_PART_COUNT,
            coverage_theta: DEFAULT_COVERAGE_THETA,
            lambda_percent: match mode {
                CropMode::FullRandomCrop => 1.0,
                CropMode::FullSubFormulaCrop | CropMode::NoCrop => 0.0,
                CropMode::Hybrid => DEFAULT_LAMBDA,
            },
            rng_seed,
        }
    }

    /// Hybrid at the lambda boundaries degenerates into the pure modes.
    pub fn effective_mode(&self) -> CropMode {
        match self.mode {
            CropMode::Hybrid if self.lambda_percent <= 0.0 => CropMode::FullSubFormulaCrop,
            CropMode::Hybrid if self.lambda_percent >= 1.0 => CropMode::FullRandomCrop,
            m => m,
        }
    }

    pub fn validate(&self) -> Result<(), SubformulaError> {
        if self.n == 0 {
            return Err(SubformulaError::InvalidPlan("n must be positive".into()));
        }
        if !(self.coverage_theta > 0.0 && self.coverage_theta <= 1.0) {
            return Err(SubformulaError::InvalidPlan("theta must be in (0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_percent) {
            return Err(SubformulaError::InvalidPlan("lambda must be in [0,1]".into()));
        }
        match self.mode {
            CropMode::FullRandomCrop if self.lambda_percent != 1.0 => Err(
                SubformulaError::InvalidPlan("full-random-crop implies lambda=1".into()),
            ),
            CropMode::FullSubFormulaCrop if self.lambda_percent != 0.0 => Err(
                SubformulaError::InvalidPlan("full-sub-formula-crop implies lambda=0".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// Balanced contiguous token window of the source formula.
#[derive(Debug, Clone, PartialEq)]
pub struct CropSpec {
    pub token_start: usize,
    pub token_end: usize,
    pub fraction_of_tokens: f64,
    /// Rendered LaTeX of the window.
    pub latex: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartKind {
    SubFormulaCrop,
    RandomCrop,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InstancePart {
    Sub(SubFormula),
    Crop(CropSpec),
}

impl InstancePart {
    pub fn latex(&self) -> &str {
        match self {
            InstancePart::Sub(s) => &s.latex,
            InstancePart::Crop(c) => &c.latex,
        }
    }

    /// Sub-formula parts carry their own label; random crops do not.
    pub fn labels_available(&self) -> bool {
        matches!(self, InstancePart::Sub(_))
    }
}

#[derive(Debug, Clone)]
pub struct TrainingInstance {
    pub main: FormulaAst,
    pub parts: Vec<InstancePart>,
    pub part_kind: Option<PartKind>,
    /// Set when the coverage constraint was infeasible and the whole formula
    /// was used as the single sub-formula.
    pub coverage_fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryRole {
    Main,
    Sub,
    Crop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub latex: String,
    pub role: EntryRole,
    pub height: u32,
    pub width: u32,
}

/// One line of the JSONL manifest handed to an external renderer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderManifest {
    pub instance_id: String,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SubformulaError {
    #[error("invalid sample plan: {0}")]
    InvalidPlan(String),
    #[error("formula too short to crop")]
    TooShort,
}

/// Result of coverage sampling; `fallback` marks the infeasible case where
/// the whole formula stands in for a sub-formula set.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub subs: Vec<SubFormula>,
    pub fallback: bool,
}

// ---------------------------------------------------------------------------
// Enumeration
// ---------------------------------------------------------------------------

fn standalone(children: Vec<AstNode>) -> AstNode {
    AstNode::Sequence(children)
}

fn node_standalone(node: &AstNode) -> AstNode {
    match node {
        AstNode::Sequence(cs) => AstNode::Sequence(cs.clone()),
        AstNode::Group(cs) => AstNode::Sequence(cs.clone()),
        other => AstNode::Sequence(vec![other.clone()]),
    }
}

fn push_candidate(out: &mut Vec<SubFormula>, path: Vec<PathStep>, root: AstNode) {
    let latex = ast::serialize_node(&root);
    if latex.is_empty() {
        return;
    }
    let chars = ast::char_count(&root);
    out.push(SubFormula { node_path: path, latex, char_count: chars });
}

/// All candidate sub-formulas: groups, fraction arguments, radicands, script
/// bases, environment cells and rows, and operator-delimited runs of the
/// root sequence.
pub fn enumerate_subformulas(ast: &FormulaAst, min_chars: usize) -> Vec<SubFormula> {
    let mut out = Vec::new();
    walk(&ast.root, &mut Vec::new(), &mut out);
    if let AstNode::Sequence(children) = &ast.root {
        root_runs(children, &mut out);
    }
    out.retain(|s| s.char_count >= min_chars.max(1));
    out
}

fn walk(node: &AstNode, path: &mut Vec<PathStep>, out: &mut Vec<SubFormula>) {
    match node {
        AstNode::Group(cs) => {
            push_candidate(out, path.clone(), standalone(cs.clone()));
        }
        AstNode::Frac { numerator, denominator, .. } => {
            let mut p = path.clone();
            p.push(PathStep::Child(0));
            push_candidate(out, p, node_standalone(numerator));
            let mut p = path.clone();
            p.push(PathStep::Child(1));
            push_candidate(out, p, node_standalone(denominator));
        }
        AstNode::Radical { degree, radicand } => {
            let idx = usize::from(degree.is_some());
            let mut p = path.clone();
            p.push(PathStep::Child(idx));
            push_candidate(out, p, node_standalone(radicand));
        }
        AstNode::Script { base, .. } => {
            let mut p = path.clone();
            p.push(PathStep::Child(0));
            push_candidate(out, p, node_standalone(base));
        }
        AstNode::Environment { rows, .. } => {
            let mut cell_idx = 0;
            for (ri, row) in rows.iter().enumerate() {
                let mut row_children = Vec::new();
                for cell in row {
                    let mut p = path.clone();
                    p.push(PathStep::Child(cell_idx));
                    push_candidate(out, p, node_standalone(cell));
                    cell_idx += 1;
                    if let AstNode::Sequence(cs) = cell {
                        row_children.extend(cs.iter().cloned());
                    }
                }
                let mut p = path.clone();
                p.push(PathStep::EnvRow(ri));
                push_candidate(out, p, standalone(row_children));
            }
        }
        _ => {}
    }
    for (i, child) in node.children().into_iter().enumerate() {
        path.push(PathStep::Child(i));
        walk(child, path, out);
        path.pop();
    }
}

/// Maximal runs of the root sequence between operator atoms and row breaks.
fn root_runs(children: &[AstNode], out: &mut Vec<SubFormula>) {
    let mut start = 0;
    let mut runs = Vec::new();
    for (i, c) in children.iter().enumerate() {
        if c.is_operator_atom() || matches!(c, AstNode::RowBreak) {
            if i > start {
                runs.push((start, i));
            }
            start = i + 1;
        }
    }
    if start < children.len() {
        runs.push((start, children.len()));
    }
    for (s, e) in runs {
        if s == 0 && e == children.len() {
            continue; // the whole formula is not its own sub-formula
        }
        push_candidate(
            out,
            vec![PathStep::Run(s, e)],
            standalone(children[s..e].to_vec()),
        );
    }
}

// ---------------------------------------------------------------------------
// Coverage sampling
// ---------------------------------------------------------------------------

fn whole_formula_sub(ast: &FormulaAst) -> SubFormula {
    SubFormula {
        node_path: Vec::new(),
        latex: ast.serialize(),
        char_count: ast.char_count,
    }
}

/// Pick at most `n` sub-formulas whose character counts sum to at least
/// `theta * c`. Random restarts with greedy largest-first completion; falls
/// back to the whole formula (flagged) when no subset of size <= n reaches
/// the target.
pub fn sample_subformulas(
    ast: &FormulaAst,
    n: usize,
    theta: f64,
    rng_seed: u64,
) -> SampleOutcome {
    let target = theta * ast.char_count as f64 - 1e-9;
    let mut candidates = enumerate_subformulas(ast, 1);
    // Largest-first order, ties broken by discovery order (stable sort).
    candidates.sort_by(|a, b| b.char_count.cmp(&a.char_count));

    let top_n_sum: usize = candidates.iter().take(n).map(|s| s.char_count).sum();
    if candidates.is_empty() || (top_n_sum as f64) < target {
        return SampleOutcome { subs: vec![whole_formula_sub(ast)], fallback: true };
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for _ in 0..32 {
        let first = rng.gen_range(0..candidates.len());
        let mut picked = vec![first];
        let mut sum = candidates[first].char_count;
        for (i, c) in candidates.iter().enumerate() {
            if sum as f64 >= target || picked.len() == n {
                break;
            }
            if i != first {
                picked.push(i);
                sum += c.char_count;
            }
        }
        if sum as f64 >= target {
            let mut subs: Vec<SubFormula> = Vec::new();
            let mut stop = 0;
            let mut acc = 0.0;
            for &i in &picked {
                acc += candidates[i].char_count as f64;
                stop += 1;
                if acc >= target {
                    break;
                }
            }
            for &i in &picked[..stop] {
                subs.push(candidates[i].clone());
            }
            return SampleOutcome { subs, fallback: false };
        }
    }
    // Deterministic completion: the n largest candidates are known feasible.
    let subs = candidates.into_iter().take(n).collect();
    SampleOutcome { subs, fallback: false }
}

// ---------------------------------------------------------------------------
// Random cropping
// ---------------------------------------------------------------------------

/// Join token texts back into renderable LaTeX, spacing commands apart from
/// following letters.
pub fn join_tokens(tokens: &[Token]) -> String {
    let mut out = String::new();
    let mut prev_cmd = false;
    for t in tokens {
        if prev_cmd && t.text.starts_with(|c: char| c.is_ascii_alphabetic()) {
            out.push(' ');
        }
        out.push_str(&t.text);
        prev_cmd = t.kind == TokenKind::Command
            && t.text.chars().skip(1).all(|c| c.is_ascii_alphabetic());
    }
    out
}

/// Match open/close braces and environment begin/end pairs. Returns, for each
/// token index, the index of its partner (if it is a bracket-like token).
fn match_brackets(tokens: &[Token]) -> Vec<Option<usize>> {
    let mut partner = vec![None; tokens.len()];
    let mut brace_stack = Vec::new();
    let mut env_stack = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        match t.kind {
            TokenKind::OpenGroup => brace_stack.push(i),
            TokenKind::CloseGroup => {
                if let Some(j) = brace_stack.pop() {
                    partner[i] = Some(j);
                    partner[j] = Some(i);
                }
            }
            TokenKind::EnvBegin => env_stack.push(i),
            TokenKind::EnvEnd => {
                if let Some(j) = env_stack.pop() {
                    partner[i] = Some(j);
                    partner[j] = Some(i);
                }
            }
            _ => {}
        }
    }
    partner
}

/// A balanced contiguous token window covering a random 50-90% of the
/// formula's tokens, expanded minimally so braces and environments pair up,
/// then trimmed of dangling leading/trailing operators and script marks.
pub fn random_crop(ast: &FormulaAst, rng_seed: u64) -> Result<CropSpec, SubformulaError> {
    let tokens = lexer::tokenize_significant(&ast.source)
        .expect("FormulaAst source always re-tokenizes");
    let total = tokens.len();
    if total < 2 {
        return Err(SubformulaError::TooShort);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let fraction: f64 = rng.gen_range(0.5..=0.9);
    let len = ((fraction * total as f64).round() as usize).clamp(1, total);
    let start = rng.gen_range(0..=total - len);
    let (mut s, mut e) = (start, start + len);

    let partner = match_brackets(&tokens);
    loop {
        let mut changed = false;
        for i in s..e {
            if let Some(j) = partner[i] {
                if j < s {
                    s = j;
                    changed = true;
                } else if j >= e {
                    e = j + 1;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    // Trim dangling operators and bare script markers at the edges.
    let droppable = |t: &Token| {
        matches!(
            t.kind,
            TokenKind::OperatorSymbol
                | TokenKind::Superscript
                | TokenKind::Subscript
                | TokenKind::Ampersand
                | TokenKind::RowBreak
        )
    };
    while e - s > 1 && droppable(&tokens[e - 1]) {
        e -= 1;
    }
    while e - s > 1 && droppable(&tokens[s]) {
        s += 1;
    }

    let latex = join_tokens(&tokens[s..e]);
    Ok(CropSpec {
        token_start: s,
        token_end: e,
        fraction_of_tokens: (e - s) as f64 / total as f64,
        latex,
    })
}

// ---------------------------------------------------------------------------
// Training instances and manifests
// ---------------------------------------------------------------------------

fn derive_seed(base: u64, salt: u64) -> u64 {
    // splitmix64 step over base xor salt
    let mut z = base ^ salt.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn sub_parts(ast: &FormulaAst, plan: &SamplePlan) -> (Vec<InstancePart>, bool) {
    let outcome = sample_subformulas(ast, plan.n, plan.coverage_theta, plan.rng_seed);
    (outcome.subs.into_iter().map(InstancePart::Sub).collect(), outcome.fallback)
}

fn crop_parts(ast: &FormulaAst, plan: &SamplePlan) -> Vec<InstancePart> {
    let mut parts = Vec::new();
    for i in 0..plan.n {
        match random_crop(ast, derive_seed(plan.rng_seed, i as u64 + 1)) {
            Ok(c) => parts.push(InstancePart::Crop(c)),
            Err(SubformulaError::TooShort) => {
                // Whole formula as an unlabeled crop.
                parts.push(InstancePart::Crop(CropSpec {
                    token_start: 0,
                    token_end: 0,
                    fraction_of_tokens: 1.0,
                    latex: ast.serialize(),
                }));
            }
            Err(_) => unreachable!(),
        }
    }
    parts
}

/// Assemble a training instance per the plan's cropping mode.
pub fn make_training_instance(
    ast: &FormulaAst,
    plan: &SamplePlan,
) -> Result<TrainingInstance, SubformulaError> {
    plan.validate()?;
    let mode = plan.effective_mode();
    let (parts, part_kind, fallback) = match mode {
        CropMode::NoCrop => (Vec::new(), None, false),
        CropMode::FullSubFormulaCrop => {
            let (parts, fb) = sub_parts(ast, plan);
            (parts, Some(PartKind::SubFormulaCrop), fb)
        }
        CropMode::FullRandomCrop => (crop_parts(ast, plan), Some(PartKind::RandomCrop), false),
        CropMode::Hybrid => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.rng_seed, 0));
            if rng.gen_bool(plan.lambda_percent) {
                (crop_parts(ast, plan), Some(PartKind::RandomCrop), false)
            } else {
                let (parts, fb) = sub_parts(ast, plan);
                (parts, Some(PartKind::SubFormulaCrop), fb)
            }
        }
    };
    Ok(TrainingInstance {
        main: ast.clone(),
        parts,
        part_kind,
        coverage_fallback: fallback,
    })
}

/// One render entry for the main formula plus one per part.
pub fn emit_render_manifest(instance: &TrainingInstance, instance_id: &str) -> RenderManifest {
    emit_render_manifest_sized(instance, instance_id, DEFAULT_TARGET_SIZE, DEFAULT_TARGET_SIZE)
}

pub fn emit_render_manifest_sized(
    instance: &TrainingInstance,
    instance_id: &str,
    height: u32,
    width: u32,
) -> RenderManifest {
    let mut entries = vec![ManifestEntry {
        latex: instance.main.serialize(),
        role: EntryRole::Main,
        height,
        width,
    }];
    for part in &instance.parts {
        entries.push(ManifestEntry {
            latex: part.latex().to_string(),
            role: if part.labels_available() { EntryRole::Sub } else { EntryRole::Crop },
            height,
            width,
        });
    }
    RenderManifest { instance_id: instance_id.to_string(), entries }
}
