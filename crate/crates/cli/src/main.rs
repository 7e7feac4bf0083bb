//! Command-line front end for the formula toolkit.
//!
//! Exit codes: 0 success, 2 parse error, 3 corpus/schema error,
//! 4 infeasible spec, 5 numeric failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use formula_core::ast::{self, AstNode, FormulaAst};
use formula_core::corpus::{
    load_corpus, save_corpus, stat_table, synth_formula, CorpusRecord, DisplayMode, Domain,
    SynthSpec,
};
use formula_core::eval::{evaluate_corpus, report_to_json, EquivalenceRuleSet, EvalSample};
use formula_core::fusion::{curves_to_csv, toy_train, FusionConfig};
use formula_core::subformula::{
    emit_render_manifest, make_training_instance, CropMode as CoreCropMode, SamplePlan,
};
use serde_json::json;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_PARSE: u8 = 2;
const EXIT_CORPUS: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;
const EXIT_NUMERIC: u8 = 5;

/// Fixed default seed so every pipeline is reproducible without flags.
const DEFAULT_SEED: u64 = 17;

#[derive(Parser)]
#[command(name = "formula", version, about = "LaTeX math formula toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a formula and report level, character and line counts.
    Parse(ParseArgs),
    /// Bin a corpus into the level-group x line-bin x domain table.
    Stats(StatsArgs),
    /// Emit render manifests of sub-formula/crop training instances.
    Decompose(DecomposeArgs),
    /// Score predictions against labels, raw and equivalence-normalized.
    Eval(EvalArgs),
    /// Synthesize a corpus with exact level and line counts.
    Synth(SynthArgs),
    /// Train the toy fusion model and write its loss curve.
    ToyTrain(ToyTrainArgs),
}

#[derive(Args)]
struct ParseArgs {
    /// Read the formula from a file.
    #[arg(long, conflicts_with = "expr")]
    input: Option<PathBuf>,
    /// Formula given inline.
    #[arg(long)]
    expr: Option<String>,
    /// Emit JSON instead of a human-readable tree.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct StatsArgs {
    /// JSONL corpus file.
    #[arg(long)]
    corpus: PathBuf,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Skip malformed lines with warnings instead of failing.
    #[arg(long)]
    lenient: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum CropModeArg {
    NoCrop,
    FullRandomCrop,
    FullSubFormulaCrop,
    Hybrid,
}

impl From<CropModeArg> for CoreCropMode {
    fn from(m: CropModeArg) -> CoreCropMode {
        match m {
            CropModeArg::NoCrop => CoreCropMode::NoCrop,
            CropModeArg::FullRandomCrop => CoreCropMode::FullRandomCrop,
            CropModeArg::FullSubFormulaCrop => CoreCropMode::FullSubFormulaCrop,
            CropModeArg::Hybrid => CoreCropMode::Hybrid,
        }
    }
}

#[derive(Args)]
struct DecomposeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "hybrid")]
    mode: CropModeArg,
    /// Maximum sub-formulas per instance.
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Coverage fraction the sampled sub-formulas must reach.
    #[arg(long, default_value_t = 0.7)]
    theta: f64,
    /// Probability of random crops in hybrid mode.
    #[arg(long, default_value_t = 0.3)]
    lambda: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Write JSONL manifests here instead of standard output.
    #[arg(long)]
    manifests: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalModeArg {
    Fair,
    Nonfair,
    Both,
}

#[derive(Args)]
struct EvalArgs {
    /// JSONL file of {id, prediction, labels} samples.
    #[arg(long)]
    pred: PathBuf,
    /// JSON rewrite-rule file.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    mode: EvalModeArg,
    /// Write the report here instead of standard output.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Target hierarchical level of every record.
    #[arg(long, default_value_t = 2)]
    level: u32,
    /// Target line count of every record.
    #[arg(long, default_value_t = 1)]
    lines: usize,
    /// Character budget per formula.
    #[arg(long, default_value_t = 60)]
    max_chars: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Write the corpus here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ToyTrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "no-crop")]
    mode: CropModeArg,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    /// Weight of the main loss and main feature in the fusion.
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    /// Maximum sub-formulas per instance.
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Write the loss-curve CSV here instead of standard output.
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Base path for the parameter checkpoint (.bin data, .json shapes).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Parse(a) => cmd_parse(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::ToyTrain(a) => cmd_toy_train(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

type CmdResult = Result<(), (u8, String)>;

fn write_output(path: Option<&Path>, content: &str) -> CmdResult {
    match path {
        Some(p) => fs::write(p, content).map_err(|e| (EXIT_CORPUS, format!("{}: {e}", p.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// parse
// ---------------------------------------------------------------------------

fn ast_json(node: &AstNode) -> serde_json::Value {
    match node {
        AstNode::Atom(text) => json!({"kind": "atom", "text": text}),
        AstNode::Sequence(children) => {
            json!({"kind": "sequence", "children": children.iter().map(ast_json).collect::<Vec<_>>()})
        }
        AstNode::Group(children) => {
            json!({"kind": "group", "children": children.iter().map(ast_json).collect::<Vec<_>>()})
        }
        AstNode::Script { base, sub, sup } => json!({
            "kind": "script",
            "base": ast_json(base),
            "sub": sub.as_deref().map(ast_json),
            "sup": sup.as_deref().map(ast_json),
        }),
        AstNode::Frac { numerator, denominator, style } => json!({
            "kind": "frac",
            "style": format!("{style:?}").to_lowercase(),
            "numerator": ast_json(numerator),
            "denominator": ast_json(denominator),
        }),
        AstNode::Radical { degree, radicand } => json!({
            "kind": "radical",
            "degree": degree.as_deref().map(ast_json),
            "radicand": ast_json(radicand),
        }),
        AstNode::GenericCommand { name, args } => json!({
            "kind": "command",
            "name": name,
            "args": args.iter().map(ast_json).collect::<Vec<_>>(),
        }),
        AstNode::Environment { name, rows } => json!({
            "kind": "environment",
            "name": name,
            "rows": rows
                .iter()
                .map(|r| r.iter().map(ast_json).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        }),
        AstNode::RowBreak => json!({"kind": "row-break"}),
    }
}

fn print_tree(node: &AstNode, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    match node {
        AstNode::Atom(text) => out.push_str(&format!("{pad}atom {text:?}\n")),
        AstNode::Sequence(children) => {
            out.push_str(&format!("{pad}sequence\n"));
            for c in children {
                print_tree(c, indent + 1, out);
            }
        }
        AstNode::Group(children) => {
            out.push_str(&format!("{pad}group\n"));
            for c in children {
                print_tree(c, indent + 1, out);
            }
        }
        AstNode::Script { base, sub, sup } => {
            out.push_str(&format!("{pad}script\n"));
            print_tree(base, indent + 1, out);
            if let Some(s) = sub {
                out.push_str(&format!("{pad}  sub:\n"));
                print_tree(s, indent + 2, out);
            }
            if let Some(s) = sup {
                out.push_str(&format!("{pad}  sup:\n"));
                print_tree(s, indent + 2, out);
            }
        }
        AstNode::Frac { numerator, denominator, .. } => {
            out.push_str(&format!("{pad}frac\n"));
            print_tree(numerator, indent + 1, out);
            print_tree(denominator, indent + 1, out);
        }
        AstNode::Radical { degree, radicand } => {
            out.push_str(&format!("{pad}radical\n"));
            if let Some(d) = degree {
                print_tree(d, indent + 1, out);
            }
            print_tree(radicand, indent + 1, out);
        }
        AstNode::GenericCommand { name, args } => {
            out.push_str(&format!("{pad}command \\{name}\n"));
            for a in args {
                print_tree(a, indent + 1, out);
            }
        }
        AstNode::Environment { name, rows } => {
            out.push_str(&format!("{pad}environment {name}\n"));
            for row in rows {
                out.push_str(&format!("{pad}  row:\n"));
                for cell in row {
                    print_tree(cell, indent + 2, out);
                }
            }
        }
        AstNode::RowBreak => out.push_str(&format!("{pad}row-break\n")),
    }
}

fn cmd_parse(args: ParseArgs) -> CmdResult {
    let source = match (&args.input, &args.expr) {
        (Some(path), None) => fs::read_to_string(path)
            .map_err(|e| (EXIT_CORPUS, format!("{}: {e}", path.display())))?
            .trim_end_matches('\n')
            .to_string(),
        (None, Some(expr)) => expr.clone(),
        _ => return Err((EXIT_CORPUS, "exactly one of --input or --expr required".into())),
    };
    let ast: FormulaAst =
        ast::parse_formula(&source).map_err(|e| (EXIT_PARSE, format!("parse error: {e}")))?;
    if args.json {
        let doc = json!({
            "level": ast.level,
            "char_count": ast.char_count,
            "line_count": ast.line_count,
            "ast": ast_json(&ast.root),
        });
        println!("{}", serde_json::to_string_pretty(&doc).unwrap());
    } else {
        println!(
            "level {}  chars {}  lines {}",
            ast.level, ast.char_count, ast.line_count
        );
        let mut tree = String::new();
        print_tree(&ast.root, 0, &mut tree);
        print!("{tree}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// corpus loading shared by stats/decompose/toy-train
// ---------------------------------------------------------------------------

fn load_records(path: &Path, lenient: bool) -> Result<Vec<CorpusRecord>, (u8, String)> {
    let loaded =
        load_corpus(path).map_err(|e| (EXIT_CORPUS, format!("{}: {e}", path.display())))?;
    if !loaded.diagnostics.is_empty() {
        if lenient {
            for d in &loaded.diagnostics {
                eprintln!("warning: line {}: {}", d.line, d.message);
            }
        } else {
            let first = &loaded.diagnostics[0];
            return Err((
                EXIT_CORPUS,
                format!(
                    "{} malformed line(s); first at line {}: {}",
                    loaded.diagnostics.len(),
                    first.line,
                    first.message
                ),
            ));
        }
    }
    if loaded.records.is_empty() {
        return Err((EXIT_CORPUS, "corpus contains no usable records".into()));
    }
    Ok(loaded.records)
}

fn cmd_stats(args: StatsArgs) -> CmdResult {
    let records = load_records(&args.corpus, args.lenient)?;
    let table = stat_table(&records);
    for entry in &table.overflow {
        eprintln!("warning: outside table bins: {entry}");
    }
    write_output(args.csv.as_deref(), &table.to_csv())
}

// ---------------------------------------------------------------------------
// decompose
// ---------------------------------------------------------------------------

fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn cmd_decompose(args: DecomposeArgs) -> CmdResult {
    eprintln!("seed: {}", args.seed);
    let records = load_records(&args.corpus, false)?;
    let base_plan = SamplePlan {
        mode: args.mode.into(),
        n: args.n,
        coverage_theta: args.theta,
        lambda_percent: args.lambda,
        rng_seed: args.seed,
    };
    base_plan
        .validate()
        .map_err(|e| (EXIT_INFEASIBLE, format!("invalid plan: {e}")))?;
    let mut lines = String::new();
    for (i, record) in records.iter().enumerate() {
        let ast = ast::parse_formula(&record.latex)
            .map_err(|e| (EXIT_CORPUS, format!("record {}: {e}", record.id)))?;
        let mut plan = base_plan;
        plan.rng_seed = derive_seed(args.seed, i as u64);
        let instance = make_training_instance(&ast, &plan)
            .map_err(|e| (EXIT_INFEASIBLE, format!("record {}: {e}", record.id)))?;
        let manifest = emit_render_manifest(&instance, &record.id);
        lines.push_str(&serde_json::to_string(&manifest).unwrap());
        lines.push('\n');
    }
    write_output(args.manifests.as_deref(), &lines)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let text = fs::read_to_string(&args.pred)
        .map_err(|e| (EXIT_CORPUS, format!("{}: {e}", args.pred.display())))?;
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: EvalSample = serde_json::from_str(line)
            .map_err(|e| (EXIT_CORPUS, format!("line {}: {e}", lineno + 1)))?;
        samples.push(sample);
    }
    let rules = match &args.rules {
        Some(path) => {
            let body = fs::read_to_string(path)
                .map_err(|e| (EXIT_CORPUS, format!("{}: {e}", path.display())))?;
            EquivalenceRuleSet::from_json(&body)
                .map_err(|e| (EXIT_CORPUS, format!("{}: {e}", path.display())))?
        }
        None => EquivalenceRuleSet::builtins(),
    };
    let report = evaluate_corpus(&samples, &rules)
        .map_err(|e| (EXIT_CORPUS, format!("evaluation failed: {e}")))?;
    let mut doc: serde_json::Value = serde_json::from_str(&report_to_json(&report)).unwrap();
    match args.mode {
        EvalModeArg::Both => {}
        EvalModeArg::Fair => strip_block(&mut doc, "nonfair"),
        EvalModeArg::Nonfair => strip_block(&mut doc, "fair"),
    }
    write_output(
        args.report.as_deref(),
        &(serde_json::to_string_pretty(&doc).unwrap() + "\n"),
    )
}

fn strip_block(doc: &mut serde_json::Value, which: &str) {
    let obj = doc.as_object_mut().unwrap();
    obj.remove(&format!("aggregate_{which}"));
    if let Some(samples) = obj.get_mut("per_sample").and_then(|v| v.as_array_mut()) {
        for s in samples {
            s.as_object_mut().unwrap().remove(which);
        }
    }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn cmd_synth(args: SynthArgs) -> CmdResult {
    eprintln!("seed: {}", args.seed);
    let mut records = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let spec = SynthSpec {
            target_level: args.level,
            target_lines: args.lines,
            max_chars: args.max_chars,
            rng_seed: derive_seed(args.seed, i as u64),
        };
        let latex =
            synth_formula(&spec).map_err(|e| (EXIT_INFEASIBLE, format!("record {i}: {e}")))?;
        records.push(CorpusRecord {
            id: format!("synth-{i:06}"),
            domain: Domain::ALL[i % Domain::ALL.len()],
            latex: latex.clone(),
            labels: vec![latex],
            display_mode: if args.lines > 1 { DisplayMode::Display } else { DisplayMode::Inline },
        });
    }
    write_output(args.out.as_deref(), &save_corpus(&records))
}

// ---------------------------------------------------------------------------
// toy-train
// ---------------------------------------------------------------------------

fn cmd_toy_train(args: ToyTrainArgs) -> CmdResult {
    eprintln!("seed: {}", args.seed);
    let records = load_records(&args.corpus, false)?;
    let mode: CoreCropMode = args.mode.into();
    let mut plan = SamplePlan::new(mode, args.seed);
    plan.n = args.n;
    plan.validate()
        .map_err(|e| (EXIT_INFEASIBLE, format!("invalid plan: {e}")))?;
    let config = FusionConfig { alpha: args.alpha, n: args.n, dim: 16 };
    if !(0.0..=1.0).contains(&args.alpha) {
        return Err((EXIT_INFEASIBLE, format!("alpha {} outside [0, 1]", args.alpha)));
    }
    let outcome = toy_train(&records, &plan, &config, args.epochs, args.lr).map_err(|e| {
        let code = match e {
            formula_core::fusion::FusionError::NonFiniteLoss(_) => EXIT_NUMERIC,
            _ => EXIT_CORPUS,
        };
        (code, format!("training failed: {e}"))
    })?;
    let mode_name = serde_json::to_value(mode).unwrap().as_str().unwrap().to_string();
    let csv = curves_to_csv(&[(mode_name, outcome.curve.clone())]);
    if let Some(base) = &args.checkpoint {
        let bin = base.with_extension("bin");
        let sidecar = base.with_extension("json");
        fs::write(&bin, outcome.params.to_bytes())
            .map_err(|e| (EXIT_CORPUS, format!("{}: {e}", bin.display())))?;
        fs::write(&sidecar, outcome.params.shape_sidecar())
            .map_err(|e| (EXIT_CORPUS, format!("{}: {e}", sidecar.display())))?;
    }
    write_output(args.curve.as_deref(), &csv)
}
