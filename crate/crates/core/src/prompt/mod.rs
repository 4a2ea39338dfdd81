//! Prompt assembly. Every builder is a pure function of its inputs and
//! returns a [`PromptBundle`] carrying the rendered text and enough
//! provenance to rebuild it.

mod instructions;

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::sha256_hex;
use crate::retrieval::{
    cosine, top_k_demands, EmbedError, Embedder, ReasoningEntry, ReasoningLibrary, StoreError,
    TagIndex, DEFAULT_K, DEFAULT_N,
};
use crate::sell::{self, SellExpr};

pub use instructions::{InstructionSet, Language, TemplateError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Predict,
    MultiTaskAnswer,
    MultiTaskReasoning,
    /// Instruction plus demand only, without demonstrations or tags.
    Normal,
    ReasoningCompletion,
    DemandGeneration,
    Judge,
}

impl PromptKind {
    fn retrieves(self) -> bool {
        matches!(
            self,
            PromptKind::Predict | PromptKind::MultiTaskAnswer | PromptKind::MultiTaskReasoning
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Demonstration {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub demand: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    /// The reference answer.
    pub sell: String,
    /// Judge rubric only: the answer being graded and its grade.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Demonstration {
    pub fn from_entry(entry: &ReasoningEntry) -> Self {
        Demonstration {
            id: Some(entry.id.clone()),
            demand: entry.demand.clone(),
            tags: entry.tags.clone(),
            reasoning: Some(entry.reasoning.clone()),
            sell: entry.sell.clone(),
            ..Demonstration::default()
        }
    }

    pub fn rubric(demand: &str, prediction: &str, reference: &str, grade: u8) -> Self {
        Demonstration {
            demand: demand.to_string(),
            sell: reference.to_string(),
            prediction: Some(prediction.to_string()),
            grade: Some(grade),
            ..Demonstration::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Target {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sell: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DemoSelection {
    /// Top-k library entries by demand similarity.
    #[default]
    Analogical,
    /// The same entries for every demand; empty `ids` means the first k in
    /// library order.
    Fixed {
        #[serde(default)]
        ids: Vec<String>,
    },
    /// k entries sampled per demand from a stream keyed by seed and demand.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    pub k: usize,
    pub n: usize,
    #[serde(default)]
    pub selection: DemoSelection,
    /// `false` drops the reasoning block from every demonstration.
    #[serde(default = "yes")]
    pub include_reasoning: bool,
    /// Character budget for the rendered prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_chars: Option<usize>,
}

fn yes() -> bool {
    true
}

impl Default for PromptOptions {
    fn default() -> Self {
        PromptOptions {
            k: DEFAULT_K,
            n: DEFAULT_N,
            selection: DemoSelection::Analogical,
            include_reasoning: true,
            max_chars: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub language: Language,
    pub instructions_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<PromptOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder_version: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub demonstrations: Vec<Retrieved>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<Retrieved>,
    /// Demonstrations removed to fit `max_chars`, in drop order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<Retrieved>,
    pub rendered_chars: usize,
    /// Still longer than `max_chars` after every demonstration was dropped.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub over_budget: bool,
    pub rendered_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub kind: PromptKind,
    pub instruction: String,
    pub demonstrations: Vec<Demonstration>,
    pub target: Target,
    pub rendered: String,
    pub provenance: Provenance,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("no library entry with id `{0}`")]
    UnknownEntry(String),
    #[error("library is empty")]
    EmptyLibrary,
    #[error("tag list size n must be at least 1")]
    ZeroTags,
    #[error("cannot rebuild: {0}")]
    Rebuild(String),
}

/// Shared read-only inputs of the retrieval-backed builders.
#[derive(Clone, Copy)]
pub struct PromptContext<'a> {
    pub library: &'a ReasoningLibrary,
    pub tags: &'a TagIndex,
    pub embedder: &'a dyn Embedder,
    pub instructions: &'a InstructionSet,
}

fn tag_line(tags: &[String]) -> String {
    tags.join(" / ")
}

fn push_field(out: &mut String, label: &str, value: &str) {
    let _ = writeln!(out, "{label}: {value}");
}

/// Renders a bundle from its parts. The layout is fixed per kind; the
/// target block is the same for every retrieval-backed kind.
pub fn render(
    kind: PromptKind,
    instruction: &str,
    demos: &[Demonstration],
    target: &Target,
) -> String {
    let mut out = String::new();
    out.push_str(instruction);
    out.push('\n');
    for (i, d) in demos.iter().enumerate() {
        let _ = writeln!(out, "\nExample {}", i + 1);
        match kind {
            PromptKind::Predict
            | PromptKind::MultiTaskAnswer
            | PromptKind::MultiTaskReasoning
            | PromptKind::Normal => {
                push_field(&mut out, "Demand", &d.demand);
                push_field(&mut out, "Tags", &tag_line(&d.tags));
                if let Some(r) = &d.reasoning {
                    let _ = writeln!(out, "Reasoning:\n{r}");
                }
                push_field(&mut out, "Answer", &d.sell);
            }
            PromptKind::ReasoningCompletion => {
                push_field(&mut out, "Demand", &d.demand);
                push_field(&mut out, "Answer", &d.sell);
                let _ = writeln!(out, "Reasoning:\n{}", d.reasoning.as_deref().unwrap_or(""));
            }
            PromptKind::DemandGeneration => {
                push_field(&mut out, "Answer", &d.sell);
                push_field(&mut out, "Demand", &d.demand);
            }
            PromptKind::Judge => {
                push_field(&mut out, "Demand", &d.demand);
                push_field(
                    &mut out,
                    "Prediction",
                    d.prediction.as_deref().unwrap_or(""),
                );
                push_field(&mut out, "Reference", &d.sell);
                push_field(
                    &mut out,
                    "Score",
                    &d.grade.map(|g| g.to_string()).unwrap_or_default(),
                );
            }
        }
    }
    let demand = target.demand.as_deref().unwrap_or("");
    let sell = target.sell.as_deref().unwrap_or("");
    match kind {
        PromptKind::Normal => {
            let _ = write!(out, "\nDemand: {demand}");
        }
        PromptKind::Predict | PromptKind::MultiTaskAnswer | PromptKind::MultiTaskReasoning => {
            let _ = write!(
                out,
                "\nTarget\nDemand: {demand}\nTags: {}",
                tag_line(&target.tags)
            );
        }
        PromptKind::ReasoningCompletion => {
            let _ = write!(
                out,
                "\nTarget\nDemand: {demand}\nAnswer: {sell}\nReasoning:"
            );
        }
        PromptKind::DemandGeneration => {
            let _ = write!(out, "\nTarget\nAnswer: {sell}\nDemand:");
        }
        PromptKind::Judge => {
            let _ = write!(
                out,
                "\nTarget\nDemand: {demand}\nPrediction: {}\nReference: {sell}\nScore:",
                target.prediction.as_deref().unwrap_or("")
            );
        }
    }
    out
}

impl PromptBundle {
    fn assemble(
        kind: PromptKind,
        instruction: String,
        demonstrations: Vec<Demonstration>,
        target: Target,
        mut provenance: Provenance,
    ) -> Self {
        let rendered = render(kind, &instruction, &demonstrations, &target);
        provenance.rendered_chars = rendered.chars().count();
        provenance.rendered_sha256 = sha256_hex(rendered.as_bytes());
        PromptBundle {
            kind,
            instruction,
            demonstrations,
            target,
            rendered,
            provenance,
        }
    }

    /// Whether `rendered` still matches the structured fields.
    pub fn is_consistent(&self) -> bool {
        render(
            self.kind,
            &self.instruction,
            &self.demonstrations,
            &self.target,
        ) == self.rendered
    }

    /// Re-runs the builder recorded in the provenance. Retrieval-backed kinds
    /// repeat retrieval against `ctx`; the others re-render their fields.
    pub fn rebuild(&self, ctx: &PromptContext<'_>) -> Result<PromptBundle, PromptError> {
        if ctx.instructions.digest() != self.provenance.instructions_sha256 {
            return Err(PromptError::Rebuild("instruction templates differ".into()));
        }
        let demand = self.target.demand.as_deref().unwrap_or("");
        if self.kind.retrieves() {
            if self.provenance.embedder_version.as_deref() != Some(&ctx.embedder.version()) {
                return Err(PromptError::Rebuild("embedder version differs".into()));
            }
            let opts = self
                .provenance
                .options
                .clone()
                .ok_or_else(|| PromptError::Rebuild("provenance has no options".into()))?;
            return retrieval_bundle(self.kind, demand, ctx, &opts);
        }
        let instruction = match self.kind {
            PromptKind::Normal => ctx.instructions.normal(),
            PromptKind::ReasoningCompletion => ctx.instructions.reasoning_completion(),
            PromptKind::DemandGeneration => ctx.instructions.demand_generation(),
            _ => ctx.instructions.judge(),
        };
        Ok(PromptBundle::assemble(
            self.kind,
            instruction,
            self.demonstrations.clone(),
            self.target.clone(),
            self.provenance.clone(),
        ))
    }
}

fn base_provenance(instructions: &InstructionSet) -> Provenance {
    Provenance {
        language: instructions.language(),
        instructions_sha256: instructions.digest().to_string(),
        options: None,
        embedder_version: None,
        demonstrations: Vec::new(),
        tags: Vec::new(),
        dropped: Vec::new(),
        rendered_chars: 0,
        over_budget: false,
        rendered_sha256: String::new(),
    }
}

fn demand_seed(seed: u64, demand: &str) -> u64 {
    let digest = sha256_hex(demand.as_bytes());
    seed ^ u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

fn select_demos<'a>(
    demand: &str,
    ctx: &PromptContext<'a>,
    opts: &PromptOptions,
) -> Result<Vec<(&'a ReasoningEntry, f64)>, PromptError> {
    if opts.k == 0 {
        return Ok(Vec::new());
    }
    let library = ctx.library;
    if library.is_empty() {
        return Err(PromptError::EmptyLibrary);
    }
    if opts.selection == DemoSelection::Analogical {
        return Ok(top_k_demands(demand, opts.k, library, ctx.embedder)?
            .into_iter()
            .map(|s| (s.item, s.score))
            .collect());
    }
    let picked: Vec<&ReasoningEntry> = match &opts.selection {
        DemoSelection::Fixed { ids } if ids.is_empty() => {
            library.entries().iter().take(opts.k).collect()
        }
        DemoSelection::Fixed { ids } => ids
            .iter()
            .take(opts.k)
            .map(|id| {
                library
                    .get(id)
                    .ok_or_else(|| PromptError::UnknownEntry(id.clone()))
            })
            .collect::<Result<_, _>>()?,
        DemoSelection::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(demand_seed(*seed, demand));
            let k = opts.k.min(library.len());
            sample(&mut rng, library.len(), k)
                .into_iter()
                .map(|i| &library.entries()[i])
                .collect()
        }
        DemoSelection::Analogical => unreachable!(),
    };
    let q = ctx.embedder.embed(demand)?;
    picked
        .into_iter()
        .map(|e| Ok((e, cosine(&q, &e.embedding)?)))
        .collect()
}

fn retrieval_bundle(
    kind: PromptKind,
    demand: &str,
    ctx: &PromptContext<'_>,
    opts: &PromptOptions,
) -> Result<PromptBundle, PromptError> {
    if opts.n == 0 {
        return Err(PromptError::ZeroTags);
    }
    let chosen = select_demos(demand, ctx, opts)?;
    let target_tags = ctx.tags.search(demand, opts.n, ctx.embedder)?;
    let mut demos = Vec::with_capacity(chosen.len());
    for (entry, score) in &chosen {
        let mut d = Demonstration::from_entry(entry);
        if d.tags.is_empty() {
            d.tags = ctx
                .tags
                .search(&entry.demand, opts.n, ctx.embedder)?
                .into_iter()
                .map(|s| s.item)
                .collect();
        }
        if !opts.include_reasoning {
            d.reasoning = None;
        }
        d.score = Some(*score);
        demos.push(d);
    }
    let instruction = match kind {
        PromptKind::Predict => ctx.instructions.predict(),
        PromptKind::MultiTaskAnswer => ctx.instructions.answer_task(),
        _ => ctx.instructions.reasoning_task(),
    };
    let target = Target {
        demand: Some(demand.to_string()),
        tags: target_tags.iter().map(|s| s.item.clone()).collect(),
        ..Target::default()
    };

    let mut dropped = Vec::new();
    let mut over_budget = false;
    if let Some(max) = opts.max_chars {
        while render(kind, &instruction, &demos, &target).chars().count() > max {
            // lowest similarity first; among equal scores the later one
            let Some(victim) = (0..demos.len()).rev().min_by(|&a, &b| {
                demos[a]
                    .score
                    .partial_cmp(&demos[b].score)
                    .unwrap_or(std::cmp::Ordering::Equal)
            }) else {
                over_budget = true;
                break;
            };
            let d = demos.remove(victim);
            dropped.push(Retrieved {
                id: d.id.unwrap_or_default(),
                score: d.score.unwrap_or(0.0),
            });
        }
    }

    let mut provenance = base_provenance(ctx.instructions);
    provenance.options = Some(opts.clone());
    provenance.embedder_version = Some(ctx.embedder.version());
    provenance.demonstrations = demos
        .iter()
        .map(|d| Retrieved {
            id: d.id.clone().unwrap_or_default(),
            score: d.score.unwrap_or(0.0),
        })
        .collect();
    provenance.tags = target_tags
        .into_iter()
        .map(|s| Retrieved {
            id: s.item,
            score: s.score,
        })
        .collect();
    provenance.dropped = dropped;
    provenance.over_budget = over_budget;
    Ok(PromptBundle::assemble(
        kind,
        instruction,
        demos,
        target,
        provenance,
    ))
}

/// Prediction prompt: instruction, k demonstrations (demand, tags,
/// reasoning, answer) in descending similarity, then the target demand and
/// its retrieved tag list. `k = 0` gives the zero-shot prompt.
pub fn build_predict_prompt(
    demand: &str,
    ctx: &PromptContext<'_>,
    opts: &PromptOptions,
) -> Result<PromptBundle, PromptError> {
    retrieval_bundle(PromptKind::Predict, demand, ctx, opts)
}

/// The answer-task and reasoning-task inputs for one training demand. Both
/// share demonstrations and target and differ only in the instruction.
pub fn build_multitask_inputs(
    demand: &str,
    ctx: &PromptContext<'_>,
    opts: &PromptOptions,
) -> Result<(PromptBundle, PromptBundle), PromptError> {
    let answer = retrieval_bundle(PromptKind::MultiTaskAnswer, demand, ctx, opts)?;
    let mut reasoning = answer.clone();
    reasoning.kind = PromptKind::MultiTaskReasoning;
    reasoning.instruction = ctx.instructions.reasoning_task();
    let prov = reasoning.provenance.clone();
    reasoning = PromptBundle::assemble(
        reasoning.kind,
        reasoning.instruction,
        reasoning.demonstrations,
        reasoning.target,
        prov,
    );
    Ok((answer, reasoning))
}

/// Instruction and demand only.
pub fn build_normal_input(demand: &str, instructions: &InstructionSet) -> PromptBundle {
    PromptBundle::assemble(
        PromptKind::Normal,
        instructions.normal(),
        Vec::new(),
        Target {
            demand: Some(demand.to_string()),
            ..Target::default()
        },
        base_provenance(instructions),
    )
}

fn recorded(demos: &[Demonstration]) -> Vec<Retrieved> {
    demos
        .iter()
        .filter_map(|d| {
            d.id.as_ref().map(|id| Retrieved {
                id: id.clone(),
                score: d.score.unwrap_or(0.0),
            })
        })
        .collect()
}

/// Asks for the four reasoning steps of a (demand, answer) pair, with seed
/// examples that already carry reasoning.
pub fn build_reasoning_completion_prompt(
    seeds: &[Demonstration],
    demand: &str,
    answer: &SellExpr,
    instructions: &InstructionSet,
) -> PromptBundle {
    let demos: Vec<Demonstration> = seeds
        .iter()
        .map(|s| Demonstration {
            tags: Vec::new(),
            ..s.clone()
        })
        .collect();
    let mut prov = base_provenance(instructions);
    prov.demonstrations = recorded(&demos);
    PromptBundle::assemble(
        PromptKind::ReasoningCompletion,
        instructions.reasoning_completion(),
        demos,
        Target {
            demand: Some(demand.to_string()),
            sell: Some(sell::print(answer)),
            ..Target::default()
        },
        prov,
    )
}

/// Asks for a demand matching a synthesized answer, after (answer, demand)
/// example pairs.
pub fn build_demand_generation_prompt(
    examples: &[Demonstration],
    answer: &SellExpr,
    instructions: &InstructionSet,
) -> PromptBundle {
    let demos: Vec<Demonstration> = examples
        .iter()
        .map(|e| Demonstration {
            tags: Vec::new(),
            reasoning: None,
            ..e.clone()
        })
        .collect();
    let mut prov = base_provenance(instructions);
    prov.demonstrations = recorded(&demos);
    PromptBundle::assemble(
        PromptKind::DemandGeneration,
        instructions.demand_generation(),
        demos,
        Target {
            sell: Some(sell::print(answer)),
            ..Target::default()
        },
        prov,
    )
}

/// Grading prompt for one prediction. The reply contract is a single
/// integer from 0 to 10.
pub fn build_judge_prompt(
    demand: &str,
    prediction: &str,
    reference: &str,
    rubric: &[Demonstration],
    instructions: &InstructionSet,
) -> PromptBundle {
    PromptBundle::assemble(
        PromptKind::Judge,
        instructions.judge(),
        rubric.to_vec(),
        Target {
            demand: Some(demand.to_string()),
            sell: Some(reference.to_string()),
            prediction: Some(prediction.to_string()),
            ..Target::default()
        },
        base_provenance(instructions),
    )
}

/// Built-in grading examples.
pub fn default_rubric() -> Vec<Demonstration> {
    let demand = "Company white-collar workers who enjoy drinking Starbucks";
    let reference = "(Preference#Belongs To#Starbucks) AND (Career#Belongs To#White-collar)";
    vec![
        Demonstration::rubric(demand, reference, reference, 10),
        Demonstration::rubric(demand, "(Preference#Belongs To#Starbucks)", reference, 5),
        Demonstration::rubric(
            demand,
            "(Preference#Belongs To#Starbucks) AND (Resident City#Belongs To#Company white-collar)",
            reference,
            3,
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{TagCatalog, TagDef, ValueType};
    use crate::reasoning::label_counts;
    use crate::retrieval::{build_library, HashEmbedder, LibraryRecord};

    fn steps(kw: &str, tag: &str, sell: &str) -> String {
        format!(
            "(1) Extract keywords: {kw}\n(2) Select tags: {tag}\n(3) Form conditional expressions:\n{sell}\n(4) Combine:\n{sell}"
        )
    }

    fn fixture() -> (ReasoningLibrary, TagCatalog, HashEmbedder) {
        let catalog = TagCatalog::new(vec![
            TagDef::new("Gender", ValueType::String).with_values(["Male", "Female"]),
            TagDef::new("Career", ValueType::String).described("occupation, e.g. white-collar"),
            TagDef::new("Preference", ValueType::String).multi(),
            TagDef::new("User Age Group", ValueType::Numeric),
        ])
        .unwrap();
        let rec = |demand: &str, tag: &str, sell: &str| LibraryRecord {
            id: None,
            demand: demand.into(),
            tags: vec![tag.into()],
            reasoning: steps(demand, tag, sell),
            sell: sell.into(),
        };
        let records = vec![
            rec("Women", "Gender", "(Gender#Belongs To#Female)"),
            rec(
                "White-collar workers",
                "Career",
                "(Career#Belongs To#White-collar)",
            ),
            rec(
                "People who like tea",
                "Preference",
                "(Preference#Belongs To#Milk Tea)",
            ),
            rec(
                "Young people",
                "User Age Group",
                "(User Age Group#Between#18,35)",
            ),
        ];
        let emb = HashEmbedder::default();
        let lib = build_library(&records, &catalog, &emb).unwrap();
        (lib, catalog, emb)
    }

    fn with_ctx<R>(f: impl FnOnce(&PromptContext<'_>) -> R) -> R {
        let (lib, catalog, emb) = fixture();
        let tags = TagIndex::build(&catalog, &emb).unwrap();
        let ins = InstructionSet::builtin(Language::En);
        f(&PromptContext {
            library: &lib,
            tags: &tags,
            embedder: &emb,
            instructions: &ins,
        })
    }

    #[test]
    fn zero_shot_has_no_examples() {
        with_ctx(|ctx| {
            let opts = PromptOptions {
                k: 0,
                n: 2,
                ..PromptOptions::default()
            };
            let b = build_predict_prompt("Women who like tea", ctx, &opts).unwrap();
            assert!(b.demonstrations.is_empty());
            assert!(!b.rendered.contains("Example 1"));
            assert!(b.rendered.starts_with(&ctx.instructions.predict()));
            assert!(b
                .rendered
                .ends_with(&format!("Tags: {}", b.target.tags.join(" / "))));
            assert_eq!(b.target.tags.len(), 2);
        });
    }

    #[test]
    fn analogical_order_and_determinism() {
        with_ctx(|ctx| {
            let opts = PromptOptions {
                k: 3,
                n: 3,
                ..PromptOptions::default()
            };
            let a = build_predict_prompt("White-collar workers", ctx, &opts).unwrap();
            let b = build_predict_prompt("White-collar workers", ctx, &opts).unwrap();
            assert_eq!(a.rendered, b.rendered);
            assert_eq!(a.demonstrations.len(), 3);
            assert_eq!(a.demonstrations[0].demand, "White-collar workers");
            assert!((a.provenance.demonstrations[0].score - 1.0).abs() < 1e-9);
            let scores: Vec<f64> = a
                .provenance
                .demonstrations
                .iter()
                .map(|r| r.score)
                .collect();
            assert!(scores.windows(2).all(|w| w[0] >= w[1]));
            assert!(a.is_consistent());
            assert_eq!(a.rebuild(ctx).unwrap(), a);
        });
    }

    #[test]
    fn multitask_differs_only_in_instruction() {
        with_ctx(|ctx| {
            let (s, r) =
                build_multitask_inputs("Young women", ctx, &PromptOptions::default()).unwrap();
            assert_eq!(s.demonstrations, r.demonstrations);
            assert_eq!(s.target, r.target);
            assert_eq!(
                s.rendered.strip_prefix(&s.instruction),
                r.rendered.strip_prefix(&r.instruction)
            );
            assert_ne!(s.instruction, r.instruction);
            assert_eq!(r.rebuild(ctx).unwrap(), r);

            let no_rs = PromptOptions {
                include_reasoning: false,
                ..PromptOptions::default()
            };
            let (s, r) = build_multitask_inputs("Young women", ctx, &no_rs).unwrap();
            for b in [s, r] {
                assert!(!b.rendered.contains("\nReasoning:"));
                assert_eq!(label_counts(&b.rendered), [0, 0, 0, 0]);
            }
        });
    }

    #[test]
    fn fixed_and_random_selection() {
        with_ctx(|ctx| {
            let fixed = PromptOptions {
                k: 2,
                selection: DemoSelection::Fixed { ids: vec![] },
                ..PromptOptions::default()
            };
            let a = build_predict_prompt("Women", ctx, &fixed).unwrap();
            let b = build_predict_prompt("Young people", ctx, &fixed).unwrap();
            assert_eq!(a.provenance.demonstrations[0].id, "re-0000");
            assert_eq!(
                a.demonstrations.iter().map(|d| &d.id).collect::<Vec<_>>(),
                b.demonstrations.iter().map(|d| &d.id).collect::<Vec<_>>()
            );
            let bad = PromptOptions {
                selection: DemoSelection::Fixed {
                    ids: vec!["nope".into()],
                },
                ..PromptOptions::default()
            };
            assert!(matches!(
                build_predict_prompt("x", ctx, &bad),
                Err(PromptError::UnknownEntry(_))
            ));

            let random = PromptOptions {
                k: 2,
                selection: DemoSelection::Random { seed: 9 },
                ..PromptOptions::default()
            };
            let r1 = build_predict_prompt("Women", ctx, &random).unwrap();
            assert_eq!(r1, build_predict_prompt("Women", ctx, &random).unwrap());
            assert_eq!(r1.demonstrations.len(), 2);
            assert_eq!(r1.rebuild(ctx).unwrap(), r1);
        });
    }

    #[test]
    fn budget_drops_lowest_similarity_first() {
        with_ctx(|ctx| {
            let full = build_predict_prompt("White-collar workers", ctx, &PromptOptions::default())
                .unwrap();
            let lowest = full.provenance.demonstrations.last().unwrap().clone();
            let opts = PromptOptions {
                max_chars: Some(full.provenance.rendered_chars - 1),
                ..PromptOptions::default()
            };
            let cut = build_predict_prompt("White-collar workers", ctx, &opts).unwrap();
            assert_eq!(cut.demonstrations.len(), 2);
            assert_eq!(cut.provenance.dropped, vec![lowest]);
            assert!(cut.provenance.rendered_chars < full.provenance.rendered_chars);

            let tiny = PromptOptions {
                max_chars: Some(10),
                ..PromptOptions::default()
            };
            let b = build_predict_prompt("White-collar workers", ctx, &tiny).unwrap();
            assert!(b.demonstrations.is_empty());
            assert!(b.provenance.over_budget);
            assert_eq!(b.provenance.dropped.len(), 3);
            assert!(b.rendered.contains("Demand: White-collar workers"));
        });
    }

    #[test]
    fn reasoning_completion_layout() {
        with_ctx(|ctx| {
            let seed = Demonstration::from_entry(&ctx.library.entries()[0]);
            let target = sell::parse("(Career#Belongs To#White-collar)").unwrap();
            let b = build_reasoning_completion_prompt(
                &[seed],
                "White-collar workers",
                &target,
                ctx.instructions,
            );
            let example = b.rendered.split("\nExample 1\n").nth(1).unwrap();
            let example = example.split("\nTarget\n").next().unwrap();
            assert_eq!(label_counts(example), [1, 1, 1, 1]);
            assert!(b.rendered.ends_with(
                "Target\nDemand: White-collar workers\nAnswer: (Career#Belongs To#White-collar)\nReasoning:"
            ));
        });
    }

    #[test]
    fn demand_generation_prints_canonical_answer() {
        let ins = InstructionSet::builtin(Language::En);
        let s = sell::parse("(A#Belongs#x) OR ((B#Belongs To#y) OR (C#Belongs To#z))").unwrap();
        let ex = Demonstration {
            demand: "Women".into(),
            sell: "(Gender#Belongs To#Female)".into(),
            ..Demonstration::default()
        };
        let b = build_demand_generation_prompt(&[ex], &s, &ins);
        assert!(b.rendered.ends_with(
            "Answer: (A#Belongs To#x) OR (B#Belongs To#y) OR (C#Belongs To#z)\nDemand:"
        ));
        assert!(b
            .rendered
            .contains("Example 1\nAnswer: (Gender#Belongs To#Female)\nDemand: Women\n"));
    }

    #[test]
    fn judge_prompt_mentions_range() {
        let ins = InstructionSet::builtin(Language::En);
        let b = build_judge_prompt(
            "d",
            "(A#Belongs To#1)",
            "(A#Belongs To#2)",
            &default_rubric(),
            &ins,
        );
        assert!(b.instruction.contains("0 to 10"));
        assert_eq!(b.demonstrations.len(), 3);
        assert!(b.rendered.ends_with("Score:"));
        assert!(b.rendered.contains("Score: 10\n"));
    }
}
