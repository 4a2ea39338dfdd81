use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Source, SynthError, TrainSample};
use crate::prompt::{
    build_multitask_inputs, build_normal_input, PromptContext, PromptError, PromptKind,
    PromptOptions, Provenance,
};

/// Which training-corpus variant to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorpusMode {
    /// Answer and reasoning tasks over demonstrations with reasoning.
    #[serde(rename = "multitask")]
    MultiTask,
    /// Answer task only.
    #[serde(rename = "no-mt")]
    NoMt,
    /// Both tasks, demonstrations without reasoning.
    #[serde(rename = "no-rs")]
    NoRs,
    /// Instruction and demand in, answer out.
    #[serde(rename = "normal")]
    Normal,
}

impl CorpusMode {
    fn reasoning_task(self) -> bool {
        matches!(self, CorpusMode::MultiTask | CorpusMode::NoRs)
    }
}

impl fmt::Display for CorpusMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusMode::MultiTask => "multitask",
            CorpusMode::NoMt => "no-mt",
            CorpusMode::NoRs => "no-rs",
            CorpusMode::Normal => "normal",
        })
    }
}

impl FromStr for CorpusMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multitask" => Ok(CorpusMode::MultiTask),
            "no-mt" => Ok(CorpusMode::NoMt),
            "no-rs" => Ok(CorpusMode::NoRs),
            "normal" => Ok(CorpusMode::Normal),
            other => Err(format!(
                "unknown corpus mode `{other}` (expected multitask, no-mt, no-rs or normal)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Answer,
    Reasoning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordProvenance {
    pub sample_id: String,
    pub mode: CorpusMode,
    pub kind: PromptKind,
    pub demand: String,
    pub prompt: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub input: String,
    pub output: String,
    pub task: Task,
    pub source: Source,
    pub provenance: RecordProvenance,
}

fn emit_one(
    sample: &TrainSample,
    ctx: &PromptContext<'_>,
    opts: &PromptOptions,
    mode: CorpusMode,
) -> Result<Vec<CorpusRecord>, SynthError> {
    let record = |task: Task, bundle: crate::prompt::PromptBundle, output: String| CorpusRecord {
        id: format!(
            "{}:{}",
            sample.id,
            match task {
                Task::Answer => "answer",
                Task::Reasoning => "reasoning",
            }
        ),
        input: bundle.rendered,
        output,
        task,
        source: sample.source,
        provenance: RecordProvenance {
            sample_id: sample.id.clone(),
            mode,
            kind: bundle.kind,
            demand: sample.demand.clone(),
            prompt: bundle.provenance,
        },
    };
    if mode == CorpusMode::Normal {
        let bundle = build_normal_input(&sample.demand, ctx.instructions);
        return Ok(vec![record(Task::Answer, bundle, sample.sell.clone())]);
    }
    let opts = PromptOptions {
        include_reasoning: mode != CorpusMode::NoRs,
        ..opts.clone()
    };
    let (x_s, x_r) = build_multitask_inputs(&sample.demand, ctx, &opts)?;
    let mut out = vec![record(Task::Answer, x_s, sample.sell.clone())];
    if mode.reasoning_task() {
        let reasoning = sample.reasoning.clone().expect("checked before emission");
        out.push(record(Task::Reasoning, x_r, reasoning));
    }
    Ok(out)
}

/// Training records for `samples`: one answer-task record per sample, plus
/// one reasoning-task record in the two multi-task modes. Output order is
/// sample order, answer before reasoning.
pub fn emit_corpus(
    samples: &[TrainSample],
    ctx: &PromptContext<'_>,
    opts: &PromptOptions,
    mode: CorpusMode,
) -> Result<Vec<CorpusRecord>, SynthError> {
    if mode.reasoning_task() {
        if let Some(s) = samples.iter().find(|s| s.reasoning.is_none()) {
            return Err(SynthError::MissingReasoning(s.id.clone()));
        }
    }
    for s in samples {
        if let Err(e) = crate::sell::parse(&s.sell) {
            return Err(SynthError::InvalidSample {
                id: s.id.clone(),
                message: e.to_string(),
            });
        }
    }
    let per_sample = samples
        .par_iter()
        .map(|s| emit_one(s, ctx, opts, mode))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_sample.into_iter().flatten().collect())
}

/// Rebuilds a record's input from its provenance alone.
pub fn reproduce_input(
    record: &CorpusRecord,
    ctx: &PromptContext<'_>,
) -> Result<String, SynthError> {
    let prov = &record.provenance;
    if prov.prompt.instructions_sha256 != ctx.instructions.digest() {
        return Err(PromptError::Rebuild("instruction templates differ".into()).into());
    }
    match prov.kind {
        PromptKind::Normal => Ok(build_normal_input(&prov.demand, ctx.instructions).rendered),
        PromptKind::MultiTaskAnswer | PromptKind::MultiTaskReasoning => {
            let opts = prov
                .prompt
                .options
                .clone()
                .ok_or_else(|| PromptError::Rebuild("provenance has no options".into()))?;
            if prov.prompt.embedder_version.as_deref() != Some(&ctx.embedder.version()) {
                return Err(PromptError::Rebuild("embedder version differs".into()).into());
            }
            let (s, r) = build_multitask_inputs(&prov.demand, ctx, &opts)?;
            Ok(if prov.kind == PromptKind::MultiTaskAnswer {
                s.rendered
            } else {
                r.rendered
            })
        }
        other => Err(PromptError::Rebuild(format!("{other:?} is not a corpus prompt")).into()),
    }
}
