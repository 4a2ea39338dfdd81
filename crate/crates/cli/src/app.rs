//! Loaded resources shared by the CLI commands and the HTTP service.

use std::sync::Arc;

use serde::Serialize;

use sellkit_core::catalog::TagCatalog;
use sellkit_core::config::{AppConfig, ConfigError};
use sellkit_core::llm::{cassette_key, Gateway};
use sellkit_core::prompt::{
    DemoSelection, InstructionSet, PromptBundle, PromptContext, PromptOptions, Provenance,
};
use sellkit_core::retrieval::{Embedder, ReasoningLibrary, TagIndex};
use sellkit_core::sell::{self, CardNode, ValidationReport};
use sellkit_core::synth::{generate_answer, AnswerOutcome, RejectReason, SynthError};
use sellkit_core::targeting::UserDb;

pub struct Resources {
    pub config: AppConfig,
    pub catalog: TagCatalog,
    pub library: ReasoningLibrary,
    pub tags: TagIndex,
    pub embedder: Arc<dyn Embedder>,
    pub gateway: Gateway,
    pub instructions: InstructionSet,
    pub users: Option<UserDb>,
    pub options: PromptOptions,
}

/// Prompt options from config; `seed` replaces the seed of random demo
/// selection.
pub fn prompt_options(config: &AppConfig, seed: Option<u64>) -> PromptOptions {
    let mut opts = config.retrieval.prompt_options();
    if let (Some(s), DemoSelection::Random { seed }) = (seed, &mut opts.selection) {
        *seed = s;
    }
    opts
}

pub fn tag_index(catalog: &TagCatalog, embedder: &dyn Embedder) -> Result<TagIndex, ConfigError> {
    TagIndex::build(catalog, embedder).map_err(|e| ConfigError::Load {
        what: "tag index",
        message: e.to_string(),
    })
}

/// Library stored under another embedder cannot be searched with this one.
pub fn check_library(
    library: &ReasoningLibrary,
    embedder: &dyn Embedder,
) -> Result<(), ConfigError> {
    match library.embedder_version() {
        Some(v) if v != embedder.version() => Err(ConfigError::Invalid(format!(
            "library was embedded with `{v}` but the configured embedder is `{}`; rebuild it",
            embedder.version()
        ))),
        _ => Ok(()),
    }
}

impl Resources {
    /// Everything the translation path needs; users only when asked.
    pub fn load(
        config: AppConfig,
        with_users: bool,
        seed: Option<u64>,
    ) -> Result<Self, ConfigError> {
        if with_users {
            config.check_files()?;
        }
        let catalog = config.load_catalog()?;
        let embedder = config.embedder()?;
        let library = config.load_library()?;
        check_library(&library, &*embedder)?;
        let tags = tag_index(&catalog, &*embedder)?;
        let users = if with_users {
            Some(config.load_users(catalog.clone())?)
        } else {
            None
        };
        Ok(Resources {
            gateway: config.gateway()?,
            instructions: config.instructions()?,
            options: prompt_options(&config, seed),
            config,
            catalog,
            library,
            tags,
            embedder,
            users,
        })
    }

    pub fn prompt_context(&self) -> PromptContext<'_> {
        PromptContext {
            library: &self.library,
            tags: &self.tags,
            embedder: &*self.embedder,
            instructions: &self.instructions,
        }
    }

    pub fn translate(&self, demand: &str) -> Result<Translation, SynthError> {
        let demand = demand.trim();
        let out = generate_answer(
            demand,
            &self.prompt_context(),
            &self.options,
            &self.catalog,
            &self.gateway,
        )?;
        let (expr, rejection) = match out.outcome {
            AnswerOutcome::Accepted(e) => (Some(e), None),
            AnswerOutcome::Rejected(r) => (None, Some(r)),
        };
        let validation = match (&expr, &rejection) {
            (Some(e), _) => Some(sell::validate(e, &self.catalog)),
            (None, Some(RejectReason::Validation { issues })) => Some(ValidationReport {
                ok: false,
                issues: issues.clone(),
            }),
            _ => None,
        };
        // Expressions that parse but fail validation still go back to the
        // marketer as an editable card.
        let parsed = expr
            .or_else(|| sell::parse(&sellkit_core::synth::extract_sell(&out.completion.text)).ok());
        let rejection = match rejection {
            Some(RejectReason::Validation { .. }) => None,
            other => other,
        };
        Ok(Translation {
            demand: demand.to_string(),
            sell: parsed.as_ref().map(sell::print),
            card: parsed.as_ref().map(sell::to_card),
            validation,
            rejection,
            completion: out.completion.text,
            replay: Replay {
                cassette_key: cassette_key(
                    &self.gateway.model,
                    &out.prompt.rendered,
                    self.gateway.max_tokens,
                ),
                backend: out.completion.backend,
                payload_sha256: out.completion.payload_hash,
                cache_hit: out.completion.cache_hit,
                model: self.gateway.model.clone(),
            },
            prompt_provenance: out.prompt.provenance.clone(),
            prompt: out.prompt,
        })
    }
}

/// Enough of the completion call to look it up in a cassette again.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replay {
    pub cassette_key: String,
    pub model: String,
    pub backend: String,
    pub payload_sha256: String,
    pub cache_hit: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Translation {
    pub demand: String,
    pub sell: Option<String>,
    pub card: Option<CardNode>,
    pub validation: Option<ValidationReport>,
    /// Why the completion could not be turned into SELL.
    pub rejection: Option<RejectReason>,
    pub completion: String,
    pub prompt_provenance: Provenance,
    pub replay: Replay,
    #[serde(skip)]
    pub prompt: PromptBundle,
}
