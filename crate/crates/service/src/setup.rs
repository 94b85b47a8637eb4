//! Builds the store, provider, templates and labeler from a [`Config`].

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use pubbie_core::classifier::{HeadLabeler, TrainedModel};
use pubbie_core::llm::{ChatProvider, EmbeddingProvider, HashEmbedder, OpenAiClient, ScriptedMock};
use pubbie_core::orchestrator::{Orchestrator, TemplateRegistry};
use pubbie_core::store::{Labeler, Store};

use crate::config::{Config, ProviderChoice};

pub fn open_store(config: &Config) -> Result<Arc<Store>> {
    let store = Store::open(&config.store_path)
        .with_context(|| format!("opening {}", config.store_path.display()))?;
    Ok(Arc::new(store))
}

/// `mock_override` (the `--mock-script` flag) wins over the config file.
pub fn chat_provider(config: &Config, mock_override: Option<&Path>) -> Result<Arc<dyn ChatProvider>> {
    if let Some(path) = mock_override {
        return Ok(Arc::new(ScriptedMock::from_file(path)?));
    }
    match &config.provider {
        ProviderChoice::Mock(path) => Ok(Arc::new(ScriptedMock::from_file(path)?)),
        ProviderChoice::OpenAi(openai) => Ok(Arc::new(OpenAiClient::new(openai.clone()))),
        ProviderChoice::None => {
            bail!("PROVIDER_NOT_CONFIGURED: set llm.endpoint or llm.mock_script, or pass --mock-script")
        }
    }
}

/// The configured embedding service, or the offline hashing embedder.
pub fn embedder(config: &Config) -> Box<dyn EmbeddingProvider> {
    match &config.openai {
        Some(openai) => Box::new(OpenAiClient::new(openai.clone())),
        None => Box::new(HashEmbedder),
    }
}

pub fn templates(config: &Config) -> Result<TemplateRegistry> {
    Ok(match &config.templates_dir {
        Some(dir) => TemplateRegistry::load_dir(dir)?,
        None => TemplateRegistry::defaults(),
    })
}

/// The trained model at `classifier.model_path`, if there is one.
pub fn labeler(config: &Config) -> Result<Option<Arc<dyn Labeler>>> {
    let Some(path) = &config.classifier_model_path else {
        return Ok(None);
    };
    if !path.exists() {
        tracing::warn!(path = %path.display(), "no classifier model yet; unlabelled uploads are stored as No Program");
        return Ok(None);
    }
    let model = TrainedModel::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(Some(match model {
        TrainedModel::NaiveBayes(m) => Arc::new(m),
        TrainedModel::LinearHead(h) => Arc::new(HeadLabeler::new(h, embedder(config))),
    }))
}

pub fn orchestrator(config: &Config, mock_override: Option<&Path>) -> Result<Arc<Orchestrator>> {
    let orchestrator = Orchestrator::new(
        open_store(config)?,
        chat_provider(config, mock_override)?,
        templates(config)?,
        config.orchestrator,
    )?;
    orchestrator.set_labeler(labeler(config)?);
    Ok(Arc::new(orchestrator))
}
