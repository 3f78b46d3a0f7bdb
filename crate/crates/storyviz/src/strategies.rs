//! Interchangeable algorithm variants behind common traits, selected by name
//! at runtime. Three families cover the ablation grid: sentence
//! representation, word attention, and discriminator design.

use ndarray::Array2;

use autodiff::rng::Prng;
use autodiff::{orthogonal_init, Graph, ParamStore, Var};

use crate::config::strategy_names;
use crate::error::{Error, Result};
use crate::nets;
use crate::ops::{
    enrich_sentences, extended_spatial_attention, AttentionResult, AttentionScope,
};

/// How the per-frame sentence representation fed to the context encoder is
/// built from the story's text encoding.
pub trait SentenceStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    /// Returns the `[N, D]` representation and, when word mixing happened,
    /// the `[N, L*N]` correlation weights.
    fn represent(
        &self,
        g: &mut Graph,
        s: Var,
        w: Var,
        mask: &Array2<f64>,
    ) -> Result<(Var, Option<Var>)>;
}

/// Enriched representation: each sentence vector becomes a correlation-
/// weighted mixture of every word embedding in the story.
pub struct EnrichedSentenceStrategy;

impl SentenceStrategy for EnrichedSentenceStrategy {
    fn name(&self) -> &'static str {
        strategy_names::SENT_ENRICHED
    }

    fn represent(
        &self,
        g: &mut Graph,
        s: Var,
        w: Var,
        mask: &Array2<f64>,
    ) -> Result<(Var, Option<Var>)> {
        let out = enrich_sentences(g, s, w, mask)?;
        Ok((out.s_prime, Some(out.sigma)))
    }
}

/// Ablation: feed the raw sentence vectors through unchanged.
pub struct PlainSentenceStrategy;

impl SentenceStrategy for PlainSentenceStrategy {
    fn name(&self) -> &'static str {
        strategy_names::SENT_PLAIN
    }

    fn represent(
        &self,
        _g: &mut Graph,
        s: Var,
        _w: Var,
        _mask: &Array2<f64>,
    ) -> Result<(Var, Option<Var>)> {
        Ok((s, None))
    }
}

/// Word attention injected into the generator at configured resolutions.
pub trait AttentionStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Register the parameters for one injection site.
    fn init_params(
        &self,
        store: &mut ParamStore,
        rng: &mut Prng,
        site_res: usize,
        channels: usize,
        text_dim: usize,
    );

    /// Inject word information into one story's `[N, C, r, r]` features,
    /// returning features of the same shape plus the attention internals.
    fn inject(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        site_res: usize,
        x: Var,
        w: Var,
        mask: &Array2<f64>,
    ) -> Result<(Var, Option<AttentionResult>)>;
}

fn attn_param(site_res: usize, what: &str) -> String {
    format!("attn{site_res}.{what}")
}

/// Shared implementation for both scoped variants.
struct ScopedAttention {
    scope: AttentionScope,
    name: &'static str,
}

impl AttentionStrategy for ScopedAttention {
    fn name(&self) -> &'static str {
        self.name
    }

    fn init_params(
        &self,
        store: &mut ParamStore,
        rng: &mut Prng,
        site_res: usize,
        channels: usize,
        text_dim: usize,
    ) {
        store.insert(
            &attn_param(site_res, "proj"),
            orthogonal_init(rng, &[channels, text_dim], 1.0),
        );
        nets::init_conv(
            store,
            rng,
            &attn_param(site_res, "fuse"),
            channels + text_dim,
            channels,
            1,
            nets::Init::Dcgan,
        );
    }

    fn inject(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        site_res: usize,
        x: Var,
        w: Var,
        mask: &Array2<f64>,
    ) -> Result<(Var, Option<AttentionResult>)> {
        let proj = g.param(store, &attn_param(site_res, "proj"));
        let result = extended_spatial_attention(g, x, w, mask, proj, self.scope)?;
        let stacked = g.concat(1, &[x, result.weighted]);
        let fused = nets::conv_forward(g, store, &attn_param(site_res, "fuse"), stacked, 1, 0);
        let fused = g.relu(fused);
        Ok((fused, Some(result)))
    }
}

/// Ablation: no attention; features pass through and no parameters exist.
pub struct NoAttention;

impl AttentionStrategy for NoAttention {
    fn name(&self) -> &'static str {
        strategy_names::ATTN_NONE
    }

    fn init_params(
        &self,
        _store: &mut ParamStore,
        _rng: &mut Prng,
        _site_res: usize,
        _channels: usize,
        _text_dim: usize,
    ) {
    }

    fn inject(
        &self,
        _g: &mut Graph,
        _store: &ParamStore,
        _site_res: usize,
        x: Var,
        _w: Var,
        _mask: &Array2<f64>,
    ) -> Result<(Var, Option<AttentionResult>)> {
        Ok((x, None))
    }
}

pub fn extended_attention() -> Box<dyn AttentionStrategy> {
    Box::new(ScopedAttention {
        scope: AttentionScope::Extended,
        name: strategy_names::ATTN_EXTENDED,
    })
}

pub fn per_sentence_attention() -> Box<dyn AttentionStrategy> {
    Box::new(ScopedAttention {
        scope: AttentionScope::PerSentence,
        name: strategy_names::ATTN_PER_SENTENCE,
    })
}

/// Registry lookups by the names used in configs and on the CLI.
pub fn sentence_strategy(name: &str) -> Result<Box<dyn SentenceStrategy>> {
    match name {
        strategy_names::SENT_ENRICHED => Ok(Box::new(EnrichedSentenceStrategy)),
        strategy_names::SENT_PLAIN => Ok(Box::new(PlainSentenceStrategy)),
        other => Err(Error::Config(format!("unknown sentence strategy `{other}`"))),
    }
}

pub fn attention_strategy(name: &str) -> Result<Box<dyn AttentionStrategy>> {
    match name {
        strategy_names::ATTN_EXTENDED => Ok(extended_attention()),
        strategy_names::ATTN_PER_SENTENCE => Ok(per_sentence_attention()),
        strategy_names::ATTN_NONE => Ok(Box::new(NoAttention)),
        other => Err(Error::Config(format!("unknown attention strategy `{other}`"))),
    }
}

pub fn discriminator_strategy(
    name: &str,
) -> Result<Box<dyn crate::model::DiscriminatorStrategy>> {
    match name {
        strategy_names::DISC_FUSION_ONE_WAY => {
            Ok(Box::new(crate::model::FusionOneWayDiscriminator))
        }
        strategy_names::DISC_TWO_WAY => Ok(Box::new(crate::model::TwoWayBaselineDiscriminator)),
        other => Err(Error::Config(format!(
            "unknown discriminator strategy `{other}`"
        ))),
    }
}

/// All registered names per family, for CLI help and validation.
pub fn registry_listing() -> Vec<(&'static str, Vec<&'static str>)> {
    vec![
        (
            "sentence",
            vec![strategy_names::SENT_ENRICHED, strategy_names::SENT_PLAIN],
        ),
        (
            "attention",
            vec![
                strategy_names::ATTN_EXTENDED,
                strategy_names::ATTN_PER_SENTENCE,
                strategy_names::ATTN_NONE,
            ],
        ),
        (
            "discriminator",
            vec![
                strategy_names::DISC_FUSION_ONE_WAY,
                strategy_names::DISC_TWO_WAY,
            ],
        ),
    ]
}
