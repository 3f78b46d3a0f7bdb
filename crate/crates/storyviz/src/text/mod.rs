//! Text side of the pipeline: vocabulary, tokenizer, recurrent encoder, and
//! the contrastive pretraining that aligns image and text features.

mod encoder;
mod pretrain;
mod vocab;

pub use encoder::{
    encode_story, encode_story_graph, encoder_dims, init_text_encoder, story_tokens,
    EncodedStoryVars, TextEncoderDims, TextEncoding,
};
pub use pretrain::{
    contrastive_loss_graph, cosine_alignment_x100, image_encoder_forward, init_image_encoder,
    pretrain_encoders, ImageEncoderDims, PretrainConfig, PretrainReport, PretrainedEncoders,
};
pub use vocab::{build_vocab, detokenize, tokenize, Vocab, PAD, UNK};
