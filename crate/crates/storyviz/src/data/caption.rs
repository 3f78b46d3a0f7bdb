//! Templated caption generation. The grammar is deliberately rigid: captions
//! must tokenize to at most `max_tokens` whitespace tokens and mention exactly
//! the keywords flagged in the frame spec.

use crate::config::DatasetConfig;
use crate::error::{Error, Result};

use super::StorySpec;

/// Render the caption for one frame.
///
/// Shape mentions are capped so the caption always fits the token budget:
/// both keywords leave room for one shape phrase, a single keyword for two,
/// no keyword for three. Shapes beyond the cap are present in the image but
/// unmentioned (captions never lie, they only omit).
pub fn caption_frame(spec: &StorySpec, frame_idx: usize, config: &DatasetConfig) -> Result<String> {
    let frame = spec
        .frames
        .get(frame_idx)
        .ok_or_else(|| Error::Bounds(format!("frame {frame_idx} of story {}", spec.story_id)))?;

    let keyword_cost = 3 * (frame.mentions_style as usize + frame.mentions_object as usize);
    let mut mention = frame.shapes.len().min(3);
    loop {
        if mention == 0 {
            return Err(Error::Config(format!(
                "caption budget {} cannot fit any shape mention",
                config.max_tokens
            )));
        }
        let shape_cost = 4 * mention - 1;
        if shape_cost + keyword_cost <= config.max_tokens {
            break;
        }
        mention -= 1;
    }

    let shape_words: Vec<String> = frame.shapes[..mention]
        .iter()
        .map(|s| format!("a {} {}", s.color.word(), s.kind.word()))
        .collect();
    let shapes = shape_words.join(" and ");
    let object = format!("and the {}", spec.recurring_object.word());
    let style = format!("in the {}", spec.global_style.word());

    let caption = match (
        frame.caption_template_id % 2,
        frame.mentions_style,
        frame.mentions_object,
    ) {
        (_, false, false) => shapes,
        (_, false, true) => format!("{shapes} {object}"),
        (0, true, false) => format!("{shapes} {style}"),
        (1, true, false) => format!("{style} {shapes}"),
        (0, true, true) => format!("{shapes} {object} {style}"),
        (1, true, true) => format!("{style} {shapes} {object}"),
        _ => unreachable!(),
    };

    let count = caption.split_whitespace().count();
    if count > config.max_tokens {
        return Err(Error::Config(format!(
            "caption `{caption}` overflows budget {}",
            config.max_tokens
        )));
    }
    Ok(caption)
}
