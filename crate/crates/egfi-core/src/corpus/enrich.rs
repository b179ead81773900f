//! Entity enrichment: wrap the target pair in typed boundary markers and
//! anonymize the mentions to "drug1"/"drug2" so the classifier cannot key on
//! the drug names themselves.

use super::markers::{close_marker, open_marker, Slot};
use super::EntityMention;
use crate::error::{Error, Result};

/// Replace the two target mentions with `<e1t> drug1 </e1t>` and
/// `<e2t> drug2 </e2t>` (t = 0-indexed type code). All other text, including
/// non-target entity surfaces, is left untouched.
pub fn enrich(text: &str, e1: &EntityMention, e2: &EntityMention) -> Result<String> {
    splice_pair(text, e1, e2, "drug1", "drug2")
}

/// Wrap the two target mentions in markers but keep the original surfaces.
/// This is the form the per-relation generators are trained on.
pub fn mark_entities(text: &str, e1: &EntityMention, e2: &EntityMention) -> Result<String> {
    splice_pair(text, e1, e2, &e1.surface, &e2.surface)
}

fn splice_pair(
    text: &str,
    e1: &EntityMention,
    e2: &EntityMention,
    payload1: &str,
    payload2: &str,
) -> Result<String> {
    e1.validate(text)?;
    e2.validate(text)?;
    if e1.overlaps(e2) {
        return Err(Error::Validation(format!(
            "target entities '{}' and '{}' overlap",
            e1.id, e2.id
        )));
    }

    let seg1 = format!(
        "{} {} {}",
        open_marker(Slot::First, e1.drug_type),
        payload1,
        close_marker(Slot::First, e1.drug_type)
    );
    let seg2 = format!(
        "{} {} {}",
        open_marker(Slot::Second, e2.drug_type),
        payload2,
        close_marker(Slot::Second, e2.drug_type)
    );

    // splice right-to-left so the earlier span's offsets stay valid
    let (first, first_seg, second, second_seg) = if e1.start < e2.start {
        (e1, seg1, e2, seg2)
    } else {
        (e2, seg2, e1, seg1)
    };
    let mut out = replace_span(text, second.start, second.end, &second_seg);
    out = replace_span(&out, first.start, first.end, &first_seg);
    Ok(out)
}

fn replace_span(text: &str, start: usize, end: usize, replacement: &str) -> String {
    let mut out: String = text.chars().take(start).collect();
    out.push_str(replacement);
    out.extend(text.chars().skip(end));
    out
}

/// Invert `enrich`: strip the four marker tokens and put the original
/// surfaces back. Used to verify enrichment is lossless.
pub fn strip_enrichment(enriched: &str, e1: &EntityMention, e2: &EntityMention) -> String {
    let seg1 = format!(
        "{} drug1 {}",
        open_marker(Slot::First, e1.drug_type),
        close_marker(Slot::First, e1.drug_type)
    );
    let seg2 = format!(
        "{} drug2 {}",
        open_marker(Slot::Second, e2.drug_type),
        close_marker(Slot::Second, e2.drug_type)
    );
    enriched.replacen(&seg1, &e1.surface, 1).replacen(&seg2, &e2.surface, 1)
}
