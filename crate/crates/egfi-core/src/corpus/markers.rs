//! Typed entity-marker tokens: `<e1t>`/`</e1t>` around the first entity and
//! `<e2t>`/`</e2t>` around the second, where `t` is the 0-indexed drug-type
//! code (drug=0, brand=1, group=2, drug_n=3).

use super::DrugType;

/// Entity slot within a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    First,
    Second,
}

impl Slot {
    fn digit(self) -> char {
        match self {
            Slot::First => '1',
            Slot::Second => '2',
        }
    }
}

pub fn open_marker(slot: Slot, ty: DrugType) -> String {
    format!("<e{}{}>", slot.digit(), ty.marker_index())
}

pub fn close_marker(slot: Slot, ty: DrugType) -> String {
    format!("</e{}{}>", slot.digit(), ty.marker_index())
}

/// All 16 marker token surfaces, open and close for both slots and all four
/// types, in a fixed order.
pub fn all_marker_tokens() -> Vec<String> {
    let mut out = Vec::with_capacity(16);
    for slot in [Slot::First, Slot::Second] {
        for ty in DrugType::ALL {
            out.push(open_marker(slot, ty));
            out.push(close_marker(slot, ty));
        }
    }
    out
}

/// True iff `token` is one of the 16 valid marker tokens.
pub fn is_marker_token(token: &str) -> bool {
    parse_marker(token).is_some()
}

/// Parse a single marker token into (closing?, slot, drug type).
pub fn parse_marker(token: &str) -> Option<(bool, Slot, DrugType)> {
    let body = token.strip_prefix('<')?.strip_suffix('>')?;
    let (closing, body) = match body.strip_prefix('/') {
        Some(rest) => (true, rest),
        None => (false, body),
    };
    let body = body.strip_prefix('e')?;
    let mut chars = body.chars();
    let slot = match chars.next()? {
        '1' => Slot::First,
        '2' => Slot::Second,
        _ => return None,
    };
    let ty = DrugType::from_marker_index(chars.next()?.to_digit(10)? as usize)?;
    if chars.next().is_some() {
        return None;
    }
    Some((closing, slot, ty))
}

/// One well-formed `<eXt> surface </eXt>` annotation found in a text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub slot: Slot,
    pub drug_type: DrugType,
    pub surface: String,
}

/// Result of scanning a text for marker structure.
#[derive(Debug, Clone, Default)]
pub struct MarkerScan {
    /// count of valid marker tokens seen (paired or not)
    pub marker_count: usize,
    /// well-formed open/close pairs with non-empty enclosed text
    pub annotations: Vec<Annotation>,
    /// any valid marker failed to pair up cleanly
    pub malformed: bool,
}

/// Scan a text for marker tokens and group them into annotations. A valid
/// open marker must be followed by the matching close marker with non-empty
/// text and no other marker in between; everything else sets `malformed`.
pub fn scan(text: &str) -> MarkerScan {
    // (byte_start, byte_end, closing, slot, type)
    let mut tokens: Vec<(usize, usize, bool, Slot, DrugType)> = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'<' {
            if let Some(rel_end) = text[i..].find('>') {
                let cand = &text[i..i + rel_end + 1];
                if let Some((closing, slot, ty)) = parse_marker(cand) {
                    tokens.push((i, i + rel_end + 1, closing, slot, ty));
                    i += rel_end + 1;
                    continue;
                }
            }
        }
        i += 1;
    }

    let mut scan = MarkerScan { marker_count: tokens.len(), ..Default::default() };
    let mut idx = 0;
    while idx < tokens.len() {
        let (_, open_end, closing, slot, ty) = tokens[idx];
        if closing {
            scan.malformed = true; // close with no open
            idx += 1;
            continue;
        }
        match tokens.get(idx + 1) {
            Some(&(close_start, _, true, close_slot, close_ty))
                if close_slot == slot && close_ty == ty =>
            {
                let surface = text[open_end..close_start].trim();
                if surface.is_empty() {
                    scan.malformed = true;
                } else {
                    scan.annotations.push(Annotation {
                        slot,
                        drug_type: ty,
                        surface: surface.to_string(),
                    });
                }
                idx += 2;
            }
            _ => {
                scan.malformed = true; // unmatched open or wrong close
                idx += 1;
            }
        }
    }
    scan
}
