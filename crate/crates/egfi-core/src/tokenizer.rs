//! Subword tokenization. A greedy pair-merge (BPE-style) vocabulary trained
//! on the corpus, with atomic special tokens: control tokens, the 16 entity
//! markers and the end-of-text token. Continuation pieces carry a `##`
//! prefix so detokenization can rebuild the original words.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::markers::all_marker_tokens;
use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
/// End-of-text token surface used by the generation side.
pub const END_OF_TEXT: &str = "<endofxt>";

pub const MAX_LEN_DEFAULT: usize = 300;

const CONTINUATION: &str = "##";

/// Special tokens in fixed id order: PAD is always id 0.
pub fn special_tokens() -> Vec<String> {
    let mut specials = vec![
        PAD.to_string(),
        UNK.to_string(),
        CLS.to_string(),
        SEP.to_string(),
        END_OF_TEXT.to_string(),
    ];
    specials.extend(all_marker_tokens());
    specials
}

/// Subword vocabulary: pieces, merge ranks and the special-token table.
#[derive(Debug, Clone)]
pub struct Vocab {
    pieces: Vec<String>,
    ids: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    merge_rank: HashMap<(String, String), usize>,
    n_specials: usize,
}

impl Vocab {
    pub fn size(&self) -> usize {
        self.pieces.len()
    }

    pub fn n_specials(&self) -> usize {
        self.n_specials
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.ids.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(|s| s.as_str())
    }

    pub fn pad_id(&self) -> u32 {
        0
    }

    pub fn unk_id(&self) -> u32 {
        1
    }

    pub fn cls_id(&self) -> u32 {
        2
    }

    pub fn sep_id(&self) -> u32 {
        3
    }

    pub fn end_of_text_id(&self) -> u32 {
        4
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < self.n_specials
    }

    pub fn is_marker(&self, id: u32) -> bool {
        self.piece(id).is_some_and(crate::corpus::markers::is_marker_token)
    }

    /// Encode one whitespace token. Special tokens map to their single id;
    /// ordinary words are split into subword pieces by the learned merges.
    /// Characters never seen in training become `[UNK]`.
    pub fn encode_token(&self, token: &str) -> Vec<u32> {
        if let Some(&id) = self.ids.get(token) {
            if (id as usize) < self.n_specials {
                return vec![id];
            }
        }
        let mut symbols = word_symbols(token);
        // apply the best-ranked merge until none applies
        loop {
            let mut best: Option<(usize, usize)> = None; // (rank, position)
            for i in 0..symbols.len().saturating_sub(1) {
                let pair = (symbols[i].clone(), symbols[i + 1].clone());
                if let Some(&rank) = self.merge_rank.get(&pair) {
                    if best.map_or(true, |(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            match best {
                Some((_, i)) => {
                    let merged = merge_symbols(&symbols[i], &symbols[i + 1]);
                    symbols.splice(i..=i + 1, [merged]);
                }
                None => break,
            }
        }
        symbols
            .iter()
            .map(|s| self.ids.get(s).copied().unwrap_or(self.unk_id()))
            .collect()
    }
}

/// Symbols of a word: first character bare, the rest continuation-prefixed.
fn word_symbols(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| {
            if i == 0 {
                c.to_string()
            } else {
                format!("{CONTINUATION}{c}")
            }
        })
        .collect()
}

fn merge_symbols(left: &str, right: &str) -> String {
    format!("{left}{}", right.strip_prefix(CONTINUATION).unwrap_or(right))
}

/// Train a greedy pair-merge subword vocabulary of at most `target_size`
/// entries (special tokens included). Deterministic given corpus order:
/// frequency ties break toward the lexicographically smaller pair.
pub fn build_vocab<'a>(corpus: impl IntoIterator<Item = &'a str>, target_size: usize) -> Result<Vocab> {
    let specials = special_tokens();
    if target_size < specials.len() + 26 {
        return Err(Error::Config(format!(
            "vocab target_size {target_size} too small; need at least {}",
            specials.len() + 26
        )));
    }

    // word frequency over ordinary whitespace tokens
    let special_set: HashMap<&str, ()> = specials.iter().map(|s| (s.as_str(), ())).collect();
    let mut word_freq: BTreeMap<Vec<String>, u64> = BTreeMap::new();
    let mut seen_any = false;
    for text in corpus {
        seen_any = true;
        for token in text.split_whitespace() {
            if special_set.contains_key(token) {
                continue;
            }
            *word_freq.entry(word_symbols(token)).or_insert(0) += 1;
        }
    }
    if !seen_any {
        return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
    }

    let mut words: Vec<(Vec<String>, u64)> = word_freq.into_iter().collect();

    // base alphabet
    let mut pieces: Vec<String> = specials.clone();
    let mut have: HashMap<String, ()> = pieces.iter().map(|p| (p.clone(), ())).collect();
    let mut alphabet: Vec<String> = Vec::new();
    for (symbols, _) in &words {
        for s in symbols {
            if !have.contains_key(s) {
                have.insert(s.clone(), ());
                alphabet.push(s.clone());
            }
        }
    }
    alphabet.sort();
    pieces.extend(alphabet);

    let mut merges: Vec<(String, String)> = Vec::new();
    while pieces.len() < target_size {
        let mut pair_freq: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (symbols, freq) in &words {
            for i in 0..symbols.len().saturating_sub(1) {
                *pair_freq
                    .entry((symbols[i].clone(), symbols[i + 1].clone()))
                    .or_insert(0) += freq;
            }
        }
        // best pair: highest frequency, ties toward the smaller pair
        let best = pair_freq
            .iter()
            .filter(|(_, &f)| f >= 2)
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)));
        let Some((pair, _)) = best else { break };
        let pair = pair.clone();
        let merged = merge_symbols(&pair.0, &pair.1);
        // never synthesize a piece that collides with a special token
        if special_set.contains_key(merged.as_str()) {
            break;
        }
        for (symbols, _) in &mut words {
            let mut i = 0;
            while i + 1 < symbols.len() {
                if symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
                    symbols.splice(i..=i + 1, [merged.clone()]);
                }
                i += 1;
            }
        }
        if !have.contains_key(&merged) {
            have.insert(merged.clone(), ());
            pieces.push(merged);
        }
        merges.push(pair);
    }

    Ok(vocab_from_parts(pieces, merges, specials.len()))
}

fn vocab_from_parts(pieces: Vec<String>, merges: Vec<(String, String)>, n_specials: usize) -> Vocab {
    let ids = pieces
        .iter()
        .enumerate()
        .map(|(i, p)| (p.clone(), i as u32))
        .collect();
    let merge_rank = merges
        .iter()
        .enumerate()
        .map(|(i, m)| (m.clone(), i))
        .collect();
    Vocab { pieces, ids, merges, merge_rank, n_specials }
}

// ---------------------------------------------------------------------------
// vocab file: specials header block, then one piece per line, then merges

pub fn save_vocab(vocab: &Vocab, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<fs::File>, s: String| -> Result<()> {
        writeln!(w, "{s}").map_err(|e| Error::io(path, e))
    };
    write(&mut w, format!("#specials {}", vocab.n_specials))?;
    write(&mut w, format!("#pieces {}", vocab.pieces.len()))?;
    write(&mut w, format!("#merges {}", vocab.merges.len()))?;
    for piece in &vocab.pieces {
        write(&mut w, piece.clone())?;
    }
    for (a, b) in &vocab.merges {
        write(&mut w, format!("{a} {b}"))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let mut header = |name: &str| -> Result<usize> {
        let line = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(path, e))?
            .ok_or_else(|| Error::Config(format!("vocab file truncated before {name}")))?;
        line.strip_prefix(&format!("#{name} "))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Config(format!("vocab file missing '#{name} N' header")))
    };
    let n_specials = header("specials")?;
    let n_pieces = header("pieces")?;
    let n_merges = header("merges")?;

    let mut pieces = Vec::with_capacity(n_pieces);
    let mut merges = Vec::with_capacity(n_merges);
    for i in 0..n_pieces + n_merges {
        let line = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(path, e))?
            .ok_or_else(|| Error::Config("vocab file truncated".into()))?;
        if i < n_pieces {
            pieces.push(line);
        } else {
            let (a, b) = line
                .split_once(' ')
                .ok_or_else(|| Error::Config(format!("bad merge line '{line}'")))?;
            merges.push((a.to_string(), b.to_string()));
        }
    }
    let expected = special_tokens();
    if pieces.len() < expected.len() || pieces[..expected.len()] != expected[..] {
        return Err(Error::Config("vocab file special-token block is not canonical".into()));
    }
    Ok(vocab_from_parts(pieces, merges, n_specials))
}

// ---------------------------------------------------------------------------
// tokenization of enriched sentences

/// Tokenizer output for one enriched sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedInput {
    /// padded to `max_len`
    pub ids: Vec<u32>,
    /// 1 for real tokens, 0 for padding
    pub attention_mask: Vec<u8>,
    /// subword token range strictly between the e1 markers
    pub e1_span: (usize, usize),
    /// subword token range strictly between the e2 markers
    pub e2_span: (usize, usize),
    /// count of non-pad tokens
    pub length: usize,
}

impl TokenizedInput {
    /// Ids of the real tokens only.
    pub fn real_ids(&self) -> &[u32] {
        &self.ids[..self.length]
    }
}

/// Tokenize an enriched sentence: `[CLS]`, subword pieces with atomic
/// markers, `[SEP]`, padded to `max_len`. The entity spans cover the pieces
/// strictly between each entity's open/close markers. Truncation keeps the
/// front of the sentence and fails if any marker or span would be cut off.
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> Result<TokenizedInput> {
    use crate::corpus::markers::{parse_marker, Slot};

    let mut ids: Vec<u32> = vec![vocab.cls_id()];
    // (slot, closing) -> token index
    let mut marker_pos: HashMap<(u8, bool), usize> = HashMap::new();

    for token in text.split_whitespace() {
        if let Some((closing, slot, _ty)) = parse_marker(token) {
            let slot_no = match slot {
                Slot::First => 1u8,
                Slot::Second => 2u8,
            };
            if marker_pos.insert((slot_no, closing), ids.len()).is_some() {
                return Err(Error::Tokenize(format!(
                    "duplicate marker token '{token}' in enriched text"
                )));
            }
            let id = vocab
                .id(token)
                .ok_or_else(|| Error::Tokenize(format!("marker '{token}' missing from vocab")))?;
            ids.push(id);
        } else {
            ids.extend(vocab.encode_token(token));
        }
    }
    ids.push(vocab.sep_id());

    let span = |slot: u8| -> Result<(usize, usize)> {
        let open = *marker_pos
            .get(&(slot, false))
            .ok_or_else(|| Error::Tokenize(format!("missing opening marker for e{slot}")))?;
        let close = *marker_pos
            .get(&(slot, true))
            .ok_or_else(|| Error::Tokenize(format!("missing closing marker for e{slot}")))?;
        if close <= open + 1 {
            return Err(Error::Tokenize(format!("empty span between e{slot} markers")));
        }
        Ok((open + 1, close))
    };
    let e1_span = span(1)?;
    let e2_span = span(2)?;

    if ids.len() > max_len {
        // keep [CLS] .. max_len-2, then [SEP]
        ids.truncate(max_len - 1);
        ids.push(vocab.sep_id());
        let survives = |span: (usize, usize)| span.1 <= max_len - 1;
        if !survives(e1_span) || !survives(e2_span) {
            return Err(Error::Tokenize(format!(
                "entity span truncated away at max_len {max_len}"
            )));
        }
        // closing markers must also survive
        for (slot, _) in [(1u8, ()), (2u8, ())] {
            let close = marker_pos[&(slot, true)];
            if close >= max_len - 1 {
                return Err(Error::Tokenize(format!(
                    "closing marker for e{slot} truncated away at max_len {max_len}"
                )));
            }
        }
    }

    let length = ids.len();
    let mut attention_mask = vec![1u8; length];
    ids.resize(max_len, vocab.pad_id());
    attention_mask.resize(max_len, 0);
    Ok(TokenizedInput { ids, attention_mask, e1_span, e2_span, length })
}

/// Rebuild text from token ids: continuation pieces are glued to the
/// previous piece, everything else is space-separated. `[CLS]`/`[SEP]`/pad
/// are dropped. Inverse of `tokenize` up to whitespace normalization.
pub fn detokenize(ids: &[u32], vocab: &Vocab) -> String {
    let mut words: Vec<String> = Vec::new();
    for &id in ids {
        if id == vocab.pad_id() || id == vocab.cls_id() || id == vocab.sep_id() {
            continue;
        }
        let piece = vocab.piece(id).unwrap_or(UNK);
        if let Some(cont) = piece.strip_prefix(CONTINUATION) {
            match words.last_mut() {
                Some(last) => last.push_str(cont),
                None => words.push(cont.to_string()),
            }
        } else {
            words.push(piece.to_string());
        }
    }
    words.join(" ")
}
