//! Reader for the DDIExtraction 2013 XML layout: document → sentence →
//! entity/pair elements, all payload in attributes. A purpose-built reader
//! (no XML crate in the dependency snapshot) that tracks line numbers so
//! parse errors can name their location. Only the constructs the corpus
//! uses are supported: elements, attributes, comments, prolog, character
//! references.

use std::fs;
use std::path::{Path, PathBuf};

use super::{DrugType, EntityMention, PairAnnotation, RelationLabel, SentenceRecord};
use crate::error::{Error, Result};

/// Parse result plus non-fatal notes (discontinuous offsets, surface
/// mismatches).
#[derive(Debug, Default)]
pub struct ParsedCorpus {
    pub records: Vec<SentenceRecord>,
    pub warnings: Vec<String>,
}

/// Parse one `.xml` file or a directory tree of them into sentence records.
pub fn parse_ddi_xml(path: &Path) -> Result<ParsedCorpus> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ));
    }
    let mut files = Vec::new();
    collect_xml_files(path, &mut files)?;
    files.sort();

    let mut out = ParsedCorpus::default();
    for file in files {
        let content = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let doc = XmlParser::new(&content, &file).parse()?;
        extract_sentences(&doc, &file, &mut out)?;
    }
    Ok(out)
}

fn collect_xml_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(path, e))?;
            collect_xml_files(&entry.path(), out)?;
        }
    } else if path.extension().is_some_and(|ext| ext == "xml") {
        out.push(path.to_path_buf());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// minimal DOM

#[derive(Debug)]
struct XmlElement {
    name: String,
    attrs: Vec<(String, String)>,
    children: Vec<XmlElement>,
    line: usize,
}

impl XmlElement {
    fn attr(&self, name: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    fn descendants<'a>(&'a self, name: &str, out: &mut Vec<&'a XmlElement>) {
        if self.name == name {
            out.push(self);
        }
        for child in &self.children {
            child.descendants(name, out);
        }
    }
}

struct XmlParser<'a> {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    path: &'a Path,
}

impl<'a> XmlParser<'a> {
    fn new(content: &str, path: &'a Path) -> XmlParser<'a> {
        XmlParser { chars: content.chars().collect(), pos: 0, line: 1, path }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::XmlParse { path: self.path.to_path_buf(), line: self.line, msg: msg.into() }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
        }
        Some(c)
    }

    fn starts_with(&self, s: &str) -> bool {
        self.chars[self.pos..].starts_with(&s.chars().collect::<Vec<_>>()[..])
    }

    fn skip(&mut self, n: usize) {
        for _ in 0..n {
            self.bump();
        }
    }

    fn skip_until(&mut self, terminator: &str) -> Result<()> {
        while self.pos < self.chars.len() {
            if self.starts_with(terminator) {
                self.skip(terminator.len());
                return Ok(());
            }
            self.bump();
        }
        Err(self.err(format!("unterminated construct, expected '{terminator}'")))
    }

    fn skip_whitespace(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    /// Parse the document and return its root element.
    fn parse(mut self) -> Result<XmlElement> {
        let mut root = None;
        while self.pos < self.chars.len() {
            self.skip_whitespace();
            if self.pos >= self.chars.len() {
                break;
            }
            if self.starts_with("<?") {
                self.skip_until("?>")?;
            } else if self.starts_with("<!--") {
                self.skip_until("-->")?;
            } else if self.starts_with("<!") {
                self.skip_until(">")?;
            } else if self.starts_with("</") {
                return Err(self.err("unexpected closing tag at document level"));
            } else if self.starts_with("<") {
                if root.is_some() {
                    return Err(self.err("multiple root elements"));
                }
                root = Some(self.parse_element()?);
            } else {
                return Err(self.err("text outside of the root element"));
            }
        }
        root.ok_or_else(|| self.err("no root element found"))
    }

    fn parse_element(&mut self) -> Result<XmlElement> {
        let line = self.line;
        self.bump(); // '<'
        let name = self.parse_name()?;
        let mut attrs = Vec::new();
        loop {
            self.skip_whitespace();
            match self.peek() {
                Some('/') => {
                    self.bump();
                    if self.bump() != Some('>') {
                        return Err(self.err("expected '>' after '/'"));
                    }
                    return Ok(XmlElement { name, attrs, children: Vec::new(), line });
                }
                Some('>') => {
                    self.bump();
                    let children = self.parse_children(&name)?;
                    return Ok(XmlElement { name, attrs, children, line });
                }
                Some(c) if c.is_alphanumeric() || c == '_' || c == ':' => {
                    attrs.push(self.parse_attr()?);
                }
                Some(c) => return Err(self.err(format!("unexpected character '{c}' in tag"))),
                None => return Err(self.err("unexpected end of file inside tag")),
            }
        }
    }

    fn parse_children(&mut self, parent: &str) -> Result<Vec<XmlElement>> {
        let mut children = Vec::new();
        loop {
            if self.pos >= self.chars.len() {
                return Err(self.err(format!("unclosed element '{parent}'")));
            }
            if self.starts_with("</") {
                self.skip(2);
                let name = self.parse_name()?;
                if name != parent {
                    return Err(self.err(format!("mismatched closing tag '{name}', expected '{parent}'")));
                }
                self.skip_whitespace();
                if self.bump() != Some('>') {
                    return Err(self.err("expected '>' in closing tag"));
                }
                return Ok(children);
            } else if self.starts_with("<!--") {
                self.skip_until("-->")?;
            } else if self.starts_with("<") {
                children.push(self.parse_element()?);
            } else {
                self.bump(); // text content; the corpus keeps payload in attributes
            }
        }
    }

    fn parse_name(&mut self) -> Result<String> {
        let mut name = String::new();
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '_' || c == '-' || c == ':' || c == '.' {
                name.push(c);
                self.bump();
            } else {
                break;
            }
        }
        if name.is_empty() {
            return Err(self.err("empty element name"));
        }
        Ok(name)
    }

    fn parse_attr(&mut self) -> Result<(String, String)> {
        let name = self.parse_name()?;
        self.skip_whitespace();
        if self.bump() != Some('=') {
            return Err(self.err(format!("expected '=' after attribute '{name}'")));
        }
        self.skip_whitespace();
        let quote = match self.bump() {
            Some(q @ ('"' | '\'')) => q,
            _ => return Err(self.err(format!("expected quoted value for attribute '{name}'"))),
        };
        let mut raw = String::new();
        loop {
            match self.bump() {
                Some(c) if c == quote => break,
                Some(c) => raw.push(c),
                None => return Err(self.err(format!("unterminated value for attribute '{name}'"))),
            }
        }
        Ok((name, self.unescape(&raw)?))
    }

    fn unescape(&self, raw: &str) -> Result<String> {
        let mut out = String::with_capacity(raw.len());
        let mut chars = raw.chars().peekable();
        while let Some(c) = chars.next() {
            if c != '&' {
                out.push(c);
                continue;
            }
            let mut entity = String::new();
            for e in chars.by_ref() {
                if e == ';' {
                    break;
                }
                entity.push(e);
            }
            match entity.as_str() {
                "lt" => out.push('<'),
                "gt" => out.push('>'),
                "amp" => out.push('&'),
                "quot" => out.push('"'),
                "apos" => out.push('\''),
                other => {
                    let code = other
                        .strip_prefix("#x")
                        .map(|h| u32::from_str_radix(h, 16))
                        .or_else(|| other.strip_prefix('#').map(|d| d.parse::<u32>()))
                        .transpose()
                        .ok()
                        .flatten();
                    match code.and_then(char::from_u32) {
                        Some(ch) => out.push(ch),
                        None => return Err(self.err(format!("unknown entity '&{other};'"))),
                    }
                }
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// DDI schema interpretation

fn extract_sentences(root: &XmlElement, file: &Path, out: &mut ParsedCorpus) -> Result<()> {
    let mut sentences = Vec::new();
    root.descendants("sentence", &mut sentences);
    for sent in sentences {
        let sid = required_attr(sent, "id", file)?.to_string();
        let text = required_attr(sent, "text", file)?;

        let mut entities = Vec::new();
        for el in sent.children.iter().filter(|c| c.name == "entity") {
            let id = required_attr(el, "id", file)?.to_string();
            let offsets = required_attr(el, "charOffset", file)?;
            let ty = DrugType::parse(required_attr(el, "type", file)?)?;
            let declared = el.attr("text").unwrap_or_default();

            let (start, end) = resolve_char_offset(offsets, &id, file, out)?;
            let n_chars = text.chars().count();
            if end > n_chars {
                return Err(Error::Validation(format!(
                    "entity '{id}': charOffset {offsets} exceeds sentence length {n_chars}"
                )));
            }
            let surface = super::char_slice(text, start, end);
            if !declared.is_empty() && declared != surface {
                out.warnings.push(format!(
                    "entity '{id}': declared text '{declared}' differs from span '{surface}'; span text used"
                ));
            }
            entities.push(EntityMention { id, surface, drug_type: ty, start, end });
        }

        let mut pairs = Vec::new();
        for el in sent.children.iter().filter(|c| c.name == "pair") {
            let e1_id = required_attr(el, "e1", file)?.to_string();
            let e2_id = required_attr(el, "e2", file)?.to_string();
            let ddi = el.attr("ddi").unwrap_or("false");
            let label = if ddi.eq_ignore_ascii_case("true") {
                match el.attr("type") {
                    Some(t) => RelationLabel::parse(t)?,
                    // a handful of corpus pairs are ddi="true" with no type
                    None => {
                        out.warnings.push(format!(
                            "pair {e1_id}/{e2_id}: ddi=\"true\" without type; treated as int"
                        ));
                        RelationLabel::Int
                    }
                }
            } else {
                RelationLabel::Negative
            };
            pairs.push(PairAnnotation { e1_id, e2_id, label });
        }

        let record = SentenceRecord { id: sid, text: text.to_string(), entities, pairs };
        record.validate()?;
        out.records.push(record);
    }
    Ok(())
}

fn required_attr<'e>(el: &'e XmlElement, name: &str, file: &Path) -> Result<&'e str> {
    el.attr(name).ok_or_else(|| Error::XmlParse {
        path: file.to_path_buf(),
        line: el.line,
        msg: format!("<{}> missing required attribute '{}'", el.name, name),
    })
}

/// `charOffset` is "start-end" with an inclusive end; discontinuous mentions
/// are semicolon-separated and only the first segment is used (logged).
fn resolve_char_offset(
    offsets: &str,
    entity_id: &str,
    file: &Path,
    out: &mut ParsedCorpus,
) -> Result<(usize, usize)> {
    let first = match offsets.split_once(';') {
        Some((first, _)) => {
            out.warnings.push(format!(
                "{}: entity '{entity_id}' has discontinuous offsets '{offsets}'; first segment used",
                file.display()
            ));
            first
        }
        None => offsets,
    };
    let (start, end) = first
        .split_once('-')
        .ok_or_else(|| Error::Validation(format!("entity '{entity_id}': malformed charOffset '{offsets}'")))?;
    let start: usize = start
        .trim()
        .parse()
        .map_err(|_| Error::Validation(format!("entity '{entity_id}': bad offset start '{start}'")))?;
    let end: usize = end
        .trim()
        .parse()
        .map_err(|_| Error::Validation(format!("entity '{entity_id}': bad offset end '{end}'")))?;
    Ok((start, end + 1))
}
