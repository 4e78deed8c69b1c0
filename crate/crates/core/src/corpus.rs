//! Labeled text records and their numeric label encodings.
//!
//! A record's authorship is stored as a human-readable [`AuthorshipLabel`]
//! and converted on demand into the `(x, y, z)` triple used by the
//! contrastive objective:
//!
//! | source  | x | y | z            |
//! |---------|---|---|--------------|
//! | llm     | 0 | 1 | family code  |
//! | human   | 1 | 0 | none         |
//! | collab  | 1 | 1 | family code  |
//!
//! `x = 0` iff the text is fully machine-generated, `y = 0` iff it is fully
//! human-written. Fully-LLM records carry `y = 1`; every consumer gates on
//! `x` first, so that value is never interpreted on its own.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Who wrote a text, at the coarsest granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Human,
    Llm,
    Collab,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollabMode {
    Polished,
    Continued,
    Paraphrased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// The three-way decision the detector makes. The declaration order is the
/// tie-breaking order used by fuzzy voting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuthorClass {
    Llm,
    Collab,
    Human,
}

impl AuthorClass {
    pub const ALL: [AuthorClass; 3] = [AuthorClass::Llm, AuthorClass::Collab, AuthorClass::Human];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Degree of human involvement: llm 0, collab 1, human 2.
    pub fn ordinal(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            AuthorClass::Llm => "llm",
            AuthorClass::Collab => "collab",
            AuthorClass::Human => "human",
        }
    }
}

impl fmt::Display for AuthorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<Source> for AuthorClass {
    fn from(s: Source) -> Self {
        match s {
            Source::Human => AuthorClass::Human,
            Source::Llm => AuthorClass::Llm,
            Source::Collab => AuthorClass::Collab,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AuthorshipLabel {
    pub source: Source,
    pub family: Option<String>,
    pub collab_mode: Option<CollabMode>,
}

impl AuthorshipLabel {
    pub fn human() -> Self {
        Self { source: Source::Human, family: None, collab_mode: None }
    }

    pub fn llm(family: impl Into<String>) -> Self {
        Self { source: Source::Llm, family: Some(family.into()), collab_mode: None }
    }

    pub fn collab(family: impl Into<String>, mode: Option<CollabMode>) -> Self {
        Self { source: Source::Collab, family: Some(family.into()), collab_mode: mode }
    }

    pub fn is_valid(&self) -> bool {
        match self.source {
            Source::Human => self.family.is_none() && self.collab_mode.is_none(),
            Source::Llm => self.family.is_some() && self.collab_mode.is_none(),
            Source::Collab => self.family.is_some(),
        }
    }

    pub fn class(&self) -> AuthorClass {
        self.source.into()
    }
}

/// Compact numeric form of a label. `z` is `None` for human texts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabelCodes {
    pub x: u8,
    pub y: u8,
    pub z: Option<u16>,
}

impl LabelCodes {
    /// On-disk sentinel for an absent family.
    pub const NO_FAMILY: u16 = 0xFFFF;

    pub fn llm(z: u16) -> Self {
        Self { x: 0, y: 1, z: Some(z) }
    }

    pub fn human() -> Self {
        Self { x: 1, y: 0, z: None }
    }

    pub fn collab(z: u16) -> Self {
        Self { x: 1, y: 1, z: Some(z) }
    }

    pub fn class(&self) -> AuthorClass {
        match (self.x, self.y) {
            (0, _) => AuthorClass::Llm,
            (_, 0) => AuthorClass::Human,
            _ => AuthorClass::Collab,
        }
    }

    pub fn z_raw(&self) -> u16 {
        self.z.unwrap_or(Self::NO_FAMILY)
    }

    /// Rebuilds codes from their stored bytes, rejecting combinations no
    /// valid label maps to.
    pub fn from_raw(x: u8, y: u8, z: u16) -> Result<Self> {
        let z = (z != Self::NO_FAMILY).then_some(z);
        let codes = Self { x, y, z };
        let ok = match (x, y) {
            (0, 1) | (1, 1) => z.is_some(),
            (1, 0) => z.is_none(),
            _ => false,
        };
        if ok {
            Ok(codes)
        } else {
            Err(Error::CorruptRecord(format!("invalid label codes ({x}, {y}, {:#06x})", codes.z_raw())))
        }
    }
}

/// Bijection between family names and small integer codes, assigned in
/// first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FamilyTable {
    names: Vec<String>,
}

impl FamilyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut table = Self::new();
        for name in names {
            let name = name.into();
            if table.code(&name).is_some() {
                return Err(Error::DuplicateId(name));
            }
            table.intern(&name)?;
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn code(&self, name: &str) -> Option<u16> {
        self.names.iter().position(|n| n == name).map(|i| i as u16)
    }

    pub fn name(&self, code: u16) -> Option<&str> {
        self.names.get(code as usize).map(String::as_str)
    }

    /// Returns the code for `name`, assigning the next free one if needed.
    pub fn intern(&mut self, name: &str) -> Result<u16> {
        if let Some(code) = self.code(name) {
            return Ok(code);
        }
        if self.names.len() >= LabelCodes::NO_FAMILY as usize {
            return Err(Error::ConfigInvalid("too many families".into()));
        }
        self.names.push(name.to_owned());
        Ok((self.names.len() - 1) as u16)
    }
}

/// Converts a label into its `(x, y, z)` triple.
pub fn label_to_codes(label: &AuthorshipLabel, families: &FamilyTable) -> Result<LabelCodes> {
    let z = |fam: &Option<String>| -> Result<u16> {
        let name = fam.as_deref().ok_or_else(|| Error::UnknownFamily(String::new()))?;
        families.code(name).ok_or_else(|| Error::UnknownFamily(name.to_owned()))
    };
    Ok(match label.source {
        Source::Llm => LabelCodes::llm(z(&label.family)?),
        Source::Human => LabelCodes::human(),
        Source::Collab => LabelCodes::collab(z(&label.family)?),
    })
}

/// Ordinal encoding of human involvement used by the regression metrics.
pub fn ordinal_code(label: &AuthorshipLabel) -> u8 {
    label.class().ordinal()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
    pub lang: String,
    pub domain: String,
    pub label: AuthorshipLabel,
    pub split: Split,
}

/// One line of the corpus file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    id: String,
    text: String,
    lang: String,
    domain: String,
    source: Source,
    #[serde(default)]
    family: Option<String>,
    #[serde(default)]
    collab_mode: Option<CollabMode>,
    split: Split,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusDataset {
    pub records: Vec<TextRecord>,
    pub families: FamilyTable,
}

impl CorpusDataset {
    /// Validates records and builds the family table in first-appearance
    /// order.
    pub fn from_records(records: Vec<TextRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        let mut families = FamilyTable::new();
        for r in &records {
            validate_record(r)?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            if let Some(f) = &r.label.family {
                families.intern(f)?;
            }
        }
        Ok(Self { records, families })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn codes(&self, record: &TextRecord) -> LabelCodes {
        label_to_codes(&record.label, &self.families).expect("family table covers all records")
    }

    /// Indices of the records in `split`, in file order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        let mut families = FamilyTable::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let wire: WireRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: lineno + 1,
                reason: e.to_string(),
            })?;
            let record = TextRecord {
                label: AuthorshipLabel {
                    source: wire.source,
                    family: wire.family,
                    collab_mode: wire.collab_mode,
                },
                id: wire.id,
                text: wire.text,
                lang: wire.lang,
                domain: wire.domain,
                split: wire.split,
            };
            validate_record(&record)?;
            if !seen.insert(record.id.clone()) {
                return Err(Error::DuplicateId(record.id));
            }
            if let Some(f) = &record.label.family {
                families.intern(f)?;
            }
            records.push(record);
        }
        Ok(Self { records, families })
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            let wire = WireRecord {
                id: r.id.clone(),
                text: r.text.clone(),
                lang: r.lang.clone(),
                domain: r.domain.clone(),
                source: r.label.source,
                family: r.label.family.clone(),
                collab_mode: r.label.collab_mode,
                split: r.split,
            };
            serde_json::to_writer(&mut out, &wire)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}

fn validate_record(r: &TextRecord) -> Result<()> {
    if !r.label.is_valid() {
        return Err(Error::InvalidLabelCombination(r.id.clone()));
    }
    if r.text.trim().is_empty() {
        return Err(Error::EmptyText(r.id.clone()));
    }
    Ok(())
}

/// Reads a corpus file: one JSON object per line.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<CorpusDataset> {
    let file = std::fs::File::open(path)?;
    CorpusDataset::parse(BufReader::new(file))
}
