//! Completeness of generated documentation: section presence plus entity
//! coverage, averaged.
//!
//! A section header is a line made of optional markdown hashes, optional bold
//! markers, one of the section's names, an optional parenthesised note and
//! then either the end of the line or a colon followed by anything. Matching
//! ignores case.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::{Mutex, OnceLock};

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::source::{ComponentKind, Granularity, RepoTraits, RepositoryModel, SourceTraits, UnitKey};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Section {
    Summary,
    Description,
    Returns,
    Arguments,
    Exceptions,
    SideEffects,
    ControlFlow,
    UsageExamples,
    Tree,
    Role,
    Components,
    PublicApi,
    Dependencies,
    Purpose,
    Architecture,
    EntryPoints,
    CoreFeatures,
    Configuration,
    ExtensionPoints,
}

impl Section {
    /// Accepted header spellings; the first is the canonical one.
    pub fn names(self) -> &'static [&'static str] {
        match self {
            Section::Summary => &["Summary"],
            Section::Description => &["Description"],
            Section::Returns => &["Returns", "Return", "Yields"],
            Section::Arguments => &["Arguments", "Args", "Parameters"],
            Section::Exceptions => &["Exceptions", "Raises"],
            Section::SideEffects => &["Side Effects"],
            Section::ControlFlow => &["Control Flow"],
            Section::UsageExamples => &["Usage Examples", "Examples", "Example", "Usage"],
            Section::Tree => &["Tree", "Module Structure", "Repository Structure", "Directory Structure"],
            Section::Role => &["Role"],
            Section::Components => &["Components"],
            Section::PublicApi => &["Public API"],
            Section::Dependencies => &["Dependencies"],
            Section::Purpose => &["Purpose"],
            Section::Architecture => &["Architecture"],
            Section::EntryPoints => &["Entry Points"],
            Section::CoreFeatures => &["Core Features"],
            Section::Configuration => &["Configuration"],
            Section::ExtensionPoints => &["Extension Points"],
        }
    }

    fn build_pattern(self) -> Regex {
        let names: Vec<String> = self.names().iter().map(|n| regex::escape(n).replace(' ', r"[ \t]+")).collect();
        let source = format!(
            r"^[ \t]*(?:#{{1,6}}[ \t]*)?(?:\*\*|__)?[ \t]*(?:{})[ \t]*(?:\([^)\n]*\))?[ \t]*(?:\*\*|__)?[ \t]*(?::.*)?$",
            names.join("|")
        );
        RegexBuilder::new(&source)
            .case_insensitive(true)
            .multi_line(true)
            .build()
            .expect("static section pattern")
    }

    pub fn present_in(self, doc: &str) -> bool {
        static PATTERNS: OnceLock<Mutex<HashMap<Section, Regex>>> = OnceLock::new();
        let mut cache = PATTERNS.get_or_init(Default::default).lock().expect("pattern cache");
        cache.entry(self).or_insert_with(|| self.build_pattern()).is_match(doc)
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.names()[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocKind {
    Function,
    Method,
    Class,
    Module,
    Repo,
}

impl From<ComponentKind> for DocKind {
    fn from(kind: ComponentKind) -> Self {
        match kind {
            ComponentKind::Function => DocKind::Function,
            ComponentKind::Method => DocKind::Method,
            ComponentKind::Class => DocKind::Class,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionSchema {
    pub required: &'static [Section],
    pub conditional: &'static [Section],
}

pub fn schema(kind: DocKind) -> SectionSchema {
    use Section::*;
    match kind {
        DocKind::Function | DocKind::Method => SectionSchema {
            required: &[Summary, Description, Returns],
            conditional: &[Arguments, Exceptions, SideEffects, ControlFlow, UsageExamples],
        },
        DocKind::Class => SectionSchema {
            required: &[Summary, Description, Returns],
            conditional: &[Arguments, Exceptions, UsageExamples, SideEffects],
        },
        DocKind::Module => SectionSchema {
            required: &[Tree, Role, Description, Components, PublicApi, Dependencies],
            conditional: &[],
        },
        DocKind::Repo => SectionSchema {
            required: &[Tree, Purpose, Architecture, EntryPoints, CoreFeatures, Dependencies],
            conditional: &[Configuration, ExtensionPoints],
        },
    }
}

/// Which conditional sections a unit is expected to have.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Applicability {
    pub arguments: bool,
    pub exceptions: bool,
    pub side_effects: bool,
    pub control_flow: bool,
    pub usage_examples: bool,
    pub configuration: bool,
    pub extension_points: bool,
}

impl Applicability {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn applies(&self, section: Section) -> bool {
        match section {
            Section::Arguments => self.arguments,
            Section::Exceptions => self.exceptions,
            Section::SideEffects => self.side_effects,
            Section::ControlFlow => self.control_flow,
            Section::UsageExamples => self.usage_examples,
            Section::Configuration => self.configuration,
            Section::ExtensionPoints => self.extension_points,
            _ => false,
        }
    }
}

impl From<SourceTraits> for Applicability {
    fn from(t: SourceTraits) -> Self {
        Self {
            arguments: t.has_parameters,
            exceptions: t.raises,
            side_effects: t.side_effects,
            control_flow: t.control_flow,
            usage_examples: t.public && t.nontrivial,
            ..Self::default()
        }
    }
}

impl From<RepoTraits> for Applicability {
    fn from(t: RepoTraits) -> Self {
        Self {
            configuration: t.has_configuration,
            extension_points: t.has_extension_points,
            ..Self::default()
        }
    }
}

/// Present sections over expected sections; applicable conditionals count as
/// expected, the others are ignored.
pub fn section_presence(doc: &str, kind: DocKind, applicability: &Applicability) -> f64 {
    let schema = schema(kind);
    let expected: Vec<Section> = schema
        .required
        .iter()
        .copied()
        .chain(schema.conditional.iter().copied().filter(|s| applicability.applies(*s)))
        .collect();
    let present = expected.iter().filter(|s| s.present_in(doc)).count();
    present as f64 / expected.len() as f64
}

/// Sections of the schema missing from a document.
pub fn missing_sections(doc: &str, kind: DocKind, applicability: &Applicability) -> Vec<Section> {
    let schema = schema(kind);
    schema
        .required
        .iter()
        .chain(schema.conditional.iter().filter(|s| applicability.applies(**s)))
        .copied()
        .filter(|s| !s.present_in(doc))
        .collect()
}

/// Share of entities mentioned as whole words anywhere in the document,
/// code blocks and diagrams included. An empty set counts as fully covered.
pub fn entity_coverage(doc: &str, entities: &BTreeSet<String>) -> f64 {
    if entities.is_empty() {
        return 1.0;
    }
    let mentioned = entities.iter().filter(|e| mentions(doc, e)).count();
    mentioned as f64 / entities.len() as f64
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn mentions(doc: &str, name: &str) -> bool {
    !name.is_empty()
        && doc.match_indices(name).any(|(i, _)| {
            let before = doc[..i].chars().next_back();
            let after = doc[i + name.len()..].chars().next();
            !before.is_some_and(is_word) && !after.is_some_and(is_word)
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletenessScore {
    pub section: f64,
    pub coverage: f64,
    pub combined: f64,
}

impl CompletenessScore {
    pub fn new(section: f64, coverage: f64) -> Self {
        Self {
            section,
            coverage,
            combined: (section + coverage) / 2.0,
        }
    }
}

/// Kind and applicability of a unit of the repository model.
pub fn unit_profile(unit: &UnitKey, model: &RepositoryModel) -> Result<(DocKind, Applicability)> {
    match unit.granularity {
        Granularity::Component => {
            let c = model
                .component(unit.id.as_str())
                .ok_or_else(|| Error::UnknownUnit(unit.to_string()))?;
            Ok((c.kind.into(), c.traits.into()))
        }
        Granularity::Module => {
            model
                .module(unit.id.as_str())
                .ok_or_else(|| Error::UnknownUnit(unit.to_string()))?;
            Ok((DocKind::Module, Applicability::none()))
        }
        Granularity::Repo => {
            if unit != &model.repo_key() {
                return Err(Error::UnknownUnit(unit.to_string()));
            }
            Ok((DocKind::Repo, model.repo.traits.into()))
        }
    }
}

pub fn completeness(doc: &str, unit: &UnitKey, model: &RepositoryModel) -> Result<CompletenessScore> {
    let (kind, applicability) = unit_profile(unit, model)?;
    let entities = crate::source::extract_entities(unit, model)?;
    Ok(CompletenessScore::new(
        section_presence(doc, kind, &applicability),
        entity_coverage(doc, &entities.names),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_variants_match() {
        for doc in [
            "## Returns:",
            "### returns",
            "**Returns:** the value",
            "Returns:",
            "# RETURNS",
            "## Returns (if any):",
            "  ## **Returns**:",
        ] {
            assert!(Section::Returns.present_in(doc), "{doc}");
        }
        for doc in ["It returns nothing.", "## Returned values", "Returns the sum of a and b"] {
            assert!(!Section::Returns.present_in(doc), "{doc}");
        }
        assert!(Section::Arguments.present_in("## Args:"));
        assert!(Section::Exceptions.present_in("## Raises:"));
        assert!(Section::UsageExamples.present_in("## Examples:"));
        assert!(Section::Tree.present_in("## Module Structure"));
        assert!(Section::PublicApi.present_in("##   public   api:"));
    }

    #[test]
    fn schemas_by_kind() {
        assert_eq!(schema(DocKind::Class).required, &[Section::Summary, Section::Description, Section::Returns]);
        assert_eq!(schema(DocKind::Module).required.len(), 6);
        assert!(schema(DocKind::Module).conditional.is_empty());
        assert_eq!(schema(DocKind::Repo).conditional, &[Section::Configuration, Section::ExtensionPoints]);
    }

    #[test]
    fn applicability_follows_traits() {
        let traits = SourceTraits {
            has_parameters: true,
            public: true,
            nontrivial: false,
            ..Default::default()
        };
        let a = Applicability::from(traits);
        assert!(a.applies(Section::Arguments));
        assert!(!a.applies(Section::UsageExamples));
        assert!(!a.applies(Section::Summary));
    }
}
