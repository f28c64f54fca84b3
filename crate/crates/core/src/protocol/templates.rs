//! Notification template catalog.
//!
//! File format: one template per line, `<template_id>\t<lang>\t<text>`.
//! Blank lines and lines starting with `#` are ignored. Placeholders are
//! written `{name}` with `name` made of `[a-z0-9_]`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{Language, ProtocolError};

/// Templates shipped with the server.
pub const DEFAULT_TEMPLATES: &str = include_str!("../../data/templates.tsv");

pub const TEMPLATE_IDS: [&str; 9] = [
    "registration_ack",
    "first_review",
    "review_changed",
    "weekly_advice",
    "help_ack",
    "notify_husband",
    "notify_hospital",
    "notify_doctor",
    "registration_prompt",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutboundNotification {
    pub recipient_phone: String,
    pub template_id: String,
    pub language: Language,
    pub rendered: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Template {
    pieces: Vec<Piece>,
}

impl Template {
    fn compile(text: &str) -> Template {
        let mut pieces = Vec::new();
        let mut literal = String::new();
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            let name_len = after.find('}').filter(|&n| {
                n > 0
                    && after[..n]
                        .bytes()
                        .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
            });
            match name_len {
                Some(n) => {
                    literal.push_str(&rest[..open]);
                    if !literal.is_empty() {
                        pieces.push(Piece::Text(std::mem::take(&mut literal)));
                    }
                    pieces.push(Piece::Slot(after[..n].to_string()));
                    rest = &after[n + 1..];
                }
                None => {
                    literal.push_str(&rest[..=open]);
                    rest = after;
                }
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            pieces.push(Piece::Text(literal));
        }
        Template { pieces }
    }

    fn placeholders(&self) -> impl Iterator<Item = &str> {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Slot(s) => Some(s.as_str()),
            Piece::Text(_) => None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TemplateCatalog {
    templates: HashMap<(String, Language), Template>,
}

impl TemplateCatalog {
    /// Parses catalog text. Later lines override earlier ones.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut templates = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.splitn(3, '\t');
            let (Some(id), Some(lang), Some(body)) = (cols.next(), cols.next(), cols.next()) else {
                return Err(format!("line {}: expected 3 tab-separated columns", i + 1));
            };
            let language: Language = lang.parse().map_err(|e| format!("line {}: {e}", i + 1))?;
            if id.is_empty() || body.is_empty() {
                return Err(format!("line {}: empty template id or text", i + 1));
            }
            templates.insert((id.to_string(), language), Template::compile(body));
        }
        Ok(TemplateCatalog { templates })
    }

    pub fn contains(&self, template_id: &str, language: Language) -> bool {
        self.templates.contains_key(&(template_id.to_string(), language))
    }

    /// Placeholder names used by a template, in order of appearance.
    pub fn placeholders(&self, template_id: &str, language: Language) -> Option<Vec<String>> {
        self.templates
            .get(&(template_id.to_string(), language))
            .map(|t| t.placeholders().map(str::to_string).collect())
    }

    /// Substitutes every placeholder. Extra bindings are ignored.
    pub fn render(
        &self,
        template_id: &str,
        language: Language,
        bindings: &BTreeMap<&str, String>,
    ) -> Result<String, ProtocolError> {
        let template = self
            .templates
            .get(&(template_id.to_string(), language))
            .ok_or_else(|| ProtocolError::MissingTemplate {
                template_id: template_id.to_string(),
                language,
            })?;
        let mut out = String::new();
        for piece in &template.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => {
                    let value = bindings
                        .get(name.as_str())
                        .ok_or_else(|| ProtocolError::UnboundPlaceholder {
                            template_id: template_id.to_string(),
                            placeholder: name.clone(),
                        })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }

    pub fn render_notification(
        &self,
        recipient_phone: &str,
        template_id: &str,
        language: Language,
        bindings: &BTreeMap<&str, String>,
    ) -> Result<OutboundNotification, ProtocolError> {
        Ok(OutboundNotification {
            recipient_phone: recipient_phone.to_string(),
            template_id: template_id.to_string(),
            language,
            rendered: self.render(template_id, language, bindings)?,
        })
    }
}

impl Default for TemplateCatalog {
    fn default() -> Self {
        TemplateCatalog::parse(DEFAULT_TEMPLATES).expect("shipped templates parse")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bindings(pairs: &[(&'static str, &str)]) -> BTreeMap<&'static str, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn defaults_cover_every_template_in_every_language() {
        let cat = TemplateCatalog::default();
        for id in TEMPLATE_IDS {
            for lang in Language::ALL {
                assert!(cat.contains(id, lang), "{id}/{lang}");
            }
            // Every language asks for the same bindings.
            let mut en = cat.placeholders(id, Language::En).unwrap();
            en.sort();
            for lang in [Language::Ku, Language::Ar] {
                let mut other = cat.placeholders(id, lang).unwrap();
                other.sort();
                assert_eq!(other, en, "{id}/{lang}");
            }
        }
    }

    #[test]
    fn first_review_substitutes() {
        let cat = TemplateCatalog::default();
        let b = bindings(&[("center", "X"), ("date", "2014-02-03"), ("time", "09:00")]);
        let en = cat.render("first_review", Language::En, &b).unwrap();
        assert!(en.contains('X') && en.contains("2014-02-03"));
        let ku = cat.render("first_review", Language::Ku, &b).unwrap();
        assert_ne!(en, ku);
        assert!(ku.contains('X') && ku.contains("2014-02-03"));
        assert_eq!(en, cat.render("first_review", Language::En, &b).unwrap());
    }

    #[test]
    fn unbound_placeholder() {
        let cat = TemplateCatalog::default();
        let err = cat.render("help_ack", Language::En, &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, ProtocolError::UnboundPlaceholder { .. }));
    }

    #[test]
    fn missing_template() {
        let cat = TemplateCatalog::default();
        assert!(matches!(
            cat.render("nope", Language::En, &BTreeMap::new()),
            Err(ProtocolError::MissingTemplate { .. })
        ));
    }

    #[test]
    fn braces_that_are_not_placeholders_stay_literal() {
        let cat = TemplateCatalog::parse("t\ten\t{} {Bad} {ok} {unclosed").unwrap();
        assert_eq!(
            cat.render("t", Language::En, &bindings(&[("ok", "1")])).unwrap(),
            "{} {Bad} 1 {unclosed"
        );
    }

    #[test]
    fn catalog_errors() {
        assert!(TemplateCatalog::parse("only\ttwo").is_err());
        assert!(TemplateCatalog::parse("t\tfr\ttext").is_err());
    }
}
