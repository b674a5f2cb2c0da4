use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DialogError;

/// One template: interchangeable text variants plus placeholder defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub variants: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub defaults: BTreeMap<String, String>,
}

/// Template id → variants with `{placeholder}` slots. `{{` and `}}` are
/// literal braces.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TemplateStore {
    templates: BTreeMap<String, Template>,
}

/// Picks a variant deterministically from a seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariantSelector {
    pub seed: u64,
}

impl VariantSelector {
    pub fn pick(&self, n: usize) -> usize {
        if n <= 1 {
            return 0;
        }
        ChaCha8Rng::seed_from_u64(self.seed).random_range(0..n)
    }
}

impl TemplateStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses a TOML document of `[template_id]` tables with `variants` and
    /// an optional `defaults` table. Every variant must parse.
    pub fn from_toml(doc: &str) -> Result<Self, DialogError> {
        let store: TemplateStore = toml::from_str(doc).map_err(|e| DialogError::Parse(e.to_string()))?;
        for (id, t) in &store.templates {
            if t.variants.is_empty() {
                return Err(DialogError::Parse(format!("template {id:?} has no variants")));
            }
            for v in &t.variants {
                parse_segments(v).map_err(|m| DialogError::Parse(format!("template {id:?}: {m}")))?;
            }
        }
        Ok(store)
    }

    pub fn insert(&mut self, id: &str, variants: &[&str]) -> &mut Template {
        let t = self.templates.entry(id.to_owned()).or_default();
        t.variants = variants.iter().map(|v| (*v).to_owned()).collect();
        t
    }

    pub fn get(&self, id: &str) -> Option<&Template> {
        self.templates.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.templates.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

enum Segment<'a> {
    Text(&'a str),
    Brace(char),
    Placeholder(&'a str),
}

fn parse_segments(s: &str) -> Result<Vec<Segment<'_>>, String> {
    let mut out = Vec::new();
    let mut rest = s;
    while !rest.is_empty() {
        let Some(pos) = rest.find(['{', '}']) else {
            out.push(Segment::Text(rest));
            break;
        };
        if pos > 0 {
            out.push(Segment::Text(&rest[..pos]));
        }
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("{{") {
            out.push(Segment::Brace('{'));
            rest = after;
        } else if let Some(after) = tail.strip_prefix("}}") {
            out.push(Segment::Brace('}'));
            rest = after;
        } else if tail.starts_with('}') {
            return Err("unmatched '}'".into());
        } else {
            let end = tail.find('}').ok_or("unclosed placeholder")?;
            let name = &tail[1..end];
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(format!("bad placeholder name {name:?}"));
            }
            out.push(Segment::Placeholder(name));
            rest = &tail[end + 1..];
        }
    }
    Ok(out)
}

/// Renders one variant of `template_id`, chosen by `selector`, filling
/// placeholders from `substitutions` and then from the template defaults.
pub fn render_template(
    store: &TemplateStore,
    template_id: &str,
    substitutions: &BTreeMap<String, String>,
    selector: VariantSelector,
) -> Result<String, DialogError> {
    let t = store.get(template_id).ok_or_else(|| DialogError::UnknownTemplate(template_id.to_owned()))?;
    let variant = &t.variants[selector.pick(t.variants.len())];
    let segments = parse_segments(variant).map_err(DialogError::Parse)?;
    let mut out = String::with_capacity(variant.len());
    for seg in segments {
        match seg {
            Segment::Text(s) => out.push_str(s),
            Segment::Brace(c) => out.push(c),
            Segment::Placeholder(name) => {
                let value = substitutions.get(name).or_else(|| t.defaults.get(name)).ok_or_else(|| {
                    DialogError::UnresolvedPlaceholder {
                        template: template_id.to_owned(),
                        placeholder: name.to_owned(),
                    }
                })?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}
