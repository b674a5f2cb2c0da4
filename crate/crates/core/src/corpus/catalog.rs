use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::routing::{DepartmentMap, HeuristicLookup};
use crate::tabular::{Column, FeatureSchema};

const BUILTIN: &str = include_str!("../../config/catalog.toml");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Persona {
    Agent,
    Owner,
    Tenant,
    ProspectiveTenant,
    Photographer,
    Inspector,
}

impl Persona {
    pub const ALL: [Persona; 6] = [
        Persona::Agent,
        Persona::Owner,
        Persona::Tenant,
        Persona::ProspectiveTenant,
        Persona::Photographer,
        Persona::Inspector,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Persona::Agent => "agent",
            Persona::Owner => "owner",
            Persona::Tenant => "tenant",
            Persona::ProspectiveTenant => "prospective_tenant",
            Persona::Photographer => "photographer",
            Persona::Inspector => "inspector",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepartmentEntry {
    pub id: String,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub templates: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasonEntry {
    pub code: String,
    pub description: String,
    pub department: String,
    /// Ambiguity group whose shared templates this reason may use.
    pub group: String,
    pub persona: Persona,
    /// The automatic message most often sent before this kind of contact.
    pub auto_msg: String,
    pub templates: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextPhrases {
    pub no_context: Vec<String>,
    pub low_value: Vec<String>,
    pub returning_client: Vec<String>,
    pub greetings: Vec<String>,
}

/// Departments, reasons (most frequent first), ambiguity groups and the
/// phrase banks the generator draws from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub heuristic_default: String,
    pub departments: Vec<DepartmentEntry>,
    pub fillers: BTreeMap<String, Vec<String>>,
    pub groups: BTreeMap<String, GroupEntry>,
    pub reasons: Vec<ReasonEntry>,
    pub context: ContextPhrases,
}

fn placeholders(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start..].find('}') else { break };
        out.push(&rest[start + 1..start + len]);
        rest = &rest[start + len + 1..];
    }
    out
}

impl Catalog {
    /// The catalog shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN).expect("bundled catalog is valid")
    }

    pub fn from_toml(doc: &str) -> Result<Self, CorpusError> {
        let c: Catalog = toml::from_str(doc).map_err(|e| CorpusError::Catalog(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::Catalog(m));
        let depts: BTreeSet<&str> = self.departments.iter().map(|d| d.id.as_str()).collect();
        if depts.len() != self.departments.len() {
            return bad("duplicate department id".into());
        }
        if !depts.contains(self.heuristic_default.as_str()) {
            return bad(format!("unknown heuristic default {:?}", self.heuristic_default));
        }
        if self.reasons.is_empty() {
            return bad("no reasons".into());
        }
        let mut codes = BTreeSet::new();
        let check_templates = |owner: &str, ts: &[String]| -> Result<(), CorpusError> {
            if ts.is_empty() {
                return Err(CorpusError::Catalog(format!("{owner} has no templates")));
            }
            for t in ts {
                if let Some(p) = placeholders(t).into_iter().find(|p| !self.fillers.contains_key(*p)) {
                    return Err(CorpusError::Catalog(format!("{owner}: unknown placeholder {{{p}}}")));
                }
            }
            Ok(())
        };
        for r in &self.reasons {
            if !codes.insert(r.code.as_str()) {
                return bad(format!("duplicate reason {:?}", r.code));
            }
            if !depts.contains(r.department.as_str()) {
                return bad(format!("{}: unknown department {:?}", r.code, r.department));
            }
            if !self.groups.contains_key(&r.group) {
                return bad(format!("{}: unknown group {:?}", r.code, r.group));
            }
            check_templates(&r.code, &r.templates)?;
        }
        for (name, g) in &self.groups {
            check_templates(name, &g.templates)?;
        }
        let c = &self.context;
        for (name, bank) in [
            ("no_context", &c.no_context),
            ("low_value", &c.low_value),
            ("returning_client", &c.returning_client),
            ("greetings", &c.greetings),
        ] {
            if bank.is_empty() {
                return bad(format!("context phrase bank {name} is empty"));
            }
        }
        Ok(())
    }

    pub fn reason(&self, code: &str) -> Option<&ReasonEntry> {
        self.reasons.iter().find(|r| r.code == code)
    }

    /// Distinct automatic-message types in catalog order.
    pub fn auto_msg_types(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.reasons.iter().filter(|r| seen.insert(&r.auto_msg)).map(|r| r.auto_msg.clone()).collect()
    }

    pub fn department_map(&self) -> DepartmentMap {
        let reasons = self.reasons.iter().map(|r| (r.code.clone(), r.department.clone())).collect();
        DepartmentMap::new(self.departments.iter().map(|d| d.id.as_str()), reasons)
            .expect("catalog departments are consistent")
            .with_names(self.departments.iter().map(|d| (d.id.clone(), d.name.clone())).collect())
    }

    /// Maps each automatic-message type to the department of the reason
    /// that usually follows it.
    pub fn heuristic_lookup(&self) -> HeuristicLookup {
        let mut lookup = BTreeMap::new();
        for r in &self.reasons {
            lookup.entry(r.auto_msg.clone()).or_insert_with(|| r.department.clone());
        }
        HeuristicLookup { feature: "last_auto_msg_type".into(), default: self.heuristic_default.clone(), lookup }
    }

    /// The profile columns the generator emits.
    pub fn schema(&self) -> FeatureSchema {
        let auto: Vec<String> = self.auto_msg_types();
        let auto: Vec<&str> = auto.iter().map(String::as_str).collect();
        let mut reasons: Vec<&str> = vec!["none"];
        reasons.extend(self.reasons.iter().map(|r| r.code.as_str()));
        FeatureSchema::new(vec![
            Column::categorical("last_auto_msg_type", &auto),
            Column::numeric("hours_since_auto_msg"),
            Column::categorical("last_ticket_reason", &reasons),
            Column::numeric("days_since_last_ticket"),
            Column::categorical("is_registered_agent", &["false", "true"]),
            Column::categorical("partner_type", &["none", "photographer", "inspector"]),
            Column::numeric("n_rented_as_owner"),
            Column::numeric("n_active_listings"),
            Column::numeric("n_active_contracts_as_tenant"),
            Column::numeric("n_ended_contracts_as_tenant"),
            Column::categorical("active_visit_scheduled", &["false", "true"]),
            Column::numeric("n_open_proposals"),
            Column::numeric("n_photo_sessions_30d"),
            Column::numeric("account_age_days"),
        ])
        .expect("column names are distinct")
    }

    /// Replaces every `{name}` with a random filler of that kind.
    pub fn fill(&self, template: &str, rng: &mut impl Rng) -> String {
        let mut out = String::with_capacity(template.len() + 16);
        let mut rest = template;
        while let Some(start) = rest.find('{') {
            let Some(len) = rest[start..].find('}') else { break };
            out.push_str(&rest[..start]);
            let name = &rest[start + 1..start + len];
            let bank = &self.fillers[name];
            out.push_str(&bank[rng.random_range(0..bank.len())]);
            rest = &rest[start + len + 1..];
        }
        out.push_str(rest);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_catalog_shape() {
        let c = Catalog::builtin();
        assert_eq!(c.reasons.len(), 24);
        assert_eq!(c.departments.len(), 6);
        assert_eq!(c.schema().columns.len(), 14);
        assert_eq!(c.auto_msg_types().len(), 24);
        let cancel: Vec<_> = c.reasons.iter().filter(|r| r.group == "cancel_visit").map(|r| r.persona).collect();
        assert!(cancel.contains(&Persona::Photographer) && cancel.contains(&Persona::ProspectiveTenant));
        let lookup = c.heuristic_lookup();
        lookup.validate(&c.department_map()).unwrap();
    }

    #[test]
    fn rejects_unknown_placeholder() {
        let mut doc = BUILTIN.replace("\"preciso cancelar a visita de amanhã\"", "\"cancelar {quando}\"");
        assert!(matches!(Catalog::from_toml(&doc), Err(CorpusError::Catalog(m)) if m.contains("quando")));
        doc = BUILTIN.replace("department = \"visits\"", "department = \"nowhere\"");
        assert!(Catalog::from_toml(&doc).is_err());
    }
}
