use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::catalog::{Catalog, Persona, ReasonEntry};
use super::CorpusError;
use crate::context::{ContextAnnotation, ContextLabel};
use crate::evalsim::Timestamped;
use crate::reason::{EmbeddingTable, ReasonExample};
use crate::tabular::TabularRecord;

/// 2020-01-01T00:00:00Z.
pub const DEFAULT_START: i64 = 1_577_836_800;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub size: usize,
    /// Fraction of tickets written with a template shared by their whole
    /// ambiguity group.
    pub ambiguity_rate: f64,
    /// Fraction of tickets whose profile comes from a random persona.
    pub profile_noise: f64,
    /// Probability that the last automatic message matches the reason.
    pub auto_msg_signal: f64,
    /// Exponent of the class-frequency power law over catalog rank.
    pub power_law: f64,
    pub context_size: usize,
    /// Share of context annotations that are greetings or filler.
    pub no_context_rate: f64,
    pub returning_rate: f64,
    pub start_timestamp: i64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 42,
            size: 5000,
            ambiguity_rate: 0.3,
            profile_noise: 0.1,
            auto_msg_signal: 0.55,
            power_law: 1.0,
            context_size: 4000,
            no_context_rate: 0.45,
            returning_rate: 0.1,
            start_timestamp: DEFAULT_START,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self, catalog: &Catalog) -> Result<(), CorpusError> {
        for (name, r) in [
            ("ambiguity_rate", self.ambiguity_rate),
            ("profile_noise", self.profile_noise),
            ("auto_msg_signal", self.auto_msg_signal),
            ("no_context_rate", self.no_context_rate),
            ("returning_rate", self.returning_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(CorpusError::InvalidSpec(format!("{name} must be in [0, 1], got {r}")));
            }
        }
        if self.no_context_rate + self.returning_rate > 1.0 {
            return Err(CorpusError::InvalidSpec("no_context_rate + returning_rate exceeds 1".into()));
        }
        if !(self.power_law >= 0.0 && self.power_law.is_finite()) {
            return Err(CorpusError::InvalidSpec("power_law must be non-negative".into()));
        }
        if self.size < catalog.reasons.len() {
            return Err(CorpusError::TooSmall { size: self.size, reasons: catalog.reasons.len() });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ticket {
    pub id: String,
    pub timestamp: i64,
    pub message: String,
    pub profile: TabularRecord,
    pub reason: String,
    pub department: String,
}

impl Timestamped for Ticket {
    fn timestamp(&self) -> Option<i64> {
        Some(self.timestamp)
    }

    fn tie_key(&self) -> &str {
        &self.id
    }
}

impl Ticket {
    pub fn example(&self) -> ReasonExample {
        ReasonExample {
            id: self.id.clone(),
            text: self.message.clone(),
            profile: self.profile.clone(),
            reason: self.reason.clone(),
        }
    }
}

pub fn examples(tickets: &[Ticket]) -> Vec<ReasonExample> {
    tickets.iter().map(Ticket::example).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedCorpus {
    pub tickets: Vec<Ticket>,
    pub annotations: Vec<ContextAnnotation>,
    /// What the text alone reveals about each ticket: its reason code, or
    /// the ambiguity group when a shared template was used.
    pub text_keys: Vec<String>,
}

/// Ticket counts per catalog reason: one each, then the rest split along
/// `1 / rank^alpha` by largest remainder.
pub fn class_counts(n_reasons: usize, size: usize, alpha: f64) -> Vec<usize> {
    let weights: Vec<f64> = (1..=n_reasons).map(|r| (r as f64).powf(-alpha)).collect();
    let total: f64 = weights.iter().sum();
    let rest = size - n_reasons;
    let exact: Vec<f64> = weights.iter().map(|w| rest as f64 * w / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| 1 + x.floor() as usize).collect();
    let mut left = size - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n_reasons).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn pick<'a, T>(items: &'a [T], rng: &mut impl Rng) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

fn poisson(mean: f64, rng: &mut impl Rng) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng)
}

fn exp_rounded(mean: f64, rng: &mut impl Rng) -> f64 {
    let x: f64 = Exp::new(1.0 / mean).expect("positive rate").sample(rng);
    (x * 10.0).round() / 10.0
}

fn flag(p: f64, rng: &mut impl Rng) -> &'static str {
    if rng.random_bool(p) {
        "true"
    } else {
        "false"
    }
}

/// Typical profile of a persona, used for demo presets.
pub fn persona_prototype(persona: Persona) -> TabularRecord {
    let mut r = TabularRecord::new()
        .with_category("is_registered_agent", "false")
        .with_category("partner_type", "none")
        .with_number("n_rented_as_owner", 0.0)
        .with_number("n_active_listings", 0.0)
        .with_number("n_active_contracts_as_tenant", 0.0)
        .with_number("n_ended_contracts_as_tenant", 0.0)
        .with_category("active_visit_scheduled", "false")
        .with_number("n_open_proposals", 0.0)
        .with_number("n_photo_sessions_30d", 0.0)
        .with_number("account_age_days", 365.0);
    r = match persona {
        Persona::Agent => r
            .with_category("is_registered_agent", "true")
            .with_number("n_active_listings", 5.0)
            .with_number("account_age_days", 900.0),
        Persona::Owner => r.with_number("n_rented_as_owner", 2.0).with_number("n_active_listings", 1.0),
        Persona::Tenant => {
            r.with_number("n_active_contracts_as_tenant", 1.0).with_number("n_ended_contracts_as_tenant", 1.0)
        }
        Persona::ProspectiveTenant => {
            r.with_category("active_visit_scheduled", "true").with_number("n_open_proposals", 1.0)
        }
        Persona::Photographer => {
            r.with_category("partner_type", "photographer").with_number("n_photo_sessions_30d", 7.0)
        }
        Persona::Inspector => r.with_category("partner_type", "inspector"),
    };
    r
}

fn persona_profile(persona: Persona, rng: &mut impl Rng) -> TabularRecord {
    use Persona::*;
    let is = |p: Persona| persona == p;
    let owner_props = if is(Owner) {
        1.0 + poisson(1.0, rng)
    } else if rng.random_bool(0.03) {
        1.0
    } else {
        0.0
    };
    let listings = match persona {
        Agent => 1.0 + poisson(4.0, rng),
        Owner => poisson(0.8, rng),
        _ => 0.0,
    };
    let contracts = if is(Tenant) { 1.0 + f64::from(u8::from(rng.random_bool(0.1))) } else { 0.0 };
    let ended = poisson(
        match persona {
            Tenant => 0.7,
            ProspectiveTenant => 0.4,
            _ => 0.1,
        },
        rng,
    );
    let partner = match persona {
        Photographer => "photographer",
        Inspector => "inspector",
        _ => "none",
    };
    let age_mean = if is(Agent) { 900.0 } else { 400.0 };
    TabularRecord::new()
        .with_category("is_registered_agent", flag(if is(Agent) { 0.95 } else { 0.02 }, rng))
        .with_category("partner_type", partner)
        .with_number("n_rented_as_owner", owner_props)
        .with_number("n_active_listings", listings)
        .with_number("n_active_contracts_as_tenant", contracts)
        .with_number("n_ended_contracts_as_tenant", ended)
        .with_category("active_visit_scheduled", flag(if is(ProspectiveTenant) { 0.75 } else { 0.03 }, rng))
        .with_number("n_open_proposals", if is(ProspectiveTenant) { poisson(0.6, rng) } else { 0.0 })
        .with_number("n_photo_sessions_30d", if is(Photographer) { 1.0 + poisson(6.0, rng) } else { 0.0 })
        .with_number("account_age_days", (1.0 + exp_rounded(age_mean, rng)).round())
}

fn ticket_profile(
    catalog: &Catalog,
    reason: &ReasonEntry,
    spec: &CorpusSpec,
    auto_types: &[String],
    rng: &mut impl Rng,
) -> TabularRecord {
    let persona = if rng.random_bool(spec.profile_noise) { *pick(&Persona::ALL, rng) } else { reason.persona };
    let mut r = persona_profile(persona, rng);
    if !rng.random_bool(0.1) {
        let own = rng.random_bool(spec.auto_msg_signal);
        let t = if own { reason.auto_msg.clone() } else { pick(auto_types, rng).clone() };
        r = r
            .with_category("last_auto_msg_type", &t)
            .with_number("hours_since_auto_msg", exp_rounded(if own { 18.0 } else { 120.0 }, rng));
    }
    let u: f64 = rng.random();
    if u < 0.3 {
        r = r.with_category("last_ticket_reason", "none");
    } else {
        let code = if u < 0.55 { &reason.code } else { &pick(&catalog.reasons, rng).code };
        r = r.with_category("last_ticket_reason", code).with_number("days_since_last_ticket", exp_rounded(40.0, rng));
    }
    r
}

/// Message text for a reason, plus the text-visible key.
fn ticket_text(catalog: &Catalog, reason: &ReasonEntry, ambiguity: f64, rng: &mut impl Rng) -> (String, String) {
    if rng.random_bool(ambiguity) {
        let t = pick(&catalog.groups[&reason.group].templates, rng);
        (catalog.fill(t, rng), format!("group:{}", reason.group))
    } else {
        (catalog.fill(pick(&reason.templates, rng), rng), reason.code.clone())
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map_or_else(String::new, |f| f.to_uppercase().chain(c).collect())
}

fn annotations(catalog: &Catalog, spec: &CorpusSpec, weights: &[usize], rng: &mut impl Rng) -> Vec<ContextAnnotation> {
    let bank = &catalog.context;
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0usize;
    for w in weights {
        acc += w;
        cumulative.push(acc);
    }
    (0..spec.context_size)
        .map(|_| {
            let u: f64 = rng.random();
            let (message, label) = if u < spec.returning_rate {
                (pick(&bank.returning_client, rng).clone(), ContextLabel::ReturningClient)
            } else if u < spec.returning_rate + spec.no_context_rate {
                let (phrase, label) = if rng.random_bool(0.6) {
                    (pick(&bank.no_context, rng), ContextLabel::NoContext)
                } else {
                    (pick(&bank.low_value, rng), ContextLabel::LowValue)
                };
                let text = match rng.random_range(0..5) {
                    0 => capitalize(phrase),
                    1 => format!("{phrase}!"),
                    _ => phrase.clone(),
                };
                (text, label)
            } else {
                let x = rng.random_range(0..acc);
                let reason = &catalog.reasons[cumulative.partition_point(|&c| c <= x)];
                let (text, _) = ticket_text(catalog, reason, spec.ambiguity_rate, rng);
                let text = if rng.random_bool(0.3) { format!("{}{text}", pick(&bank.greetings, rng)) } else { text };
                (text, ContextLabel::HasContext)
            };
            ContextAnnotation { message, label }
        })
        .collect()
}

/// Generates tickets in timestamp order plus context annotations. The
/// output depends only on the catalog and the `CorpusSpec`.
pub fn generate(catalog: &Catalog, spec: &CorpusSpec) -> Result<GeneratedCorpus, CorpusError> {
    spec.validate(catalog)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let counts = class_counts(catalog.reasons.len(), spec.size, spec.power_law);
    let mut order: Vec<usize> = counts.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(i, c)).collect();
    order.shuffle(&mut rng);
    let auto_types = catalog.auto_msg_types();
    let mut tickets = Vec::with_capacity(spec.size);
    let mut text_keys = Vec::with_capacity(spec.size);
    let mut ts = spec.start_timestamp;
    for (n, &ri) in order.iter().enumerate() {
        let reason = &catalog.reasons[ri];
        ts += rng.random_range(30..=900);
        let (mut message, key) = ticket_text(catalog, reason, spec.ambiguity_rate, &mut rng);
        if rng.random_bool(0.1) {
            message = format!("{}{message}", pick(&catalog.context.greetings, &mut rng));
        }
        let profile = ticket_profile(catalog, reason, spec, &auto_types, &mut rng);
        tickets.push(Ticket {
            id: format!("t-{:06}", n + 1),
            timestamp: ts,
            message,
            profile,
            reason: reason.code.clone(),
            department: reason.department.clone(),
        });
        text_keys.push(key);
    }
    let annotations = annotations(catalog, spec, &counts, &mut rng);
    log::info!("generated {} tickets and {} context annotations", tickets.len(), annotations.len());
    Ok(GeneratedCorpus { tickets, annotations, text_keys })
}

/// One-hot of the true reason (catalog order) for every ticket: a provider
/// that carries the label itself.
pub fn oracle_embeddings(catalog: &Catalog, tickets: &[Ticket]) -> Result<EmbeddingTable, CorpusError> {
    let index: BTreeMap<&str, usize> = catalog.reasons.iter().enumerate().map(|(i, r)| (r.code.as_str(), i)).collect();
    let mut table = EmbeddingTable::new(catalog.reasons.len());
    for t in tickets {
        let mut v = vec![0f32; catalog.reasons.len()];
        let i = *index.get(t.reason.as_str()).ok_or_else(|| CorpusError::UnknownReason(t.reason.clone()))?;
        v[i] = 1.0;
        table.insert(&t.id, &v)?;
    }
    Ok(table)
}

/// Low-dimensional vectors that see only what the text shows: a random
/// centroid per text key plus isotropic noise.
pub fn planted_embeddings(
    corpus: &GeneratedCorpus,
    dimension: usize,
    noise: f64,
    seed: u64,
) -> Result<EmbeddingTable, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut keys: Vec<&str> = corpus.text_keys.iter().map(String::as_str).collect();
    keys.sort_unstable();
    keys.dedup();
    let centroids: BTreeMap<&str, Vec<f64>> =
        keys.into_iter().map(|k| (k, (0..dimension).map(|_| normal.sample(&mut rng)).collect())).collect();
    let mut table = EmbeddingTable::new(dimension);
    for (t, key) in corpus.tickets.iter().zip(&corpus.text_keys) {
        let v: Vec<f32> =
            centroids[key.as_str()].iter().map(|c| (c + noise * normal.sample(&mut rng)) as f32).collect();
        table.insert(&t.id, &v)?;
    }
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfilePreset {
    pub id: String,
    pub label: String,
    pub profile: serde_json::Value,
}

pub fn profile_presets() -> Vec<ProfilePreset> {
    Persona::ALL
        .iter()
        .map(|&p| {
            let label = match p {
                Persona::Agent => "Real-estate agent",
                Persona::Owner => "Property owner",
                Persona::Tenant => "Tenant",
                Persona::ProspectiveTenant => "Prospective tenant",
                Persona::Photographer => "Photographer",
                Persona::Inspector => "Inspector",
            };
            ProfilePreset {
                id: p.as_str().to_owned(),
                label: label.to_owned(),
                profile: serde_json::to_value(persona_prototype(p)).expect("record serializes"),
            }
        })
        .collect()
}

pub fn presets_json() -> String {
    let mut s = serde_json::to_string_pretty(&profile_presets()).expect("presets serialize");
    s.push('\n');
    s
}
