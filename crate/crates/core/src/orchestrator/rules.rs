//! Deterministic offline language backend. Recognizes a small edit grammar
//! whose token tables live in `data/vocabulary.json`.

use std::collections::BTreeMap;
use std::sync::{Arc, LazyLock};

use serde::Deserialize;
use serde_json::json;

use super::backend::{BackendError, LanguageBackend};
use super::config::{AssetConfig, DeleteConfig, MotionConfig, MotionMode, MovementConfig, RenderConfig, SpeedClass, ViewConfig};
use super::prompts::agent_marker;
use super::AgentKind;
use crate::motion::{Action, DrivingDirection, Sector};
use crate::scene::{AssetQuery, Rgb};

pub const VOCABULARY_JSON: &str = include_str!("../../data/vocabulary.json");

#[derive(Clone, Debug, Deserialize)]
pub struct AbstractCommand {
    pub phrase: String,
    pub count: usize,
    pub text: String,
}

#[derive(Clone, Debug, Deserialize)]
pub struct Vocabulary {
    pub version: u32,
    pub clause_verbs: Vec<String>,
    pub connectives: Vec<String>,
    pub delete_verbs: Vec<String>,
    pub add_verbs: Vec<String>,
    pub modify_verbs: Vec<String>,
    pub view_words: Vec<String>,
    pub render_words: Vec<String>,
    #[serde(rename = "abstract")]
    pub abstract_commands: Vec<AbstractCommand>,
    pub colors: BTreeMap<String, Rgb>,
    pub brands: BTreeMap<String, String>,
    pub types: BTreeMap<String, String>,
    pub generic_nouns: Vec<String>,
    pub speed_words: BTreeMap<String, SpeedClass>,
    pub speed_values: BTreeMap<String, f64>,
    pub actions: Vec<(String, Action)>,
    pub sectors: Vec<(String, Sector)>,
    pub relations: Vec<(String, Sector)>,
    pub reference_modifiers: Vec<String>,
    pub directions: Vec<(String, DrivingDirection)>,
    pub wrong_way: Vec<String>,
    pub distance_words: BTreeMap<String, (f64, f64)>,
    pub distance_band: f64,
    pub length_units: Vec<String>,
    pub angle_units: Vec<String>,
    pub speed_units: Vec<String>,
    pub number_words: BTreeMap<String, f64>,
    pub count_articles: Vec<String>,
    pub view_axes: BTreeMap<String, [f64; 3]>,
    pub rotation_axes: BTreeMap<String, [f64; 3]>,
    pub ego_stop: Vec<String>,
    pub ego_motion: Vec<String>,
}

static BUILTIN: LazyLock<Arc<Vocabulary>> =
    LazyLock::new(|| Arc::new(serde_json::from_str(VOCABULARY_JSON).expect("bundled vocabulary parses")));

impl Vocabulary {
    pub fn builtin() -> Arc<Vocabulary> {
        BUILTIN.clone()
    }

    fn contains(list: &[String], word: &str) -> bool {
        list.iter().any(|w| w == word)
    }

    fn number(&self, tok: &str) -> Option<f64> {
        tok.parse::<f64>().ok().filter(|v| v.is_finite()).or_else(|| self.number_words.get(tok).copied())
    }

    fn is_vehicle_word(&self, tok: &str) -> bool {
        self.colors.contains_key(tok)
            || self.brands.contains_key(tok)
            || self.types.contains_key(tok)
            || Self::contains(&self.generic_nouns, tok)
    }
}

/// Lowercased word and number tokens. Decimal points inside numbers
/// survive, `m/s` becomes `mps`, and a unit glued to a number is split off.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase().replace("km/h", " kph ").replace("m/s", " mps ");
    let chars: Vec<char> = lower.chars().collect();
    let mut out = String::with_capacity(chars.len());
    for (i, &c) in chars.iter().enumerate() {
        let prev = if i > 0 { chars[i - 1] } else { ' ' };
        let next = chars.get(i + 1).copied().unwrap_or(' ');
        if c.is_alphanumeric() {
            if c.is_alphabetic() && prev.is_ascii_digit() {
                out.push(' ');
            }
            out.push(c);
        } else if (c == '.' && prev.is_ascii_digit() && next.is_ascii_digit()) || (c == '-' && next.is_ascii_digit() && !prev.is_alphanumeric()) {
            out.push(c);
        } else {
            out.push(' ');
        }
    }
    out.split_whitespace().map(str::to_owned).collect()
}

fn phrase_tokens(phrase: &str) -> Vec<&str> {
    phrase.split_whitespace().collect()
}

/// Token list with a mask of spans already claimed by an earlier rule.
struct Scan<'a> {
    tokens: &'a [String],
    used: Vec<bool>,
}

impl<'a> Scan<'a> {
    fn new(tokens: &'a [String]) -> Self {
        Scan { tokens, used: vec![false; tokens.len()] }
    }

    fn len(&self) -> usize {
        self.tokens.len()
    }

    fn tok(&self, i: usize) -> &str {
        self.tokens.get(i).map(String::as_str).unwrap_or("")
    }

    fn free(&self, i: usize, n: usize) -> bool {
        i + n <= self.len() && self.used[i..i + n].iter().all(|u| !u)
    }

    fn matches(&self, i: usize, phrase: &[&str]) -> bool {
        self.free(i, phrase.len()) && phrase.iter().enumerate().all(|(k, p)| self.tokens[i + k] == *p)
    }

    fn claim(&mut self, i: usize, n: usize) {
        for u in &mut self.used[i..i + n] {
            *u = true;
        }
    }

    /// First unclaimed occurrence of any phrase; longer phrases win at the
    /// same position. Claims the match.
    fn take_phrase<T: Clone>(&mut self, table: &[(String, T)]) -> Option<(usize, T)> {
        let mut sorted: Vec<(Vec<&str>, &T)> = table.iter().map(|(p, v)| (phrase_tokens(p), v)).collect();
        sorted.sort_by_key(|(p, _)| std::cmp::Reverse(p.len()));
        for i in 0..self.len() {
            for (p, v) in &sorted {
                if self.matches(i, p) {
                    self.claim(i, p.len());
                    return Some((i, (*v).clone()));
                }
            }
        }
        None
    }

    fn take_word<T: Clone>(&mut self, table: &BTreeMap<String, T>) -> Option<(String, T)> {
        for i in 0..self.len() {
            if self.free(i, 1) {
                if let Some(v) = table.get(&self.tokens[i]) {
                    self.claim(i, 1);
                    return Some((self.tokens[i].clone(), v.clone()));
                }
            }
        }
        None
    }

    fn has_any(&self, words: &[String]) -> bool {
        (0..self.len()).any(|i| self.free(i, 1) && Vocabulary::contains(words, &self.tokens[i]))
    }
}

fn plain_table(list: &[String]) -> Vec<(String, ())> {
    list.iter().map(|p| (p.clone(), ())).collect()
}

/// A "the [added] <vehicle words>" phrase.
struct Reference {
    start: usize,
    len: usize,
    descriptor: String,
    has_modifier: bool,
}

fn reference_at(v: &Vocabulary, scan: &Scan, i: usize) -> Option<Reference> {
    if !scan.free(i, 1) || scan.tok(i) != "the" {
        return None;
    }
    let mut j = i + 1;
    let mut has_modifier = false;
    while j < scan.len() && scan.free(j, 1) && Vocabulary::contains(&v.reference_modifiers, scan.tok(j)) {
        has_modifier = true;
        j += 1;
    }
    let mut words = Vec::new();
    let mut raw = Vec::new();
    while j < scan.len() && scan.free(j, 1) && v.is_vehicle_word(scan.tok(j)) {
        words.push(canonical_descriptor_word(v, scan.tok(j)));
        raw.push(scan.tok(j));
        j += 1;
    }
    // "the added car red": a trailing color is the new value, not part of the name.
    while raw.len() > 1 && v.colors.contains_key(*raw.last().unwrap()) {
        raw.pop();
        words.pop();
        j -= 1;
    }
    if words.is_empty() {
        return None;
    }
    words.dedup();
    Some(Reference { start: i, len: j - i, descriptor: words.join(" "), has_modifier })
}

fn canonical_descriptor_word(v: &Vocabulary, tok: &str) -> String {
    if let Some(brand) = v.brands.get(tok) {
        brand.to_lowercase()
    } else if let Some(t) = v.types.get(tok) {
        t.clone()
    } else if Vocabulary::contains(&v.generic_nouns, tok) {
        "car".into()
    } else {
        tok.to_string()
    }
}

fn first_reference(v: &Vocabulary, scan: &Scan) -> Option<Reference> {
    (0..scan.len()).find_map(|i| reference_at(v, scan, i))
}

/// `<relation> <reference>`, e.g. "chasing behind the Porsche".
fn take_relation(v: &Vocabulary, scan: &mut Scan) -> Option<(Sector, String)> {
    let mut table: Vec<(Vec<&str>, Sector)> = v.relations.iter().map(|(p, s)| (phrase_tokens(p), *s)).collect();
    table.sort_by_key(|(p, _)| std::cmp::Reverse(p.len()));
    for i in 0..scan.len() {
        for (p, sector) in &table {
            if scan.matches(i, p) {
                if let Some(r) = reference_at(v, scan, i + p.len()) {
                    scan.claim(i, p.len() + r.len);
                    return Some((*sector, r.descriptor));
                }
            }
        }
    }
    None
}

/// `<number> <unit>` pairs, claimed. Returns (index, value).
fn take_quantities(v: &Vocabulary, scan: &mut Scan, units: &[String]) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for i in 0..scan.len().saturating_sub(1) {
        if !scan.free(i, 2) || !Vocabulary::contains(units, scan.tok(i + 1)) {
            continue;
        }
        if let Some(n) = v.number(scan.tok(i)) {
            // "meters per second" is a speed, not a length.
            if scan.tok(i + 2) == "per" {
                continue;
            }
            scan.claim(i, 2);
            out.push((i, n));
        }
    }
    out
}

fn take_speed_value(v: &Vocabulary, scan: &mut Scan) -> Option<f64> {
    for i in 0..scan.len() {
        let Some(n) = v.number(scan.tok(i)) else { continue };
        if scan.matches(i + 1, &["mps"]) {
            scan.claim(i, 2);
            return Some(n);
        }
        if scan.matches(i + 1, &["kph"]) {
            scan.claim(i, 2);
            return Some(n / 3.6);
        }
        for unit in &v.length_units {
            if scan.matches(i + 1, &[unit.as_str(), "per", "second"]) && scan.free(i, 1) {
                scan.claim(i, 4);
                return Some(n);
            }
        }
    }
    None
}

fn take_speed_class(v: &Vocabulary, scan: &mut Scan) -> Option<SpeedClass> {
    scan.take_word(&v.speed_words).map(|(_, c)| c)
}

fn take_asset_query(v: &Vocabulary, scan: &mut Scan) -> AssetQuery {
    AssetQuery {
        type_label: scan.take_word(&v.types).map(|(_, t)| t),
        brand: scan.take_word(&v.brands).map(|(_, b)| b),
        color: scan.take_word(&v.colors).map(|(_, c)| c),
    }
}

fn first_index_of(scan: &Scan, words: &[String]) -> Option<usize> {
    (0..scan.len()).find(|&i| Vocabulary::contains(words, scan.tok(i)))
}

// ---------------------------------------------------------------------------
// Decomposition

/// Splits on sentence punctuation, then on "and"/"then" or a comma when the
/// next word is a clause verb.
pub fn split_clauses(v: &Vocabulary, command: &str) -> Vec<String> {
    let chars: Vec<char> = command.chars().collect();
    let mut sentences = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let next = chars.get(i + 1).copied();
        if matches!(c, '.' | '!' | '?' | ';' | '\n') && next.is_none_or(char::is_whitespace) {
            sentences.push(std::mem::take(&mut cur));
        } else {
            cur.push(c);
        }
    }
    sentences.push(cur);

    let norm = |w: &str| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
    let mut clauses = Vec::new();
    for s in sentences {
        let words: Vec<&str> = s.split_whitespace().collect();
        let mut current: Vec<&str> = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let w = norm(words[i]);
            let next_is_verb = words.get(i + 1).is_some_and(|n| Vocabulary::contains(&v.clause_verbs, &norm(n)));
            if (w == "and" || w == "then") && next_is_verb && !current.is_empty() {
                clauses.push(current.join(" "));
                current.clear();
                i += 1;
                continue;
            }
            if Vocabulary::contains(&v.clause_verbs, &w) && current.last().is_some_and(|l| l.ends_with(',')) {
                clauses.push(current.join(" "));
                current.clear();
            }
            current.push(words[i]);
            i += 1;
        }
        clauses.push(current.join(" "));
    }
    clauses.into_iter().filter_map(|c| clean_clause(v, &c)).collect()
}

fn clean_clause(v: &Vocabulary, clause: &str) -> Option<String> {
    let mut words: Vec<&str> = clause.split_whitespace().collect();
    while let Some(first) = words.first() {
        let w = first.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
        if Vocabulary::contains(&v.connectives, &w) {
            words.remove(0);
        } else {
            break;
        }
    }
    let text = words.join(" ");
    let text = text.trim_end_matches([',', ';', ':']).trim();
    if text.is_empty() || !text.chars().any(char::is_alphanumeric) {
        return None;
    }
    let mut chars = text.chars();
    let first = chars.next().unwrap();
    let mut out: String = first.to_uppercase().chain(chars).collect();
    out.push('.');
    Some(out)
}

fn has_motion_cue(v: &Vocabulary, scan: &Scan) -> bool {
    let tokens = scan.tokens;
    let has = |table: &[(String, Action)]| {
        table.iter().any(|(p, _)| {
            let p = phrase_tokens(p);
            (0..tokens.len()).any(|i| scan.matches(i, &p))
        })
    };
    has(&v.actions)
        || tokens.iter().any(|t| v.speed_words.contains_key(t))
        || v.wrong_way.iter().any(|p| {
            let p = phrase_tokens(p);
            (0..tokens.len()).any(|i| scan.matches(i, &p))
        })
}

/// Agent for one clause. `None` marks an abstract command to expand.
pub fn classify_clause(v: &Vocabulary, clause: &str) -> Vec<(AgentKind, String)> {
    let tokens = tokenize(clause);
    let scan = Scan::new(&tokens);
    let joined = format!(" {} ", tokens.join(" "));
    for a in &v.abstract_commands {
        if joined.contains(&format!(" {} ", a.phrase)) {
            return vec![(AgentKind::Motion, a.text.clone()); a.count];
        }
    }
    if scan.has_any(&v.render_words) {
        let bg = tokens.iter().any(|t| t == "background");
        let fg = tokens.iter().any(|t| t == "foreground");
        let mut out = Vec::new();
        if bg || !fg {
            out.push((AgentKind::BackgroundRender, clause.to_string()));
        }
        if fg || !bg {
            out.push((AgentKind::ForegroundRender, clause.to_string()));
        }
        return out;
    }
    let verb = tokens.iter().find(|t| {
        Vocabulary::contains(&v.delete_verbs, t) || Vocabulary::contains(&v.add_verbs, t) || Vocabulary::contains(&v.modify_verbs, t)
    });
    let has_view = scan.has_any(&v.view_words);
    let agent = match verb {
        Some(t) if Vocabulary::contains(&v.delete_verbs, t) => AgentKind::VehicleDelete,
        Some(t) if Vocabulary::contains(&v.add_verbs, t) => AgentKind::Motion,
        Some(_) if has_motion_cue(v, &scan) => AgentKind::Motion,
        Some(_) if has_view => AgentKind::ViewAdjust,
        Some(_) => AgentKind::AssetManage,
        None if has_view => AgentKind::ViewAdjust,
        None if has_motion_cue(v, &scan) && first_reference(v, &scan).is_some() => AgentKind::Motion,
        None => AgentKind::ViewAdjust,
    };
    vec![(agent, clause.to_string())]
}

pub fn decompose_rules(v: &Vocabulary, command: &str) -> Vec<(AgentKind, String)> {
    split_clauses(v, command).iter().flat_map(|c| classify_clause(v, c)).collect()
}

// ---------------------------------------------------------------------------
// Per-agent parsers

pub fn parse_view(v: &Vocabulary, text: &str) -> ViewConfig {
    let tokens = tokenize(text);
    let mut scan = Scan::new(&tokens);
    let mut cfg = ViewConfig::default();
    let speed = take_speed_value(v, &mut scan);
    let axis_near = |scan: &Scan, i: usize, table: &BTreeMap<String, [f64; 3]>| -> Option<[f64; 3]> {
        let after = (i + 2..(i + 5).min(scan.len())).find_map(|k| table.get(scan.tok(k)).copied());
        after
            .or_else(|| (i.saturating_sub(2)..i).rev().find_map(|k| table.get(scan.tok(k)).copied()))
            .or_else(|| (0..scan.len()).find_map(|k| table.get(scan.tok(k)).copied()))
    };
    for (i, n) in take_quantities(v, &mut scan, &v.angle_units) {
        if let Some(axis) = axis_near(&scan, i, &v.rotation_axes) {
            for k in 0..3 {
                cfg.delta_angles[k] += n * axis[k];
            }
        }
    }
    for (i, n) in take_quantities(v, &mut scan, &v.length_units) {
        if let Some(axis) = axis_near(&scan, i, &v.view_axes) {
            for k in 0..3 {
                cfg.delta_position[k] += n * axis[k];
            }
        }
    }
    if tokens.iter().any(|t| t == "ego") {
        cfg.ego_speed = if scan.has_any(&v.ego_stop) {
            Some(0.0)
        } else if let Some(s) = speed {
            Some(s)
        } else if let Some(class) = take_speed_class(v, &mut scan) {
            Some(v.speed_values.get(class_key(class)).copied().unwrap_or(class.meters_per_second()))
        } else if scan.has_any(&v.ego_motion) {
            Some(SpeedClass::Normal.meters_per_second())
        } else {
            None
        };
    }
    cfg
}

fn class_key(c: SpeedClass) -> &'static str {
    match c {
        SpeedClass::Slow => "slow",
        SpeedClass::Normal => "normal",
        SpeedClass::Fast => "fast",
    }
}

pub fn parse_delete(v: &Vocabulary, text: &str) -> DeleteConfig {
    let tokens = tokenize(text);
    let mut scan = Scan::new(&tokens);
    let mut cfg = DeleteConfig { all: tokens.iter().any(|t| t == "all" || t == "every" || t == "everything"), ..Default::default() };
    if let Some(r) = (0..scan.len()).find_map(|i| reference_at(v, &scan, i).filter(|r| r.has_modifier)) {
        scan.claim(r.start, r.len);
        cfg.reference = Some(r.descriptor);
        return cfg;
    }
    let q = take_asset_query(v, &mut scan);
    cfg.type_label = q.type_label;
    cfg.brand = q.brand;
    cfg.color = q.color;
    cfg
}

pub fn parse_asset(v: &Vocabulary, text: &str) -> AssetConfig {
    let tokens = tokenize(text);
    let mut scan = Scan::new(&tokens);
    let mut cfg = AssetConfig::default();
    if let Some(r) = first_reference(v, &scan) {
        scan.claim(r.start, r.len);
        cfg.target = Some(r.descriptor);
    }
    let q = take_asset_query(v, &mut scan);
    cfg.color = q.color;
    cfg.asset = AssetQuery { color: None, ..q };
    cfg
}

pub fn parse_motion(v: &Vocabulary, text: &str) -> MotionConfig {
    let tokens = tokenize(text);
    let mut scan = Scan::new(&tokens);
    let add_at = first_index_of(&scan, &v.add_verbs);
    let mut cfg = MotionConfig { mode: if add_at.is_some() { MotionMode::Add } else { MotionMode::Modify }, ..Default::default() };

    if let Some((sector, descriptor)) = take_relation(v, &mut scan) {
        cfg.placement.sector = sector;
        cfg.placement.reference = Some(descriptor);
    }
    if cfg.mode == MotionMode::Modify {
        if let Some(r) = first_reference(v, &scan) {
            scan.claim(r.start, r.len);
            cfg.target = Some(r.descriptor);
        }
    }
    cfg.movement = MovementConfig {
        action: scan.take_phrase(&v.actions).map(|(_, a)| a),
        ..Default::default()
    };
    cfg.placement.driving_direction = scan.take_phrase(&v.directions).map(|(_, d)| d);
    cfg.placement.crazy_mode = scan.take_phrase(&plain_table(&v.wrong_way)).is_some();
    cfg.movement.speed = take_speed_value(v, &mut scan);
    cfg.movement.speed_class = take_speed_class(v, &mut scan);

    if cfg.mode == MotionMode::Add {
        let band = v.distance_band;
        if let Some((_, n)) = take_quantities(v, &mut scan, &v.length_units).first() {
            cfg.placement.distance_range = Some(((n - band).max(0.0), n + band));
        } else if let Some((_, r)) = scan.take_word(&v.distance_words) {
            cfg.placement.distance_range = Some(r);
        }
        if cfg.placement.reference.is_none() {
            if let Some((_, s)) = scan.take_phrase(&v.sectors) {
                cfg.placement.sector = s;
            }
        }
        if let Some(i) = add_at {
            if let Some(n) = v.number(scan.tok(i + 1)) {
                if n >= 1.0 && n.fract() == 0.0 {
                    cfg.placement.count = n as u32;
                }
            }
        }
        cfg.asset = take_asset_query(v, &mut scan);
    }
    cfg
}

pub fn parse_render(v: &Vocabulary, text: &str) -> RenderConfig {
    let tokens = tokenize(text);
    let mut cfg = RenderConfig::default();
    if let Some(i) = tokens.iter().position(|t| t == "frame" || t == "frames") {
        let nums: Vec<f64> = tokens[i + 1..].iter().filter_map(|t| v.number(t)).take(2).collect();
        if let Some(&a) = nums.first() {
            cfg.frame_start = a.max(0.0) as usize;
            cfg.frame_end = Some(nums.get(1).copied().unwrap_or(a).max(0.0) as usize);
        }
    }
    cfg
}

// ---------------------------------------------------------------------------

#[derive(Clone)]
pub struct RuleBackend {
    vocab: Arc<Vocabulary>,
}

impl Default for RuleBackend {
    fn default() -> Self {
        RuleBackend { vocab: Vocabulary::builtin() }
    }
}

impl RuleBackend {
    pub fn new(vocab: Arc<Vocabulary>) -> Self {
        RuleBackend { vocab }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    /// JSON value the backend answers for `agent`.
    pub fn respond(&self, agent: AgentKind, command: &str) -> serde_json::Value {
        let v = &*self.vocab;
        let to = |x: Result<serde_json::Value, serde_json::Error>| x.expect("configs serialize");
        match agent {
            AgentKind::ProjectManager => {
                let instructions: Vec<_> = decompose_rules(v, command)
                    .into_iter()
                    .map(|(agent, text)| json!({"agent": agent, "text": text}))
                    .collect();
                json!({ "instructions": instructions })
            }
            AgentKind::ViewAdjust => to(serde_json::to_value(parse_view(v, command))),
            AgentKind::VehicleDelete => to(serde_json::to_value(parse_delete(v, command))),
            AgentKind::AssetManage => to(serde_json::to_value(parse_asset(v, command))),
            AgentKind::Motion => to(serde_json::to_value(parse_motion(v, command))),
            AgentKind::BackgroundRender | AgentKind::ForegroundRender => to(serde_json::to_value(parse_render(v, command))),
        }
    }
}

impl LanguageBackend for RuleBackend {
    fn complete(&self, prompt: &str, command: &str) -> Result<String, BackendError> {
        let agent = agent_marker(prompt).ok_or_else(|| BackendError::Config("prompt has no agent marker".into()))?;
        Ok(self.respond(agent, command).to_string())
    }

    fn name(&self) -> &str {
        "rule"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v() -> Arc<Vocabulary> {
        Vocabulary::builtin()
    }

    #[test]
    fn tokenizer_keeps_decimals_and_units() {
        assert_eq!(tokenize("Move 0.5m above, at 3 m/s."), vec!["move", "0.5", "m", "above", "at", "3", "mps"]);
        assert_eq!(tokenize("wrong-way"), vec!["wrong", "way"]);
    }

    #[test]
    fn clause_splitting() {
        let v = v();
        let c = split_clauses(&v, "Remove all cars and add a red car. Additionally, move the view 2 meters ahead");
        assert_eq!(c, vec!["Remove all cars.", "Add a red car.", "Move the view 2 meters ahead."]);
        // "and" before a non-verb stays inside the clause.
        let c = split_clauses(&v, "The view should be moved 5 meters ahead and 0.5 meters above.");
        assert_eq!(c, vec!["The view should be moved 5 meters ahead and 0.5 meters above."]);
        assert!(split_clauses(&v, "  ").is_empty());
        assert!(split_clauses(&v, "...").is_empty());
    }

    #[test]
    fn red_car_left_front() {
        let m = parse_motion(&v(), "add a red car to the left front");
        assert_eq!(m.mode, MotionMode::Add);
        assert_eq!(m.asset.color, Some([1.0, 0.0, 0.0]));
        assert_eq!(m.placement.sector, Sector::LeftFront);
        assert_eq!(m.placement.count, 1);
    }

    #[test]
    fn view_two_meters_ahead() {
        let c = parse_view(&v(), "move view 2 meters ahead");
        assert_eq!(c.delta_position, [2.0, 0.0, 0.0]);
        assert_eq!(c.delta_angles, [0.0; 3]);
        assert_eq!(c.ego_speed, None);
    }

    #[test]
    fn gibberish_defaults() {
        assert_eq!(parse_view(&v(), "xyzzy"), ViewConfig::default());
        let d = decompose_rules(&v(), "xyzzy");
        assert_eq!(d, vec![(AgentKind::ViewAdjust, "Xyzzy.".to_string())]);
    }

    #[test]
    fn wrong_way_toward_fast() {
        let m = parse_motion(&v(), "Add a Porsche driving the wrong way toward me fast.");
        assert!(m.placement.crazy_mode);
        assert_eq!(m.placement.driving_direction, Some(DrivingDirection::Toward));
        assert_eq!(m.movement.speed_class, Some(SpeedClass::Fast));
        assert_eq!(m.asset.brand.as_deref(), Some("Porsche"));
    }

    #[test]
    fn relation_reference() {
        let m = parse_motion(&v(), "Add a police car also driving the wrong way and chasing behind the Porsche.");
        assert_eq!(m.placement.reference.as_deref(), Some("porsche"));
        assert_eq!(m.placement.sector, Sector::Back);
        assert_eq!(m.asset.type_label.as_deref(), Some("police"));
        assert_eq!(m.asset.brand, None);
    }

    #[test]
    fn turn_left_does_not_set_sector() {
        let m = parse_motion(&v(), "Modify the added car to turn left.");
        assert_eq!(m.mode, MotionMode::Modify);
        assert_eq!(m.target.as_deref(), Some("car"));
        assert_eq!(m.movement.action, Some(Action::TurnLeft));
        assert_eq!(m.placement, super::super::config::PlacementConfig::default());
    }
}
