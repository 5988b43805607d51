use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::agent::{AgentEndpointConfig, AgentPlayer};
use crate::game::Player;

use super::builtin::*;
use super::historical::*;
use super::switch::{check_switch_parts, SwitchPlayer, SwitchStrategy};
use super::{Strategy, StrategyError, StrategyPlayer, StrategySpec};

pub type StrategyFactory =
    Arc<dyn Fn(&Map<String, Value>) -> Result<Box<dyn Strategy>, StrategyError> + Send + Sync>;

#[derive(Clone)]
pub enum EntryKind {
    Strategy(StrategyFactory),
    Switch,
    ExternalAgent,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamSpec {
    pub name: &'static str,
    /// "number", "integer", "strategy" or "endpoint".
    pub kind: &'static str,
    pub required: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
}

impl ParamSpec {
    fn number(name: &'static str, default: f64) -> Self {
        ParamSpec {
            name,
            kind: "number",
            required: false,
            default: Some(Value::from(default)),
        }
    }

    fn required(name: &'static str, kind: &'static str) -> Self {
        ParamSpec {
            name,
            kind,
            required: true,
            default: None,
        }
    }
}

#[derive(Clone, Serialize)]
pub struct CatalogEntry {
    pub name: String,
    pub params: Vec<ParamSpec>,
    pub description: String,
    /// Not part of the core set; may be absent from custom catalogs.
    pub optional: bool,
    #[serde(skip)]
    pub kind: EntryKind,
}

impl fmt::Debug for CatalogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CatalogEntry")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("optional", &self.optional)
            .finish()
    }
}

impl CatalogEntry {
    /// A plugin entry backed by a strategy factory.
    pub fn plugin(
        name: impl Into<String>,
        params: Vec<ParamSpec>,
        description: impl Into<String>,
        factory: StrategyFactory,
    ) -> Self {
        CatalogEntry {
            name: name.into(),
            params,
            description: description.into(),
            optional: true,
            kind: EntryKind::Strategy(factory),
        }
    }
}

/// Registry of named strategies. Immutable once shared.
#[derive(Clone, Default)]
pub struct Catalog {
    entries: BTreeMap<String, CatalogEntry>,
}

static DEFAULT: OnceLock<Catalog> = OnceLock::new();

/// The standard catalog plus the optional historical entries.
pub fn default_catalog() -> &'static Catalog {
    DEFAULT.get_or_init(|| {
        let mut c = Catalog::standard();
        c.install_historical();
        c
    })
}

fn constant<S: Strategy + Clone + Send + Sync + 'static>(s: S) -> StrategyFactory {
    Arc::new(move |_| Ok(Box::new(s.clone())))
}

impl Catalog {
    /// Empty catalog.
    pub fn new() -> Self {
        Catalog::default()
    }

    /// The required classical strategies, switch and external agents.
    pub fn standard() -> Self {
        let mut c = Catalog::new();
        let mut add = |name: &str, params: Vec<ParamSpec>, desc: &str, kind: EntryKind| {
            c.entries.insert(
                name.to_string(),
                CatalogEntry {
                    name: name.to_string(),
                    params,
                    description: desc.to_string(),
                    optional: false,
                    kind,
                },
            );
        };
        add(
            "always_cooperate",
            vec![],
            "Cooperates every round.",
            EntryKind::Strategy(constant(AlwaysCooperate)),
        );
        add(
            "always_defect",
            vec![],
            "Defects every round.",
            EntryKind::Strategy(constant(AlwaysDefect)),
        );
        add(
            "grim",
            vec![],
            "Cooperates until the opponent first defects, then defects forever.",
            EntryKind::Strategy(Arc::new(|_| Ok(Box::new(Grim::default())))),
        );
        add(
            "tit_for_tat",
            vec![],
            "Cooperates first, then copies the opponent's last move.",
            EntryKind::Strategy(constant(TitForTat)),
        );
        add(
            "suspicious_tit_for_tat",
            vec![],
            "Defects first, then copies the opponent's last move.",
            EntryKind::Strategy(constant(SuspiciousTitForTat)),
        );
        add(
            "two_step_copy",
            vec![],
            "Cooperates on rounds 1-2, then copies the opponent's move from two rounds back.",
            EntryKind::Strategy(constant(TwoStepCopy)),
        );
        add(
            "generous_tit_for_tat",
            vec![ParamSpec::number("p", GenerousTitForTat::DEFAULT_P)],
            "Tit-for-tat that answers a defection with defection only with probability p < 1.",
            EntryKind::Strategy(Arc::new(|params| {
                let p = number_param(
                    "generous_tit_for_tat",
                    params,
                    "p",
                    GenerousTitForTat::DEFAULT_P,
                    |p| (0.0..1.0).contains(&p),
                    "0 <= p < 1",
                )?;
                Ok(Box::new(GenerousTitForTat::new(p)))
            })),
        );
        add(
            "win_stay_lose_shift",
            vec![],
            "Repeats its last move when the opponent cooperated, switches otherwise.",
            EntryKind::Strategy(constant(WinStayLoseShift)),
        );
        add(
            "random",
            vec![ParamSpec::number("p_coop", RandomStrategy::DEFAULT_P)],
            "Cooperates with constant probability p_coop.",
            EntryKind::Strategy(Arc::new(|params| {
                let p = number_param(
                    "random",
                    params,
                    "p_coop",
                    RandomStrategy::DEFAULT_P,
                    |p| (0.0..=1.0).contains(&p),
                    "0 <= p_coop <= 1",
                )?;
                Ok(Box::new(RandomStrategy::new(p)))
            })),
        );
        add(
            "switch",
            vec![
                ParamSpec::required("a", "strategy"),
                ParamSpec::required("b", "strategy"),
                ParamSpec::required("switch_round", "integer"),
            ],
            "Plays a before switch_round and b (on the full history) from then on.",
            EntryKind::Switch,
        );
        add(
            "external_agent",
            vec![ParamSpec::required("endpoint", "endpoint")],
            "Delegates every move to a chat endpoint or subprocess.",
            EntryKind::ExternalAgent,
        );
        c
    }

    /// Adds the optional first-tournament entries.
    pub fn install_historical(&mut self) {
        let entries: [(&str, &str, StrategyFactory); 5] = [
            (
                "first_by_joss",
                "Tit-for-tat that defects 10% of the time after opponent cooperation.",
                constant(FirstByJoss),
            ),
            (
                "first_by_grofman",
                "Cooperates after matching moves, otherwise with probability 2/7.",
                constant(FirstByGrofman),
            ),
            (
                "first_by_feld",
                "Tit-for-tat whose cooperation after C decays from 1.0 to 0.5 over 200 rounds.",
                constant(FirstByFeld),
            ),
            (
                "first_by_tullock",
                "Cooperates 11 rounds, then 10 points below the opponent's recent rate.",
                constant(FirstByTullock),
            ),
            (
                "first_by_shubik",
                "Retaliates with escalating runs of defection.",
                Arc::new(|_| Ok(Box::new(FirstByShubik::default()))),
            ),
        ];
        for (name, desc, factory) in entries {
            self.entries.insert(
                name.to_string(),
                CatalogEntry::plugin(name, vec![], desc, factory),
            );
        }
    }

    /// Plugin hook for additional strategies.
    pub fn register(&mut self, entry: CatalogEntry) -> Result<(), StrategyError> {
        if self.entries.contains_key(&entry.name) {
            return Err(StrategyError::DuplicateName(entry.name));
        }
        self.entries.insert(entry.name.clone(), entry);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&CatalogEntry> {
        self.entries.get(name)
    }

    /// Entries sorted by name.
    pub fn entries(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.entries.values()
    }

    fn lookup(&self, spec: &StrategySpec) -> Result<&CatalogEntry, StrategyError> {
        let entry = self
            .entries
            .get(&spec.name)
            .ok_or_else(|| StrategyError::UnknownStrategy(spec.name.clone()))?;
        for key in spec.params.keys() {
            if !entry.params.iter().any(|p| p.name == key) {
                return Err(StrategyError::invalid(
                    &spec.name,
                    format!("unknown parameter {key:?}"),
                ));
            }
        }
        for p in entry.params.iter().filter(|p| p.required) {
            if !spec.params.contains_key(p.name) {
                return Err(StrategyError::invalid(
                    &spec.name,
                    format!("missing parameter {:?}", p.name),
                ));
            }
        }
        Ok(entry)
    }

    fn switch_parts(
        &self,
        spec: &StrategySpec,
    ) -> Result<(StrategySpec, StrategySpec, u32), StrategyError> {
        let sub = |key: &str| -> Result<StrategySpec, StrategyError> {
            serde_json::from_value(spec.params[key].clone())
                .map_err(|e| StrategyError::invalid("switch", format!("{key}: {e}")))
        };
        let a = sub("a")?;
        let b = sub("b")?;
        let k = spec.params["switch_round"]
            .as_u64()
            .filter(|&k| k <= u32::MAX as u64)
            .ok_or_else(|| StrategyError::invalid("switch", "switch_round must be an integer"))?
            as u32;
        check_switch_parts(&a, &b, k)?;
        Ok((a, b, k))
    }

    /// Checks a spec without building it. External endpoints are only
    /// parsed, not contacted.
    pub fn validate(&self, spec: &StrategySpec) -> Result<(), StrategyError> {
        let entry = self.lookup(spec)?;
        match &entry.kind {
            EntryKind::Strategy(f) => f(&spec.params).map(|_| ()),
            EntryKind::Switch => {
                let (a, b, _) = self.switch_parts(spec)?;
                self.validate(&a)?;
                self.validate(&b)
            }
            EntryKind::ExternalAgent => endpoint_param(spec).map(|_| ()),
        }
    }

    /// Builds a fresh strategy instance.
    pub fn make_strategy(&self, spec: &StrategySpec) -> Result<Box<dyn Strategy>, StrategyError> {
        let entry = self.lookup(spec)?;
        match &entry.kind {
            EntryKind::Strategy(f) => f(&spec.params),
            EntryKind::Switch => {
                let (a, b, k) = self.switch_parts(spec)?;
                Ok(Box::new(SwitchStrategy {
                    before: self.make_strategy(&a)?,
                    after: self.make_strategy(&b)?,
                    switch_round: k,
                }))
            }
            EntryKind::ExternalAgent => Err(StrategyError::NotProbabilistic(spec.display_id())),
        }
    }

    /// Builds a player for any spec, including switch composites and
    /// external agents.
    pub fn make_player(&self, spec: &StrategySpec) -> Result<Box<dyn Player>, StrategyError> {
        let entry = self.lookup(spec)?;
        match &entry.kind {
            EntryKind::Strategy(f) => Ok(Box::new(StrategyPlayer::new(f(&spec.params)?))),
            EntryKind::Switch => {
                let (a, b, k) = self.switch_parts(spec)?;
                Ok(Box::new(SwitchPlayer::new(
                    self.make_player(&a)?,
                    self.make_player(&b)?,
                    k,
                )))
            }
            EntryKind::ExternalAgent => Ok(Box::new(AgentPlayer::new(endpoint_param(spec)?))),
        }
    }
}

fn endpoint_param(spec: &StrategySpec) -> Result<AgentEndpointConfig, StrategyError> {
    let cfg: AgentEndpointConfig = serde_json::from_value(spec.params["endpoint"].clone())
        .map_err(|e| StrategyError::invalid("external_agent", format!("endpoint: {e}")))?;
    cfg.validate()
        .map_err(|e| StrategyError::invalid("external_agent", e.to_string()))?;
    Ok(cfg)
}

fn number_param(
    strategy: &str,
    params: &Map<String, Value>,
    key: &str,
    default: f64,
    ok: impl Fn(f64) -> bool,
    rule: &str,
) -> Result<f64, StrategyError> {
    let value = match params.get(key) {
        None => default,
        Some(v) => v
            .as_f64()
            .ok_or_else(|| StrategyError::invalid(strategy, format!("{key} must be a number")))?,
    };
    if ok(value) {
        Ok(value)
    } else {
        Err(StrategyError::invalid(
            strategy,
            format!("{key} = {value} violates {rule}"),
        ))
    }
}
