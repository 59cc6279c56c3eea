//! Run configuration: preset defaults, TOML file, environment and flag overrides.
//!
//! Layers apply in that order, each replacing individual keys of the one
//! below. Unknown keys are rejected at every layer.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use crosswalk_core::pomdp::{Grid, RewardWeights};
use crosswalk_core::sim::sweep_values;
use crosswalk_core::{
    ControllerKind, ControllerParams, EntrySide, GapAcceptanceModel, GapReference, GapSource, Lane, PomdpConfig,
    Scenario, WorldGeometry,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Prefix of environment overrides: `CROSSWALK_<SECTION>__<KEY>`, or `CROSSWALK_PRESET`.
pub const ENV_PREFIX: &str = "CROSSWALK_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{origin}: [{section}] {key}: {reason}")]
    Invalid {
        origin: String,
        section: String,
        key: String,
        reason: String,
    },
    #[error("environment override {var}: {message}")]
    Env { var: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Simulation,
    Experiment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ControllerChoice {
    Hybrid,
    Pomdp,
}

impl From<ControllerChoice> for ControllerKind {
    fn from(c: ControllerChoice) -> Self {
        match c {
            ControllerChoice::Hybrid => ControllerKind::Hybrid,
            ControllerChoice::Pomdp => ControllerKind::Pomdp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
pub enum LaneChoice {
    #[value(name = "A", alias = "a")]
    A,
    #[value(name = "B", alias = "b")]
    B,
}

impl From<LaneChoice> for Lane {
    fn from(l: LaneChoice) -> Self {
        match l {
            LaneChoice::A => Lane::A,
            LaneChoice::B => Lane::B,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SideChoice {
    Near,
    Far,
}

impl From<SideChoice> for EntrySide {
    fn from(s: SideChoice) -> Self {
        match s {
            SideChoice::Near => EntrySide::Near,
            SideChoice::Far => EntrySide::Far,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceChoice {
    Crosswalk,
    StopPoint,
}

impl From<ReferenceChoice> for GapReference {
    fn from(r: ReferenceChoice) -> Self {
        match r {
            ReferenceChoice::Crosswalk => GapReference::Crosswalk,
            ReferenceChoice::StopPoint => GapReference::StopPoint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSection {
    pub n_lanes: usize,
    pub lane_width: f64,
    /// Omitted means the full road width.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_f: Option<f64>,
    pub delta: f64,
    pub crosswalk_width: f64,
    pub vehicle_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub k_s: f64,
    pub t_delay: f64,
    pub v_speedlimit: f64,
    pub a_cmf: f64,
    pub a_max: f64,
    pub tau_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PedestrianSection {
    pub mu_gap: f64,
    pub gap_variance: f64,
    pub min_gap: f64,
    pub walk_speed: f64,
    pub gap_reference: ReferenceChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub controller: ControllerChoice,
    pub lane: LaneChoice,
    pub side: SideChoice,
    pub initial_d: f64,
    /// Omitted means the speed limit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_v: Option<f64>,
    pub dt: f64,
    pub t_delay_plant: f64,
    pub max_sim_time: f64,
    pub collision_radius: f64,
    pub seed: u64,
    pub trials: usize,
    /// `LO:STEP:HI`; replaces random gaps when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PomdpSection {
    pub v_min: f64,
    pub v_step: f64,
    pub v_bins: usize,
    pub d_min: f64,
    pub d_step: f64,
    pub d_bins: usize,
    pub actions: Vec<f64>,
    pub dt: f64,
    pub discount: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub w_legality: f64,
    pub w_safety: f64,
    pub w_efficient: f64,
    pub w_smooth: f64,
    pub safety_distance: f64,
    pub cache_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub preset: Preset,
    pub world: WorldSection,
    pub controller: ControllerSection,
    pub pedestrian: PedestrianSection,
    pub simulation: SimulationSection,
    pub pomdp: PomdpSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset(Preset::Simulation)
    }
}

macro_rules! section_default {
    ($ty:ty) => {
        impl Default for $ty {
            fn default() -> Self {
                RunConfig::default().into_section::<$ty>()
            }
        }
    };
}

section_default!(WorldSection);
section_default!(ControllerSection);
section_default!(PedestrianSection);
section_default!(SimulationSection);
section_default!(PomdpSection);
section_default!(OutputSection);

trait Section: Sized {
    fn pick(cfg: RunConfig) -> Self;
}

macro_rules! section_pick {
    ($ty:ty, $field:ident) => {
        impl Section for $ty {
            fn pick(cfg: RunConfig) -> Self {
                cfg.$field
            }
        }
    };
}

section_pick!(WorldSection, world);
section_pick!(ControllerSection, controller);
section_pick!(PedestrianSection, pedestrian);
section_pick!(SimulationSection, simulation);
section_pick!(PomdpSection, pomdp);
section_pick!(OutputSection, output);

impl RunConfig {
    fn into_section<T: Section>(self) -> T {
        T::pick(self)
    }

    /// Defaults for a preset, built from the core parameter sets.
    pub fn preset(preset: Preset) -> Self {
        let scenario = match preset {
            Preset::Simulation => Scenario::simulation_default(),
            Preset::Experiment => Scenario::experiment_default(),
        };
        let g = scenario.geometry;
        let c = scenario.controller;
        let m = scenario.gap_model;
        let p = PomdpConfig::default();
        RunConfig {
            preset,
            world: WorldSection {
                n_lanes: g.n_lanes,
                lane_width: g.lane_width,
                x_f: None,
                delta: g.delta,
                crosswalk_width: g.crosswalk_width,
                vehicle_length: g.vehicle_length,
            },
            controller: ControllerSection {
                k_s: c.k_s,
                t_delay: c.t_delay,
                v_speedlimit: c.v_speedlimit,
                a_cmf: c.a_cmf,
                a_max: c.a_max,
                tau_max: c.tau_max,
            },
            pedestrian: PedestrianSection {
                mu_gap: m.mu_gap,
                gap_variance: m.sigma_gap * m.sigma_gap,
                min_gap: m.min_gap,
                walk_speed: m.walk_speed,
                gap_reference: ReferenceChoice::Crosswalk,
            },
            simulation: SimulationSection {
                controller: ControllerChoice::Hybrid,
                lane: LaneChoice::A,
                side: SideChoice::Near,
                initial_d: scenario.initial_d,
                initial_v: None,
                dt: scenario.dt,
                t_delay_plant: scenario.t_delay_plant,
                max_sim_time: scenario.max_sim_time,
                collision_radius: scenario.collision_radius,
                seed: scenario.seed,
                trials: 750,
                sweep: None,
            },
            pomdp: PomdpSection {
                v_min: p.v_grid.lo,
                v_step: p.v_grid.step,
                v_bins: p.v_grid.n,
                d_min: p.d_grid.lo,
                d_step: p.d_grid.step,
                d_bins: p.d_grid.n,
                actions: p.actions.clone(),
                dt: p.dt,
                discount: p.discount,
                tol: p.tol,
                max_iters: p.max_iters,
                w_legality: p.weights.legality,
                w_safety: p.weights.safety,
                w_efficient: p.weights.efficient,
                w_smooth: p.weights.smooth,
                safety_distance: p.safety_distance,
                cache_dir: PathBuf::from(".crosswalk-cache"),
            },
            output: OutputSection {
                dir: PathBuf::from("out"),
            },
        }
    }

    pub fn geometry(&self) -> WorldGeometry {
        let w = &self.world;
        WorldGeometry {
            n_lanes: w.n_lanes,
            lane_width: w.lane_width,
            x_f: w.x_f.unwrap_or(w.n_lanes as f64 * w.lane_width),
            delta: w.delta,
            crosswalk_width: w.crosswalk_width,
            vehicle_length: w.vehicle_length,
        }
    }

    pub fn controller_params(&self) -> ControllerParams {
        let c = &self.controller;
        ControllerParams {
            k_s: c.k_s,
            t_delay: c.t_delay,
            v_speedlimit: c.v_speedlimit,
            a_cmf: c.a_cmf,
            a_max: c.a_max,
            tau_max: c.tau_max,
        }
    }

    /// Gap model; the variance must be non-negative (checked by `validate`).
    pub fn gap_model(&self) -> GapAcceptanceModel {
        let p = &self.pedestrian;
        GapAcceptanceModel {
            mu_gap: p.mu_gap,
            sigma_gap: p.gap_variance.max(0.0).sqrt(),
            min_gap: p.min_gap,
            walk_speed: p.walk_speed,
        }
    }

    pub fn scenario(&self) -> Scenario {
        let s = &self.simulation;
        let controller = self.controller_params();
        Scenario {
            geometry: self.geometry(),
            controller,
            gap_model: self.gap_model(),
            gap_reference: self.pedestrian.gap_reference.into(),
            lane: s.lane.into(),
            entry_side: s.side.into(),
            controller_kind: s.controller.into(),
            initial_d: s.initial_d,
            initial_v: s.initial_v.unwrap_or(controller.v_speedlimit),
            dt: s.dt,
            t_delay_plant: s.t_delay_plant,
            max_sim_time: s.max_sim_time,
            collision_radius: s.collision_radius,
            seed: s.seed,
            pedestrian_enabled: true,
        }
    }

    pub fn pomdp_config(&self) -> PomdpConfig {
        let p = &self.pomdp;
        PomdpConfig {
            v_grid: Grid {
                lo: p.v_min,
                step: p.v_step,
                n: p.v_bins,
            },
            d_grid: Grid {
                lo: p.d_min,
                step: p.d_step,
                n: p.d_bins,
            },
            actions: p.actions.clone(),
            dt: p.dt,
            discount: p.discount,
            tol: p.tol,
            max_iters: p.max_iters,
            weights: RewardWeights {
                legality: p.w_legality,
                safety: p.w_safety,
                efficient: p.w_efficient,
                smooth: p.w_smooth,
            },
            safety_distance: p.safety_distance,
        }
    }

    /// Parsed sweep, or `trials` random draws.
    pub fn gap_source(&self) -> Result<GapSource, String> {
        match &self.simulation.sweep {
            Some(spec) => parse_sweep(spec).map(GapSource::Sweep),
            None => Ok(GapSource::Random(self.simulation.trials)),
        }
    }

    /// Copy with every optional field filled in, for echoing beside outputs.
    pub fn resolved(&self) -> RunConfig {
        let mut out = self.clone();
        out.world.x_f = Some(self.geometry().x_f);
        out.simulation.initial_v = Some(self.scenario().initial_v);
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Semantic checks; returns the offending section and key.
    pub fn validate(&self) -> Result<(), (String, String, String)> {
        let fail =
            |section: &str, key: &str, reason: &str| Err((section.to_string(), key.to_string(), reason.to_string()));
        let scenario = self.scenario();
        if let Err(e) = scenario.validate() {
            let text = e.to_string();
            let (key, reason) = text.split_once(": ").unwrap_or(("", text.as_str()));
            let key = if key == "sigma_gap" { "gap_variance" } else { key };
            let section = section_of(key);
            return Err((section.to_string(), key.to_string(), reason.to_string()));
        }
        if !(self.pedestrian.gap_variance >= 0.0) {
            return fail("pedestrian", "gap_variance", "must be non-negative");
        }
        if let Some(x_f) = self.world.x_f {
            if !(x_f > 0.0) || x_f > scenario.geometry.road_width() {
                return fail("world", "x_f", "must lie within the road");
            }
        }
        if self.simulation.sweep.is_none() && self.simulation.trials == 0 {
            return fail("simulation", "trials", "must be at least 1");
        }
        if let Err(e) = self.gap_source() {
            return fail("simulation", "sweep", &e);
        }
        let p = &self.pomdp;
        if p.v_bins < 2 || p.d_bins < 2 || !(p.v_step > 0.0) || !(p.d_step > 0.0) {
            return fail("pomdp", "v_bins", "grids need at least two points and a positive step");
        }
        if p.actions.is_empty() || p.actions.iter().any(|a| !a.is_finite()) {
            return fail("pomdp", "actions", "must be a non-empty list of finite accelerations");
        }
        if !(p.dt > 0.0) {
            return fail("pomdp", "dt", "must be positive");
        }
        if !(0.0..1.0).contains(&p.discount) {
            return fail("pomdp", "discount", "must lie in [0, 1)");
        }
        if !(p.tol > 0.0) {
            return fail("pomdp", "tol", "must be positive");
        }
        for (key, w) in [
            ("w_legality", p.w_legality),
            ("w_safety", p.w_safety),
            ("w_efficient", p.w_efficient),
            ("w_smooth", p.w_smooth),
        ] {
            if !(w >= 0.0) {
                return fail("pomdp", key, "must be non-negative");
            }
        }
        Ok(())
    }
}

fn section_of(key: &str) -> &'static str {
    match key {
        "n_lanes" | "lane_width" | "x_f" | "delta" | "crosswalk_width" | "vehicle_length" => "world",
        "k_s" | "t_delay" | "v_speedlimit" | "a_cmf" | "a_max" | "tau_max" => "controller",
        "mu_gap" | "gap_variance" | "min_gap" | "walk_speed" => "pedestrian",
        _ => "simulation",
    }
}

/// `LO:STEP:HI`, inclusive of `HI`.
pub fn parse_sweep(spec: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, step, hi] = parts.as_slice() else {
        return Err(format!("expected LO:STEP:HI, got {spec:?}"));
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("not a number: {s:?}"));
    sweep_values(num(lo)?, num(step)?, num(hi)?).map_err(|e| e.to_string())
}

/// Flag-level overrides; `None` leaves the lower layers in place.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub trials: Option<usize>,
    pub sweep: Option<String>,
    pub controller: Option<ControllerChoice>,
    pub lane: Option<LaneChoice>,
    pub side: Option<SideChoice>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        let s = &mut cfg.simulation;
        if let Some(n) = self.trials {
            s.trials = n;
            s.sweep = None;
        }
        if let Some(sweep) = &self.sweep {
            s.sweep = Some(sweep.clone());
        }
        if let Some(c) = self.controller {
            s.controller = c;
        }
        if let Some(l) = self.lane {
            s.lane = l;
        }
        if let Some(side) = self.side {
            s.side = side;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
    }
}

/// 1-based line of `key` inside `[section]` (or the top level when `section` is empty).
pub fn locate_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current != section {
            continue;
        }
        if let Some((k, _)) = line.split_once('=') {
            if k.trim().trim_matches('"') == key {
                return Some(i + 1);
            }
        }
    }
    None
}

fn merge(base: &mut toml::Table, layer: toml::Table) {
    for (k, v) in layer {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(l)) => merge(b, l),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Environment overrides as a table; keys map 1:1 onto config keys.
fn env_layer<I: IntoIterator<Item = (String, String)>>(vars: I) -> Result<toml::Table, ConfigError> {
    let mut layer = toml::Table::new();
    let mut entries: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    entries.sort();
    for (var, raw) in entries {
        let rest = &var[ENV_PREFIX.len()..];
        let value = env_value(&raw);
        let single = match rest.split_once("__") {
            Some((section, key)) => {
                let mut inner = toml::Table::new();
                inner.insert(key.to_ascii_lowercase(), value);
                let mut t = toml::Table::new();
                t.insert(section.to_ascii_lowercase(), toml::Value::Table(inner));
                t
            }
            None => {
                let mut t = toml::Table::new();
                t.insert(rest.to_ascii_lowercase(), value);
                t
            }
        };
        // Type-check and reject unknown keys one variable at a time so the message names it.
        RunConfig::deserialize(toml::Value::Table(single.clone())).map_err(|e| ConfigError::Env {
            var: var.clone(),
            message: e.to_string().trim().to_string(),
        })?;
        merge(&mut layer, single);
    }
    Ok(layer)
}

/// Full resolution from explicit inputs; `load` wires in the real file and environment.
pub fn resolve<I: IntoIterator<Item = (String, String)>>(
    file: Option<(&str, &str)>,
    env: I,
    overrides: &Overrides,
) -> Result<RunConfig, ConfigError> {
    let (origin, text) = file.unwrap_or(("<defaults>", ""));
    // Parsing the raw file against the full schema gives line-accurate syntax, type and unknown-key errors.
    let file_cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.to_string(),
        message: e.to_string().trim_end().to_string(),
    })?;
    let file_table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    let env_table = env_layer(env)?;

    let preset = match env_table.get("preset") {
        Some(v) => Preset::deserialize(v.clone()).map_err(|e| ConfigError::Env {
            var: format!("{ENV_PREFIX}PRESET"),
            message: e.to_string(),
        })?,
        None => file_cfg.preset,
    };
    let mut table = toml::Table::try_from(RunConfig::preset(preset)).expect("preset serializes");
    merge(&mut table, file_table);
    merge(&mut table, env_table);
    table.insert(
        "preset".into(),
        toml::Value::try_from(preset).expect("preset serializes"),
    );
    let mut cfg = RunConfig::deserialize(toml::Value::Table(table)).map_err(|e| ConfigError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    overrides.apply(&mut cfg);

    cfg.validate().map_err(|(section, key, reason)| {
        let at = locate_key(text, &section, &key)
            .map(|line| format!("{origin}:{line}"))
            .unwrap_or_else(|| origin.to_string());
        ConfigError::Invalid {
            origin: at,
            section,
            key,
            reason,
        }
    })?;
    Ok(cfg)
}

/// Reads the optional config file and the process environment.
pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
            path: p.display().to_string(),
            source,
        })?),
        None => None,
    };
    let name = path.map(|p| p.display().to_string());
    let file = match (&name, &text) {
        (Some(n), Some(t)) => Some((n.as_str(), t.as_str())),
        _ => None,
    };
    resolve(file, std::env::vars(), overrides)
}
