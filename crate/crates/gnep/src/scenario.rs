//! TOML scenario files.
//!
//! A scenario names a game (a reference instance or explicit polynomial
//! players), optional factor settings, solver settings and the parameters of
//! the sweep, selection, race and Monte Carlo commands. Every section is
//! optional; commands complain about the ones they need.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use gnep_core::oracles::{example1_game, harker_game, three_car_game};
use gnep_core::racing::{McRanges, Segment};
use gnep_core::{build_game, CarState, FactorRule, GameSpec, McConfig, PlayerSpec, RaceParams, SmoothFn, SolverOptions, Track};
use serde::Deserialize;
use toml::Spanned;

use crate::expr::parse_polynomial;

/// A problem in a scenario file, anchored to a line when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioError {
    pub path: PathBuf,
    /// 1-based line and column.
    pub position: Option<(usize, usize)>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.position {
            Some((line, col)) => write!(f, "{}:{line}:{col}: {}", self.path.display(), self.message),
            None => write!(f, "{}: {}", self.path.display(), self.message),
        }
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    name: Option<String>,
    game: Option<GameSection>,
    factors: Option<FactorsSection>,
    solver: Option<SolverSection>,
    sweep: Option<SweepSection>,
    select: Option<SelectSection>,
    race: Option<RaceSection>,
    mc: Option<McSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GameSection {
    reference: Option<Spanned<String>>,
    #[serde(default)]
    players: Vec<PlayerSection>,
    #[serde(default)]
    shared: Vec<Spanned<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlayerSection {
    dim: Spanned<usize>,
    cost: Spanned<String>,
    #[serde(default)]
    eq: Vec<Spanned<String>>,
    #[serde(default)]
    ineq: Vec<Spanned<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorsSection {
    rule: Option<Spanned<String>>,
    alpha: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSection {
    tol: Option<f64>,
    max_iters: Option<usize>,
    restarts: Option<usize>,
    #[serde(default)]
    starts: Vec<Spanned<Vec<f64>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    grid: Option<Spanned<String>>,
    player: Option<Spanned<usize>>,
    split: Option<Spanned<(usize, usize)>>,
    jump_factor: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectSection {
    objective: Option<Spanned<String>>,
    grid_points: Option<usize>,
    refine_iters: Option<usize>,
    lower: Option<f64>,
    upper: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentSection {
    length: f64,
    #[serde(default)]
    curvature: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CarSection {
    v: f64,
    #[serde(default)]
    psi: f64,
    s: f64,
    #[serde(default)]
    e: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RaceSection {
    track: Option<Spanned<String>>,
    length: Option<f64>,
    half_width: Option<f64>,
    #[serde(default)]
    closed: bool,
    #[serde(default)]
    segments: Vec<SegmentSection>,
    horizon: Option<usize>,
    dt: Option<f64>,
    beta: Option<f64>,
    d_safe: Option<f64>,
    wheelbase: Option<f64>,
    accel_max: Option<f64>,
    steer_max: Option<f64>,
    v_max: Option<Vec<f64>>,
    curvature_smoothing: Option<f64>,
    duration: Option<f64>,
    alpha_ego: Option<f64>,
    alpha_opponent: Option<f64>,
    #[serde(default)]
    cars: Vec<Spanned<CarSection>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct McSection {
    runs: Option<usize>,
    seed: Option<u64>,
    baseline_alpha: Option<f64>,
    ego_alpha: Option<f64>,
    opponent_model_alpha: Option<f64>,
    opponent_position: Option<(f64, f64)>,
    ego_relative_position: Option<(f64, f64)>,
    opponent_speed: Option<(f64, f64)>,
    ego_relative_speed: Option<(f64, f64)>,
    ego_lateral: Option<(f64, f64)>,
    opponent_relative_lateral: Option<(f64, f64)>,
}

/// Factor rule choices accepted on the command line and in files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleChoice {
    /// Identical factors: the normalized equilibrium.
    Normalized,
    FirstIdentity,
    SumToOne,
}

impl RuleChoice {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "normalized" => Some(Self::Normalized),
            "first-identity" => Some(Self::FirstIdentity),
            "sum-to-one" => Some(Self::SumToOne),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Normalized => "normalized",
            Self::FirstIdentity => "first-identity",
            Self::SumToOne => "sum-to-one",
        }
    }

    pub fn factor_rule(self) -> Option<FactorRule> {
        match self {
            Self::Normalized => None,
            Self::FirstIdentity => Some(FactorRule::FirstPlayerIdentity),
            Self::SumToOne => Some(FactorRule::SumToOne),
        }
    }
}

/// Upper-level objective of the selection command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveChoice {
    Sum,
    /// 0-based player index.
    Player(usize),
}

#[derive(Debug, Clone)]
pub struct SelectSettings {
    pub objective: ObjectiveChoice,
    pub grid_points: Option<usize>,
    pub refine_iters: Option<usize>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RaceSettings {
    pub track: Arc<Track>,
    pub params: RaceParams,
    pub duration: f64,
    pub alpha_ego: f64,
    pub alpha_opponent: f64,
    /// Explicit initial states; empty means "draw one from the Monte Carlo ranges".
    pub cars: Vec<CarState>,
}

#[derive(Debug, Clone)]
pub struct McSettings {
    pub config: McConfig,
    pub runs: usize,
    pub seed: u64,
}

/// A parsed and checked scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub path: PathBuf,
    pub name: String,
    /// Raw file bytes, hashed into run manifests.
    pub source: String,
    pub game: Option<GameSpec>,
    pub rule: Option<RuleChoice>,
    pub alpha: Option<Vec<f64>>,
    pub solver: SolverOptions,
    /// Extra starting points for the decision variables.
    pub starts: Vec<Vec<f64>>,
    pub grid: Option<(f64, f64, f64)>,
    /// 0-based player whose factor a first-identity sweep moves.
    pub sweep_player: usize,
    /// 0-based players sharing `θ` and `1 − θ` in a sum-to-one sweep.
    pub sweep_split: (usize, usize),
    pub jump_factor: Option<f64>,
    pub select: SelectSettings,
    pub race: RaceSettings,
    pub mc: McSettings,
}

/// 1-based line and column of a byte offset.
pub fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(src.len());
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(offset, |i| offset - i - 1) + 1;
    (line, col)
}

/// Parses `lo:hi:step` into an inclusive grid description.
pub fn parse_grid(s: &str) -> Result<(f64, f64, f64), String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, step] = parts[..] else {
        return Err(format!("grid `{s}` must look like lo:hi:step"));
    };
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("grid bound `{t}` is not a number"));
    let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
    if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(format!("grid `{s}` needs lo ≤ hi and a positive step"));
    }
    Ok((lo, hi, step))
}

/// Grid values `lo, lo + step, …` up to `hi`, with `hi` kept when it lies
/// within a small tolerance of the last step.
pub fn grid_values((lo, hi, step): (f64, f64, f64)) -> Vec<f64> {
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=count).map(|k| lo + k as f64 * step).collect()
}

fn reference_game(name: &str) -> Option<GameSpec> {
    match name {
        "example1" => Some(example1_game()),
        "three_car" => Some(three_car_game()),
        "harker" => Some(harker_game()),
        _ => None,
    }
}

struct Ctx<'a> {
    path: &'a Path,
    src: &'a str,
}

impl Ctx<'_> {
    fn at(&self, offset: usize, message: impl Into<String>) -> ScenarioError {
        ScenarioError { path: self.path.to_path_buf(), position: Some(line_col(self.src, offset)), message: message.into() }
    }

    fn plain(&self, message: impl Into<String>) -> ScenarioError {
        ScenarioError { path: self.path.to_path_buf(), position: None, message: message.into() }
    }

    fn poly(&self, expr: &Spanned<String>, n: usize) -> Result<SmoothFn, ScenarioError> {
        // the span starts at the opening quote
        parse_polynomial(expr.get_ref(), n).map_err(|e| self.at(expr.span().start + 1 + e.column, e.message))
    }
}

fn build_explicit_game(ctx: &Ctx<'_>, section: &GameSection) -> Result<GameSpec, ScenarioError> {
    if section.players.is_empty() {
        return Err(ctx.plain("[game] needs either `reference` or at least one [[game.players]] entry"));
    }
    for p in &section.players {
        if *p.dim.get_ref() == 0 {
            return Err(ctx.at(p.dim.span().start, "player dimension must be at least 1"));
        }
    }
    let n: usize = section.players.iter().map(|p| *p.dim.get_ref()).sum();
    let mut players = Vec::with_capacity(section.players.len());
    for p in &section.players {
        let mut spec = PlayerSpec::new(*p.dim.get_ref(), ctx.poly(&p.cost, n)?);
        for h in &p.eq {
            spec = spec.with_eq(ctx.poly(h, n)?);
        }
        for g in &p.ineq {
            spec = spec.with_ineq(ctx.poly(g, n)?);
        }
        players.push(spec);
    }
    let shared = section.shared.iter().map(|s| ctx.poly(s, n)).collect::<Result<Vec<_>, _>>()?;
    build_game(players, shared).map_err(|e| ctx.plain(format!("invalid game: {e}")))
}

fn build_track(ctx: &Ctx<'_>, race: &RaceSection) -> Result<Track, ScenarioError> {
    let half_width = race.half_width.unwrap_or(0.5);
    let kind = race.track.as_ref().map_or("l-shape", |t| t.get_ref().as_str());
    let anchor = race.track.as_ref().map_or(0, |t| t.span().start);
    let track = match kind {
        "l-shape" if race.half_width.is_none() && race.segments.is_empty() => Ok(Track::l_shape()),
        "l-shape" => Track::new(Track::l_shape().segments().to_vec(), half_width, race.closed),
        "straight" => Track::new(vec![Segment { length: race.length.unwrap_or(30.0), curvature: 0.0 }], half_width, race.closed),
        "segments" => Track::new(
            race.segments.iter().map(|s| Segment { length: s.length, curvature: s.curvature }).collect(),
            half_width,
            race.closed,
        ),
        other => {
            return Err(ctx.at(anchor, format!("unknown track `{other}` (expected l-shape, straight or segments)")))
        }
    };
    track.map_err(|e| ctx.at(anchor, format!("invalid track: {e}")))
}

fn race_params(race: &RaceSection) -> RaceParams {
    let d = RaceParams::default();
    RaceParams {
        horizon: race.horizon.unwrap_or(d.horizon),
        dt: race.dt.unwrap_or(d.dt),
        beta: race.beta.unwrap_or(d.beta),
        d_safe: race.d_safe.unwrap_or(d.d_safe),
        wheelbase: race.wheelbase.unwrap_or(d.wheelbase),
        accel_max: race.accel_max.unwrap_or(d.accel_max),
        steer_max: race.steer_max.unwrap_or(d.steer_max),
        v_max: race.v_max.clone().unwrap_or(d.v_max),
        curvature_smoothing: race.curvature_smoothing.unwrap_or(d.curvature_smoothing),
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let src = std::fs::read_to_string(path).map_err(|e| ScenarioError {
            path: path.to_path_buf(),
            position: None,
            message: format!("cannot read scenario: {e}"),
        })?;
        Self::parse(path, src)
    }

    pub fn parse(path: &Path, src: String) -> Result<Self, ScenarioError> {
        let ctx = Ctx { path, src: &src };
        let file: File = toml::from_str(&src).map_err(|e| {
            let msg = e.message().to_string();
            match e.span() {
                Some(span) => ctx.at(span.start, msg),
                None => ctx.plain(msg),
            }
        })?;

        let game = match &file.game {
            None => None,
            Some(g) => Some(match &g.reference {
                Some(r) => {
                    if !g.players.is_empty() || !g.shared.is_empty() {
                        return Err(ctx.at(r.span().start, "`reference` cannot be combined with explicit players"));
                    }
                    reference_game(r.get_ref()).ok_or_else(|| {
                        ctx.at(
                            r.span().start,
                            format!("unknown reference game `{}` (expected example1, three_car or harker)", r.get_ref()),
                        )
                    })?
                }
                None => build_explicit_game(&ctx, g)?,
            }),
        };

        let (rule, alpha) = match &file.factors {
            None => (None, None),
            Some(f) => {
                let rule = match &f.rule {
                    None => None,
                    Some(r) => Some(RuleChoice::parse(r.get_ref()).ok_or_else(|| {
                        ctx.at(r.span().start, format!("unknown rule `{}` (expected normalized, first-identity or sum-to-one)", r.get_ref()))
                    })?),
                };
                (rule, f.alpha.clone())
            }
        };

        let solver_section = file.solver.unwrap_or_default();
        let mut solver = SolverOptions::default();
        if let Some(t) = solver_section.tol {
            solver.tol = t;
        }
        if let Some(m) = solver_section.max_iters {
            solver.max_iters = m;
        }
        if let Some(r) = solver_section.restarts {
            solver.restarts = r;
        }
        if solver.validate().is_err() {
            return Err(ctx.plain("[solver] needs tol > 0 and max_iters ≥ 1"));
        }
        let mut starts = Vec::new();
        for s in &solver_section.starts {
            if let Some(g) = &game {
                if s.get_ref().len() != g.dim() {
                    return Err(ctx.at(
                        s.span().start,
                        format!("start has {} entries but the game has {} variables", s.get_ref().len(), g.dim()),
                    ));
                }
            }
            starts.push(s.get_ref().clone());
        }

        let sweep = file.sweep.unwrap_or_default();
        let grid = match &sweep.grid {
            None => None,
            Some(g) => Some(parse_grid(g.get_ref()).map_err(|m| ctx.at(g.span().start, m))?),
        };
        let sweep_player = match &sweep.player {
            None => 1,
            Some(p) => {
                let players = game.as_ref().map_or(usize::MAX, GameSpec::num_players);
                if *p.get_ref() < 1 || *p.get_ref() > players {
                    return Err(ctx.at(p.span().start, "sweep player is 1-based and must name a player of the game"));
                }
                *p.get_ref() - 1
            }
        };

        let sweep_split = match &sweep.split {
            None => (0, 1),
            Some(p) => {
                let (a, b) = *p.get_ref();
                let players = game.as_ref().map_or(usize::MAX, GameSpec::num_players);
                if a < 1 || b < 1 || a > players || b > players || a == b {
                    return Err(ctx.at(p.span().start, "sweep split names two different 1-based players"));
                }
                (a - 1, b - 1)
            }
        };

        let sel = file.select.unwrap_or_default();
        let objective = match &sel.objective {
            None => ObjectiveChoice::Sum,
            Some(o) => parse_objective(o.get_ref()).ok_or_else(|| {
                ctx.at(o.span().start, format!("unknown objective `{}` (expected sum or player:K)", o.get_ref()))
            })?,
        };
        if let (ObjectiveChoice::Player(i), Some(g), Some(o)) = (objective, &game, &sel.objective) {
            if i >= g.num_players() {
                return Err(ctx.at(o.span().start, format!("objective names player {} of {}", i + 1, g.num_players())));
            }
        }

        let race = file.race.unwrap_or_default();
        let track = Arc::new(build_track(&ctx, &race)?);
        let params = race_params(&race);
        let mut cars = Vec::new();
        for c in &race.cars {
            let v = c.get_ref();
            cars.push(CarState::on_track(&track, v.v, v.psi, v.s, v.e));
        }
        let cars_needed = if cars.is_empty() { 2 } else { cars.len() };
        params.validate(cars_needed).map_err(|e| ctx.plain(format!("invalid [race] parameters: {e}")))?;
        let duration = race.duration.unwrap_or(2.0);
        if !(duration > 0.0) {
            return Err(ctx.plain("[race] duration must be positive"));
        }

        let mc = file.mc.unwrap_or_default();
        let dr = McRanges::default();
        let ranges = McRanges {
            opponent_position: mc.opponent_position.unwrap_or(dr.opponent_position),
            ego_relative_position: mc.ego_relative_position.unwrap_or(dr.ego_relative_position),
            opponent_speed: mc.opponent_speed.unwrap_or(dr.opponent_speed),
            ego_relative_speed: mc.ego_relative_speed.unwrap_or(dr.ego_relative_speed),
            ego_lateral: mc.ego_lateral.unwrap_or(dr.ego_lateral),
            opponent_relative_lateral: mc.opponent_relative_lateral.unwrap_or(dr.opponent_relative_lateral),
        };
        let dc = McConfig::default();
        let config = McConfig {
            track: track.clone(),
            params: params.clone(),
            baseline_alpha: mc.baseline_alpha.unwrap_or(dc.baseline_alpha),
            ego_alpha: mc.ego_alpha.unwrap_or(dc.ego_alpha),
            opponent_model_alpha: mc.opponent_model_alpha.unwrap_or(dc.opponent_model_alpha),
            duration,
            ranges,
            solver: solver.clone(),
        };

        Ok(Self {
            path: path.to_path_buf(),
            name: file.name.unwrap_or_else(|| path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())),
            game,
            rule,
            alpha,
            solver,
            starts,
            grid,
            sweep_player,
            sweep_split,
            jump_factor: sweep.jump_factor,
            select: SelectSettings {
                objective,
                grid_points: sel.grid_points,
                refine_iters: sel.refine_iters,
                lower: sel.lower,
                upper: sel.upper,
            },
            race: RaceSettings {
                track,
                params,
                duration,
                alpha_ego: race.alpha_ego.unwrap_or(1.0),
                alpha_opponent: race.alpha_opponent.unwrap_or(1.0),
                cars,
            },
            mc: McSettings { config, runs: mc.runs.unwrap_or(100), seed: mc.seed.unwrap_or(7) },
            source: src,
        })
    }

    pub fn require_game(&self) -> Result<&GameSpec, ScenarioError> {
        self.game.as_ref().ok_or_else(|| ScenarioError {
            path: self.path.clone(),
            position: None,
            message: "scenario has no [game] section".into(),
        })
    }
}

/// `sum` or `player:K` with a 1-based `K`.
pub fn parse_objective(s: &str) -> Option<ObjectiveChoice> {
    if s == "sum" {
        return Some(ObjectiveChoice::Sum);
    }
    let k: usize = s.strip_prefix("player:")?.parse().ok()?;
    (k >= 1).then(|| ObjectiveChoice::Player(k - 1))
}
