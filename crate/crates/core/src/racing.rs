//! Two-car racing game on a track described in Frenet coordinates.
//!
//! Each car is a kinematic bicycle with state `[v, ψ, s, e, X, Y]` (speed,
//! heading error, arc length, lateral offset, inertial position) and input
//! `[u_a, u_δ]`:
//!
//! ```text
//! v̇ = u_a
//! ψ̇ = (v/ℓ) tan u_δ − κ(s) ṡ
//! ṡ = v cos ψ / (1 − e κ(s))
//! ė = v sin ψ
//! ```
//!
//! integrated by explicit Euler. Over a horizon of `N` steps each car maximizes
//! its progress relative to the other with a small input penalty, subject to
//! its dynamics, state and input boxes, and a shared collision-avoidance
//! constraint `d² − ‖P¹_k − P²_k‖² ≤ 0` for `k = 1..N−1`. Car 1 (index 0) has
//! factor `I`, car 2 (index 1) has `αI`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Mul, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::function::{SmoothFn, SmoothKernel};
use crate::game::{build_game, FactorAssignment, FactorRule, GameError, GameSpec, PlayerSpec};
use crate::kkt::{assemble_scaled, AssemblyError, GneSolution, Mcp};
use crate::math::{abs, cos, hypot, sin, tan};
use crate::mcp::{solve, SolveError, SolveReport, SolveStatus, SolverOptions};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RaceError {
    #[error("track needs at least one segment")]
    EmptyTrack,
    #[error("segment {0} must have positive finite length and finite curvature")]
    BadSegment(usize),
    #[error("track half-width must be positive")]
    BadHalfWidth,
    #[error("invalid race parameter: {0}")]
    BadParams(&'static str),
    #[error("expected 1 or 2 cars, got {0}")]
    CarCount(usize),
    #[error("cars start {distance:.4} m apart, closer than the safety distance")]
    InitialCollision { distance: f64 },
    #[error("step solve failed with status {}", .0.name())]
    SolveFailed(SolveStatus),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Solver(#[from] SolveError),
}

/// Center-line piece of constant curvature (`0` for a straight; positive
/// curvature turns left).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub length: f64,
    pub curvature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pose {
    x: f64,
    y: f64,
    heading: f64,
}

/// Center-line point with first and second derivatives of the inertial map
/// `(s, e) ↦ C(s) + e n(s)`.
#[derive(Debug, Clone, Copy)]
struct FrenetPoint {
    p: [f64; 2],
    ds: [f64; 2],
    de: [f64; 2],
    dss: [f64; 2],
    dse: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    segments: Vec<Segment>,
    poses: Vec<Pose>,
    offsets: Vec<f64>,
    pub half_width: f64,
    /// Closed tracks wrap `s` modulo the length; open tracks continue straight
    /// beyond both ends.
    pub closed: bool,
}

impl Track {
    /// Track starting at the origin heading along `+X`.
    pub fn new(segments: Vec<Segment>, half_width: f64, closed: bool) -> Result<Self, RaceError> {
        if segments.is_empty() {
            return Err(RaceError::EmptyTrack);
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(RaceError::BadHalfWidth);
        }
        let mut poses = vec![Pose { x: 0.0, y: 0.0, heading: 0.0 }];
        let mut offsets = vec![0.0];
        for (i, seg) in segments.iter().enumerate() {
            if !(seg.length > 0.0 && seg.length.is_finite() && seg.curvature.is_finite()) {
                return Err(RaceError::BadSegment(i));
            }
            let start = *poses.last().expect("non-empty");
            poses.push(advance(start, seg.curvature, seg.length));
            offsets.push(offsets[i] + seg.length);
        }
        Ok(Self { segments, poses, offsets, half_width, closed })
    }

    pub fn straight(length: f64, half_width: f64) -> Result<Self, RaceError> {
        Self::new(vec![Segment { length, curvature: 0.0 }], half_width, false)
    }

    /// Two 6 m straights joined by a left quarter turn of radius 1 m,
    /// half-width 0.5 m, open.
    pub fn l_shape() -> Self {
        Self::new(
            vec![
                Segment { length: 6.0, curvature: 0.0 },
                Segment { length: core::f64::consts::FRAC_PI_2, curvature: 1.0 },
                Segment { length: 6.0, curvature: 0.0 },
            ],
            0.5,
            false,
        )
        .expect("valid geometry")
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn length(&self) -> f64 {
        *self.offsets.last().expect("non-empty")
    }

    fn wrap(&self, s: f64) -> f64 {
        if self.closed {
            let l = self.length();
            let r = libm::fmod(s, l);
            if r < 0.0 {
                r + l
            } else {
                r
            }
        } else {
            s
        }
    }

    /// Segment index and local arc length; `None` beyond the ends of an open
    /// track (with the pose and overshoot to extend from).
    fn locate(&self, s: f64) -> Result<(usize, f64), (Pose, f64)> {
        let s = self.wrap(s);
        let l = self.length();
        if s < 0.0 {
            return Err((self.poses[0], s));
        }
        if s >= l {
            if self.closed {
                return Ok((self.segments.len() - 1, self.segments.last().expect("non-empty").length));
            }
            return Err((*self.poses.last().expect("non-empty"), s - l));
        }
        let j = self.offsets.partition_point(|&o| o <= s) - 1;
        Ok((j.min(self.segments.len() - 1), s - self.offsets[j]))
    }

    /// Exact center-line curvature.
    pub fn curvature(&self, s: f64) -> f64 {
        match self.locate(s) {
            Ok((j, _)) => self.segments[j].curvature,
            Err(_) => 0.0,
        }
    }

    /// Curvature with each jump replaced by a logistic ramp of the given width,
    /// plus its first two derivatives. Width `0` gives the exact curvature.
    pub fn smoothed_curvature(&self, s: f64, width: f64) -> (f64, f64, f64) {
        if width <= 0.0 {
            return (self.curvature(s), 0.0, 0.0);
        }
        let l = self.length();
        let s = self.wrap(s);
        let shifts: &[f64] = if self.closed { &[-1.0, 0.0, 1.0] } else { &[0.0] };
        let (mut k, mut dk, mut ddk) = (0.0, 0.0, 0.0);
        for (j, seg) in self.segments.iter().enumerate() {
            if seg.curvature == 0.0 {
                continue;
            }
            for &sh in shifts {
                let a = self.offsets[j] + sh * l;
                let b = self.offsets[j + 1] + sh * l;
                let (fa, da, dda) = logistic((s - a) / width);
                let (fb, db, ddb) = logistic((s - b) / width);
                k += seg.curvature * (fa - fb);
                dk += seg.curvature * (da - db) / width;
                ddk += seg.curvature * (dda - ddb) / (width * width);
            }
        }
        (k, dk, ddk)
    }

    /// Center-line position and heading at arc length `s`.
    pub fn centerline(&self, s: f64) -> (f64, f64, f64) {
        let (pose, _) = self.pose_and_curvature(s);
        (pose.x, pose.y, pose.heading)
    }

    fn pose_and_curvature(&self, s: f64) -> (Pose, f64) {
        match self.locate(s) {
            Ok((j, t)) => (advance(self.poses[j], self.segments[j].curvature, t), self.segments[j].curvature),
            Err((from, t)) => (advance(from, 0.0, t), 0.0),
        }
    }

    /// Inertial position of the point at arc length `s` and left offset `e`.
    pub fn frenet_to_inertial(&self, s: f64, e: f64) -> (f64, f64) {
        let p = self.frenet_point(s, e).p;
        (p[0], p[1])
    }

    fn frenet_point(&self, s: f64, e: f64) -> FrenetPoint {
        let (pose, k) = self.pose_and_curvature(s);
        let (st, ct) = (sin(pose.heading), cos(pose.heading));
        let stretch = 1.0 - e * k;
        FrenetPoint {
            p: [pose.x - e * st, pose.y + e * ct],
            ds: [stretch * ct, stretch * st],
            de: [-st, ct],
            dss: [-stretch * k * st, stretch * k * ct],
            dse: [-k * ct, -k * st],
        }
    }
}

fn advance(from: Pose, k: f64, t: f64) -> Pose {
    let (s0, c0) = (sin(from.heading), cos(from.heading));
    if k == 0.0 {
        return Pose { x: from.x + t * c0, y: from.y + t * s0, heading: from.heading };
    }
    let h = from.heading + k * t;
    Pose { x: from.x + (sin(h) - s0) / k, y: from.y - (cos(h) - c0) / k, heading: h }
}

/// Logistic function and its first two derivatives.
fn logistic(x: f64) -> (f64, f64, f64) {
    let f = if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    };
    let d = f * (1.0 - f);
    (f, d, d * (1.0 - 2.0 * f))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarState {
    pub v: f64,
    pub psi: f64,
    pub s: f64,
    pub e: f64,
    pub x: f64,
    pub y: f64,
}

impl CarState {
    /// State at `(s, e)` with the inertial position filled in.
    pub fn on_track(track: &Track, v: f64, psi: f64, s: f64, e: f64) -> Self {
        let (x, y) = track.frenet_to_inertial(s, e);
        Self { v, psi, s, e, x, y }
    }

    pub fn off_track(&self, track: &Track) -> bool {
        abs(self.e) > track.half_width
    }

    pub fn distance(&self, other: &CarState) -> f64 {
        hypot(self.x - other.x, self.y - other.y)
    }

    fn as_array(&self) -> [f64; 6] {
        [self.v, self.psi, self.s, self.e, self.x, self.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CarInput {
    pub accel: f64,
    pub steer: f64,
}

/// Game and vehicle constants. Index `i` of `v_max` belongs to car `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RaceParams {
    pub horizon: usize,
    pub dt: f64,
    pub beta: f64,
    pub d_safe: f64,
    pub wheelbase: f64,
    pub accel_max: f64,
    pub steer_max: f64,
    pub v_max: Vec<f64>,
    /// Width of the logistic ramps that smooth curvature jumps in the
    /// dynamics; `0` keeps them sharp.
    pub curvature_smoothing: f64,
}

impl Default for RaceParams {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 0.1,
            beta: 0.1,
            d_safe: 0.4,
            wheelbase: 0.25,
            accel_max: 3.0,
            steer_max: 0.4,
            v_max: vec![2.85, 3.0],
            curvature_smoothing: 0.5,
        }
    }
}

impl RaceParams {
    pub fn validate(&self, cars: usize) -> Result<(), RaceError> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if self.horizon < 1 {
            return Err(RaceError::BadParams("horizon must be at least 1"));
        }
        if !pos(self.dt) {
            return Err(RaceError::BadParams("dt must be positive"));
        }
        if !pos(self.d_safe) {
            return Err(RaceError::BadParams("d_safe must be positive"));
        }
        if !(pos(self.beta) && pos(self.wheelbase) && pos(self.accel_max) && pos(self.steer_max)) {
            return Err(RaceError::BadParams("beta, wheelbase and input bounds must be positive"));
        }
        if self.steer_max >= core::f64::consts::FRAC_PI_2 {
            return Err(RaceError::BadParams("steer_max must be below π/2"));
        }
        if self.v_max.len() < cars || !self.v_max.iter().all(|&v| pos(v)) {
            return Err(RaceError::BadParams("need a positive top speed per car"));
        }
        if !(self.curvature_smoothing >= 0.0) {
            return Err(RaceError::BadParams("curvature_smoothing must be non-negative"));
        }
        Ok(())
    }

    pub fn clip(&self, u: CarInput) -> CarInput {
        CarInput {
            accel: u.accel.clamp(-self.accel_max, self.accel_max),
            steer: u.steer.clamp(-self.steer_max, self.steer_max),
        }
    }
}

/// `(ė, ṡ, ψ̇)` of the Frenet bicycle.
fn rates(track: &Track, params: &RaceParams, v: f64, psi: f64, s: f64, e: f64, steer: f64) -> (f64, f64, f64) {
    let (k, _, _) = track.smoothed_curvature(s, params.curvature_smoothing);
    let sdot = v * cos(psi) / (1.0 - e * k);
    let edot = v * sin(psi);
    let psidot = v / params.wheelbase * tan(steer) - k * sdot;
    (edot, sdot, psidot)
}

/// One explicit-Euler step. The inertial position is recomputed from `(s, e)`.
pub fn bicycle_step(state: &CarState, input: &CarInput, track: &Track, params: &RaceParams) -> CarState {
    let dt = params.dt;
    let (edot, sdot, psidot) = rates(track, params, state.v, state.psi, state.s, state.e, input.steer);
    CarState::on_track(
        track,
        state.v + dt * input.accel,
        state.psi + dt * psidot,
        state.s + dt * sdot,
        state.e + dt * edot,
    )
}

/// Value, gradient and Hessian in five variables, propagated forward.
#[derive(Debug, Clone, Copy)]
struct Jet {
    v: f64,
    g: [f64; 5],
    h: [[f64; 5]; 5],
}

impl Jet {
    fn cst(v: f64) -> Self {
        Self { v, g: [0.0; 5], h: [[0.0; 5]; 5] }
    }

    fn var(i: usize, v: f64) -> Self {
        let mut j = Self::cst(v);
        j.g[i] = 1.0;
        j
    }

    /// `f(self)` given `f`, `f'`, `f''` at `self.v`.
    fn chain(self, f: f64, d1: f64, d2: f64) -> Self {
        let mut out = Self::cst(f);
        for a in 0..5 {
            out.g[a] = d1 * self.g[a];
            for b in 0..5 {
                out.h[a][b] = d1 * self.h[a][b] + d2 * self.g[a] * self.g[b];
            }
        }
        out
    }

    fn sin(self) -> Self {
        let (s, c) = (sin(self.v), cos(self.v));
        self.chain(s, c, -s)
    }

    fn cos(self) -> Self {
        let (s, c) = (sin(self.v), cos(self.v));
        self.chain(c, -s, -c)
    }

    fn tan(self) -> Self {
        let t = tan(self.v);
        let sec2 = 1.0 + t * t;
        self.chain(t, sec2, 2.0 * t * sec2)
    }

    fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }

    fn scale(self, c: f64) -> Self {
        let mut out = self;
        out.v *= c;
        for a in 0..5 {
            out.g[a] *= c;
            for b in 0..5 {
                out.h[a][b] *= c;
            }
        }
        out
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, o: Jet) -> Jet {
        self.v += o.v;
        for a in 0..5 {
            self.g[a] += o.g[a];
            for b in 0..5 {
                self.h[a][b] += o.h[a][b];
            }
        }
        self
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + o.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let mut out = Jet::cst(self.v * o.v);
        for a in 0..5 {
            out.g[a] = self.g[a] * o.v + o.g[a] * self.v;
            for b in 0..5 {
                out.h[a][b] =
                    self.h[a][b] * o.v + o.h[a][b] * self.v + self.g[a] * o.g[b] + o.g[a] * self.g[b];
            }
        }
        out
    }
}

/// Which Euler row a [`StepRow`] encodes; the payload is the index of the
/// integrated quantity in `y = [v, ψ, s, e, δ]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rate {
    Heading,
    Progress,
    Lateral,
}

impl Rate {
    fn own(self) -> usize {
        match self {
            Rate::Heading => 1,
            Rate::Progress => 2,
            Rate::Lateral => 3,
        }
    }

    fn uses(self) -> [bool; 5] {
        match self {
            Rate::Heading => [true; 5],
            Rate::Progress => [true, true, true, true, false],
            Rate::Lateral => [true, true, false, true, false],
        }
    }
}

/// `next − y_own − Δt·rate(y)` with local arguments `[next, free y…]`.
struct StepRow {
    rate: Rate,
    fixed: [Option<f64>; 5],
    free: Vec<usize>,
    track: Arc<Track>,
    params: RaceParams,
}

impl StepRow {
    fn jet(&self, local: &[f64]) -> (Jet, f64) {
        let mut y = [Jet::cst(0.0); 5];
        let mut slot = 1;
        for i in 0..5 {
            y[i] = match self.fixed[i] {
                Some(c) => Jet::cst(c),
                None if self.free.contains(&i) => {
                    let j = Jet::var(i, local[slot]);
                    slot += 1;
                    j
                }
                None => Jet::cst(0.0),
            };
        }
        let [v, psi, s, e, steer] = y;
        let f = match self.rate {
            Rate::Lateral => v * psi.sin(),
            Rate::Progress | Rate::Heading => {
                let (k0, k1, k2) = self.track.smoothed_curvature(s.v, self.params.curvature_smoothing);
                let kappa = s.chain(k0, k1, k2);
                let sdot = v * psi.cos() * (Jet::cst(1.0) - e * kappa).recip();
                if self.rate == Rate::Progress {
                    sdot
                } else {
                    (v * steer.tan()).scale(1.0 / self.params.wheelbase) - kappa * sdot
                }
            }
        };
        (f, y[self.rate.own()].v)
    }
}

impl SmoothKernel for StepRow {
    fn arity(&self) -> usize {
        1 + self.free.len()
    }

    fn value(&self, y: &[f64]) -> f64 {
        let (f, own) = self.jet(y);
        y[0] - own - self.params.dt * f.v
    }

    fn gradient(&self, y: &[f64], grad: &mut [f64]) {
        let (f, _) = self.jet(y);
        grad[0] = 1.0;
        for (slot, &i) in self.free.iter().enumerate() {
            let own = if i == self.rate.own() { 1.0 } else { 0.0 };
            grad[1 + slot] = -own - self.params.dt * f.g[i];
        }
    }

    fn hessian(&self, y: &[f64], hess: &mut [f64]) -> bool {
        let (f, _) = self.jet(y);
        let k = self.arity();
        hess.iter_mut().for_each(|v| *v = 0.0);
        for (a, &i) in self.free.iter().enumerate() {
            for (b, &j) in self.free.iter().enumerate() {
                hess[(1 + a) * k + 1 + b] = -self.params.dt * f.h[i][j];
            }
        }
        true
    }
}

/// `P − P_c(s, e)` for one inertial coordinate, arguments `[P, s, e]`.
struct FrenetRow {
    coord: usize,
    track: Arc<Track>,
}

impl SmoothKernel for FrenetRow {
    fn arity(&self) -> usize {
        3
    }

    fn value(&self, y: &[f64]) -> f64 {
        y[0] - self.track.frenet_point(y[1], y[2]).p[self.coord]
    }

    fn gradient(&self, y: &[f64], grad: &mut [f64]) {
        let fp = self.track.frenet_point(y[1], y[2]);
        grad[0] = 1.0;
        grad[1] = -fp.ds[self.coord];
        grad[2] = -fp.de[self.coord];
    }

    fn hessian(&self, y: &[f64], hess: &mut [f64]) -> bool {
        let fp = self.track.frenet_point(y[1], y[2]);
        hess.iter_mut().for_each(|v| *v = 0.0);
        hess[4] = -fp.dss[self.coord];
        hess[5] = -fp.dse[self.coord];
        hess[7] = -fp.dse[self.coord];
        true
    }
}

/// Components of the per-step state block.
const V: usize = 0;
const PSI: usize = 1;
const S: usize = 2;
const E: usize = 3;
const X: usize = 4;
const Y: usize = 5;

/// Assembled horizon game for the current states.
#[derive(Debug, Clone)]
pub struct RaceGame {
    pub game: GameSpec,
    pub factors: FactorAssignment,
    pub params: RaceParams,
    pub track: Arc<Track>,
    pub initial: Vec<CarState>,
    pub alpha: f64,
}

/// Builds the horizon game for one or two cars. Two cars must start at least
/// `d_safe` apart.
pub fn build_race_game(
    track: &Arc<Track>,
    states: &[CarState],
    params: &RaceParams,
    alpha: f64,
) -> Result<RaceGame, RaceError> {
    if states.len() == 2 {
        let distance = states[0].distance(&states[1]);
        if distance < params.d_safe {
            return Err(RaceError::InitialCollision { distance });
        }
    }
    assemble_race_game(track, states, params, alpha)
}

fn assemble_race_game(
    track: &Arc<Track>,
    states: &[CarState],
    params: &RaceParams,
    alpha: f64,
) -> Result<RaceGame, RaceError> {
    let cars = states.len();
    if !(1..=2).contains(&cars) {
        return Err(RaceError::CarCount(cars));
    }
    params.validate(cars)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(RaceError::BadParams("alpha must be positive"));
    }
    let n = params.horizon;
    let per_car = 8 * n;
    let sv = |car: usize, k: usize, c: usize| car * per_car + 6 * (k - 1) + c;
    let iv = |car: usize, k: usize, c: usize| car * per_car + 6 * n + 2 * k + c;

    let mut players = Vec::with_capacity(cars);
    for car in 0..cars {
        // cost: −s_N + s_N(other) + β/2 Σ‖u‖²
        let mut support: Vec<usize> = (0..2 * n).map(|j| car * per_car + 6 * n + j).collect();
        support.push(sv(car, n, S));
        let mut lin = vec![0.0; 2 * n];
        lin.push(-1.0);
        if cars == 2 {
            support.push(sv(1 - car, n, S));
            lin.push(1.0);
        }
        let k = support.len();
        let mut q = vec![0.0; k * k];
        for j in 0..2 * n {
            q[j * k + j] = params.beta;
        }
        let mut player = PlayerSpec::new(per_car, SmoothFn::quadratic(support, q, lin, 0.0));

        let x0 = states[car];
        for k in 0..n {
            let cur = |c: usize| if k == 0 { None } else { Some(sv(car, k, c)) };
            let fixed0 = [x0.v, x0.psi, x0.s, x0.e];
            // speed row is linear
            let mut sup = vec![sv(car, k + 1, V), iv(car, k, 0)];
            let mut coef = vec![1.0, -params.dt];
            let mut constant = 0.0;
            match cur(V) {
                Some(idx) => {
                    sup.push(idx);
                    coef.push(-1.0);
                }
                None => constant = -x0.v,
            }
            player = player.with_eq(SmoothFn::linear(sup, coef, constant));

            for (rate, comp) in [(Rate::Heading, PSI), (Rate::Progress, S), (Rate::Lateral, E)] {
                let mut fixed = [None; 5];
                let mut free = Vec::new();
                let mut support = vec![sv(car, k + 1, comp)];
                for (i, used) in rate.uses().into_iter().enumerate() {
                    if !used {
                        continue;
                    }
                    if i < 4 && k == 0 {
                        fixed[i] = Some(fixed0[i]);
                    } else {
                        free.push(i);
                        support.push(if i < 4 { sv(car, k, i) } else { iv(car, k, 1) });
                    }
                }
                let row = StepRow { rate, fixed, free, track: track.clone(), params: params.clone() };
                player = player.with_eq(SmoothFn::from_kernel(support, Arc::new(row)));
            }
            for (coord, comp) in [(0, X), (1, Y)] {
                let support = vec![sv(car, k + 1, comp), sv(car, k + 1, S), sv(car, k + 1, E)];
                player = player.with_eq(SmoothFn::from_kernel(support, Arc::new(FrenetRow { coord, track: track.clone() })));
            }

            let h = track.half_width;
            let (e, v) = (sv(car, k + 1, E), sv(car, k + 1, V));
            let (a, d) = (iv(car, k, 0), iv(car, k, 1));
            // e_1 does not depend on any input, so its bounds would only be
            // constant (and degenerate when active); keep the rows as inert
            // placeholders to preserve the per-step layout
            let (upper, lower) = if k == 0 {
                (SmoothFn::constant(-h), SmoothFn::constant(-h))
            } else {
                (SmoothFn::linear(vec![e], vec![1.0], -h), SmoothFn::linear(vec![e], vec![-1.0], -h))
            };
            player = player
                .with_ineq(upper)
                .with_ineq(lower)
                .with_ineq(SmoothFn::linear(vec![v], vec![-1.0], 0.0))
                .with_ineq(SmoothFn::linear(vec![v], vec![1.0], -params.v_max[car]))
                .with_ineq(SmoothFn::linear(vec![a], vec![1.0], -params.accel_max))
                .with_ineq(SmoothFn::linear(vec![a], vec![-1.0], -params.accel_max))
                .with_ineq(SmoothFn::linear(vec![d], vec![1.0], -params.steer_max))
                .with_ineq(SmoothFn::linear(vec![d], vec![-1.0], -params.steer_max));
        }
        players.push(player);
    }

    let mut shared = Vec::new();
    if cars == 2 {
        let d2 = params.d_safe * params.d_safe;
        #[rustfmt::skip]
        let q = vec![
            -2.0, 0.0, 2.0, 0.0,
            0.0, -2.0, 0.0, 2.0,
            2.0, 0.0, -2.0, 0.0,
            0.0, 2.0, 0.0, -2.0,
        ];
        for k in 1..n {
            let support = vec![sv(0, k, X), sv(0, k, Y), sv(1, k, X), sv(1, k, Y)];
            shared.push(SmoothFn::quadratic(support, q.clone(), vec![0.0; 4], d2));
        }
    }
    let game = build_game(players, shared)?;
    let m0 = game.num_shared();
    let factors = if cars == 2 {
        FactorAssignment::new(vec![vec![1.0; m0], vec![alpha; m0]], FactorRule::FirstPlayerIdentity)
            .map_err(|_| RaceError::BadParams("alpha must be positive"))?
    } else {
        FactorAssignment::identity(1, 0)
    };
    Ok(RaceGame { game, factors, params: params.clone(), track: track.clone(), initial: states.to_vec(), alpha })
}

impl RaceGame {
    pub fn cars(&self) -> usize {
        self.initial.len()
    }

    fn per_car(&self) -> usize {
        8 * self.params.horizon
    }

    /// Global index of state component `c` of `car` at step `k ∈ 1..=N`.
    pub fn state_index(&self, car: usize, k: usize, c: usize) -> usize {
        car * self.per_car() + 6 * (k - 1) + c
    }

    /// Global index of input component `c` (0 accel, 1 steer) at step `k ∈ 0..N`.
    pub fn input_index(&self, car: usize, k: usize, c: usize) -> usize {
        car * self.per_car() + 6 * self.params.horizon + 2 * k + c
    }

    /// Simple driver used to seed the solver: full throttle toward the top
    /// speed and the steering that keeps the current lateral offset.
    pub fn nominal_input(&self, car: usize, state: &CarState) -> CarInput {
        let p = &self.params;
        let (k, _, _) = self.track.smoothed_curvature(state.s, p.curvature_smoothing);
        let steer = libm::atan(p.wheelbase * k / (1.0 - state.e * k)) - 0.5 * state.psi;
        p.clip(CarInput { accel: (p.v_max[car] - state.v) / p.dt, steer })
    }

    /// Starting point: nominal rollout for both cars, equality multipliers 0,
    /// inequality and shared multipliers 0.1.
    pub fn initial_guess(&self) -> Vec<f64> {
        let mcp = assemble_scaled(&self.game, &self.factors).expect("factors match the game");
        let layout = mcp.layout();
        let mut z = vec![0.1; layout.dim];
        for r in &layout.mu {
            z[r.clone()].iter_mut().for_each(|v| *v = 0.0);
        }
        for car in 0..self.cars() {
            let mut st = self.initial[car];
            for k in 0..self.params.horizon {
                let u = self.nominal_input(car, &st);
                st = bicycle_step(&st, &u, &self.track, &self.params);
                z[self.input_index(car, k, 0)] = u.accel;
                z[self.input_index(car, k, 1)] = u.steer;
                for (c, v) in st.as_array().into_iter().enumerate() {
                    z[self.state_index(car, k + 1, c)] = v;
                }
            }
        }
        z
    }

    /// Shifts a previous solution one step forward in time to warm-start this
    /// game. `previous` must come from a game with the same car count and
    /// horizon.
    pub fn shift(&self, previous: &[f64]) -> Vec<f64> {
        let mcp = assemble_scaled(&self.game, &self.factors).expect("factors match the game");
        let layout = mcp.layout().clone();
        let n = self.params.horizon;
        let mut z = previous.to_vec();
        let shift_blocks = |z: &mut [f64], start: usize, width: usize, blocks: usize| {
            for k in 0..blocks.saturating_sub(1) {
                for c in 0..width {
                    z[start + k * width + c] = previous[start + (k + 1) * width + c];
                }
            }
        };
        for car in 0..self.cars() {
            shift_blocks(&mut z, self.state_index(car, 1, 0), 6, n);
            shift_blocks(&mut z, self.input_index(car, 0, 0), 2, n);
            shift_blocks(&mut z, layout.mu[car].start, 6, n);
            shift_blocks(&mut z, layout.lambda[car].start, 8, n);
            // re-integrate the last step so the tail is dynamically consistent
            let last = if n >= 2 { self.state_at(&z, car, n - 1) } else { self.initial[car] };
            let u = CarInput { accel: z[self.input_index(car, n - 1, 0)], steer: z[self.input_index(car, n - 1, 1)] };
            let next = bicycle_step(&last, &self.params.clip(u), &self.track, &self.params);
            for (c, v) in next.as_array().into_iter().enumerate() {
                z[self.state_index(car, n, c)] = v;
            }
        }
        if let Some(r) = layout.sigma.first() {
            shift_blocks(&mut z, r.start, 1, r.len());
        }
        z
    }

    /// Planned state of `car` at step `k ∈ 1..=N`.
    pub fn state_at(&self, z: &[f64], car: usize, k: usize) -> CarState {
        let g = |c: usize| z[self.state_index(car, k, c)];
        CarState { v: g(V), psi: g(PSI), s: g(S), e: g(E), x: g(X), y: g(Y) }
    }

    pub fn input_at(&self, z: &[f64], car: usize, k: usize) -> CarInput {
        CarInput { accel: z[self.input_index(car, k, 0)], steer: z[self.input_index(car, k, 1)] }
    }

    /// Planned trajectory of `car`, initial state included.
    pub fn plan(&self, z: &[f64], car: usize) -> Vec<CarState> {
        let mut out = vec![self.initial[car]];
        out.extend((1..=self.params.horizon).map(|k| self.state_at(z, car, k)));
        out
    }

    /// Smallest distance between the cars over the constrained steps `1..N−1`.
    pub fn min_planned_distance(&self, z: &[f64]) -> Option<f64> {
        (self.cars() == 2 && self.params.horizon > 1).then(|| {
            (1..self.params.horizon)
                .map(|k| self.state_at(z, 0, k).distance(&self.state_at(z, 1, k)))
                .fold(f64::INFINITY, f64::min)
        })
    }
}

/// Converged open-loop equilibrium of one horizon game.
#[derive(Debug, Clone)]
pub struct StepSolution {
    pub report: SolveReport,
    pub solution: GneSolution,
    /// Starts tried before one converged.
    pub attempts: usize,
}

/// Solves the horizon game from `warm` if given, then from the nominal
/// rollout, then from the rollout with larger multipliers.
pub fn solve_step(race: &RaceGame, warm: Option<&[f64]>, options: &SolverOptions) -> Result<StepSolution, RaceError> {
    let mcp = assemble_scaled(&race.game, &race.factors)?;
    let nominal = race.initial_guess();
    let mut heavy = nominal.clone();
    let layout = mcp.layout();
    for r in layout.lambda.iter().chain(&layout.sigma) {
        heavy[r.clone()].iter_mut().for_each(|v| *v = 1.0);
    }
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = warm.filter(|w| w.len() == mcp.dim()) {
        starts.push(w.to_vec());
    }
    starts.push(nominal);
    starts.push(heavy);
    let mut last = SolveStatus::MaxIters;
    for (i, start) in starts.iter().enumerate() {
        let report = solve(&mcp, options, Some(start))?;
        if report.converged() {
            let solution = GneSolution::from_scaled(&race.game, &race.factors, &report.z)?;
            return Ok(StepSolution { report, solution, attempts: i + 1 });
        }
        last = report.status;
    }
    Err(RaceError::SolveFailed(last))
}

/// Per-car, per-step record of a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub car: usize,
    pub status: SolveStatus,
    pub iterations: usize,
    pub attempts: usize,
    /// The car reused its previous input because no solve converged.
    pub degraded: bool,
    pub input: CarInput,
}

#[derive(Debug, Clone)]
pub struct RaceOutcome {
    /// `trajectories[car][t]`, initial state included.
    pub trajectories: Vec<Vec<CarState>>,
    /// `inputs[car][t]` applied between `t` and `t + 1`.
    pub inputs: Vec<Vec<CarInput>>,
    pub steps: Vec<StepRecord>,
    /// Index of the ego car (the last one).
    pub ego: usize,
    pub final_s: Vec<f64>,
    /// Ego ahead of the opponent at the end (always true without an opponent).
    pub ego_wins: bool,
    pub degraded: bool,
    /// Smallest distance between the cars along the run.
    pub min_distance: Option<f64>,
}

/// Closed-loop race: every step each car solves its own horizon game (the ego,
/// last car, with factor `alpha_ego`; the opponent with `alpha_opponent_model`),
/// applies its first input, and both cars advance by [`bicycle_step`].
pub fn simulate_closed_loop(
    track: &Arc<Track>,
    initial: &[CarState],
    params: &RaceParams,
    alpha_ego: f64,
    alpha_opponent_model: f64,
    duration: f64,
    options: &SolverOptions,
) -> Result<RaceOutcome, RaceError> {
    let cars = initial.len();
    build_race_game(track, initial, params, alpha_ego)?;
    build_race_game(track, initial, params, alpha_opponent_model)?;
    let ego = cars - 1;
    let steps = libm::round(duration / params.dt) as usize;
    let mut states = initial.to_vec();
    let mut trajectories: Vec<Vec<CarState>> = states.iter().map(|s| vec![*s]).collect();
    let mut inputs: Vec<Vec<CarInput>> = vec![Vec::with_capacity(steps); cars];
    let mut records = Vec::with_capacity(steps * cars);
    let mut warm: Vec<Option<Vec<f64>>> = vec![None; cars];
    let mut held = vec![CarInput::default(); cars];
    let mut degraded = false;
    let mut min_distance = (cars == 2).then(|| states[0].distance(&states[1]));

    for t in 0..steps {
        let alphas: Vec<f64> = (0..cars).map(|c| if c == ego { alpha_ego } else { alpha_opponent_model }).collect();
        let mut shared_solve: Option<(f64, Result<(StepSolution, RaceGame), RaceError>)> = None;
        let mut applied = vec![CarInput::default(); cars];
        for car in 0..cars {
            let alpha = alphas[car];
            let outcome = match &shared_solve {
                Some((a, res)) if *a == alpha => res.clone(),
                _ => {
                    let res = assemble_race_game(track, &states, params, alpha).and_then(|race| {
                        let start = warm[car].as_ref().map(|z| race.shift(z));
                        solve_step(&race, start.as_deref(), options).map(|s| (s, race))
                    });
                    shared_solve = Some((alpha, res.clone()));
                    res
                }
            };
            let record = match outcome {
                Ok((sol, race)) => {
                    let u = params.clip(race.input_at(&sol.report.z, car, 0));
                    warm[car] = Some(sol.report.z.clone());
                    held[car] = u;
                    StepRecord {
                        step: t,
                        car,
                        status: sol.report.status,
                        iterations: sol.report.iterations,
                        attempts: sol.attempts,
                        degraded: false,
                        input: u,
                    }
                }
                Err(e) => {
                    degraded = true;
                    warm[car] = None;
                    let status = match e {
                        RaceError::SolveFailed(s) => s,
                        _ => SolveStatus::Singular,
                    };
                    StepRecord { step: t, car, status, iterations: 0, attempts: 3, degraded: true, input: held[car] }
                }
            };
            applied[car] = record.input;
            records.push(record);
        }
        for car in 0..cars {
            states[car] = bicycle_step(&states[car], &applied[car], track, params);
            trajectories[car].push(states[car]);
            inputs[car].push(applied[car]);
        }
        if let Some(m) = min_distance.as_mut() {
            *m = m.min(states[0].distance(&states[1]));
        }
    }
    let final_s: Vec<f64> = states.iter().map(|s| s.s).collect();
    let ego_wins = cars == 1 || final_s[ego] > final_s[0];
    Ok(RaceOutcome { trajectories, inputs, steps: records, ego, final_s, ego_wins, degraded, min_distance })
}

/// Sampling ranges for the Monte Carlo initial conditions. Lateral ranges are
/// fractions of the track half-width.
#[derive(Debug, Clone, PartialEq)]
pub struct McRanges {
    /// Opponent arc length as a fraction of the track length.
    pub opponent_position: (f64, f64),
    pub ego_relative_position: (f64, f64),
    pub opponent_speed: (f64, f64),
    pub ego_relative_speed: (f64, f64),
    pub ego_lateral: (f64, f64),
    pub opponent_relative_lateral: (f64, f64),
}

impl Default for McRanges {
    fn default() -> Self {
        Self {
            opponent_position: (0.0, 1.0),
            ego_relative_position: (-1.75, -1.5),
            opponent_speed: (1.0, 2.0),
            ego_relative_speed: (0.25, 0.75),
            ego_lateral: (-1.0 / 3.0, 1.0 / 3.0),
            opponent_relative_lateral: (-1.0 / 8.0, 1.0 / 8.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct McConfig {
    pub track: Arc<Track>,
    pub params: RaceParams,
    /// Ego factor in the baseline runs.
    pub baseline_alpha: f64,
    /// Ego factor in the compared runs.
    pub ego_alpha: f64,
    /// Factor the opponent assumes in its own game.
    pub opponent_model_alpha: f64,
    pub duration: f64,
    pub ranges: McRanges,
    pub solver: SolverOptions,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            track: Arc::new(Track::l_shape()),
            params: RaceParams::default(),
            baseline_alpha: 1.0,
            ego_alpha: 0.05,
            opponent_model_alpha: 1.0,
            duration: 2.0,
            ranges: McRanges::default(),
            solver: SolverOptions::default(),
        }
    }
}

/// Initial conditions of one paired run: `[opponent, ego]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McDraw {
    pub run: usize,
    pub cars: [CarState; 2],
}

/// Draws `n_runs` initial conditions from one ChaCha stream seeded with `seed`.
pub fn draw_initial_conditions(config: &McConfig, n_runs: usize, seed: u64) -> Vec<McDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &config.ranges;
    let h = config.track.half_width;
    let l = config.track.length();
    let mut uniform = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
    (0..n_runs)
        .map(|run| {
            let s_opp = l * uniform(r.opponent_position);
            let s_ego = s_opp + uniform(r.ego_relative_position);
            let v_opp = uniform(r.opponent_speed);
            let v_ego = v_opp + uniform(r.ego_relative_speed);
            let e_ego = h * uniform(r.ego_lateral);
            let e_opp = e_ego + h * uniform(r.opponent_relative_lateral);
            McDraw {
                run,
                cars: [
                    CarState::on_track(&config.track, v_opp, 0.0, s_opp, e_opp),
                    CarState::on_track(&config.track, v_ego, 0.0, s_ego, e_ego),
                ],
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunVerdict {
    pub win: bool,
    /// Some step fell back to a held input, or the run could not start.
    pub failed: bool,
    /// Ego arc length minus opponent arc length at the end.
    pub final_gap: f64,
    pub degraded_steps: usize,
}

impl RunVerdict {
    fn from_outcome(o: &RaceOutcome) -> Self {
        let degraded_steps = o.steps.iter().filter(|r| r.degraded).count();
        Self {
            win: o.ego_wins,
            failed: o.degraded,
            final_gap: o.final_s[o.ego] - o.final_s[0],
            degraded_steps,
        }
    }

    fn aborted() -> Self {
        Self { win: false, failed: true, final_gap: f64::NAN, degraded_steps: 0 }
    }
}

/// One initial condition replayed under both ego strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct McRun {
    pub draw: McDraw,
    pub baseline: RunVerdict,
    pub aggressive: RunVerdict,
}

pub fn run_verdict(config: &McConfig, draw: &McDraw, alpha_ego: f64) -> RunVerdict {
    simulate_closed_loop(
        &config.track,
        &draw.cars,
        &config.params,
        alpha_ego,
        config.opponent_model_alpha,
        config.duration,
        &config.solver,
    )
    .map(|o| RunVerdict::from_outcome(&o))
    .unwrap_or_else(|_| RunVerdict::aborted())
}

pub fn run_pair(config: &McConfig, draw: &McDraw) -> McRun {
    McRun {
        draw: *draw,
        baseline: run_verdict(config, draw, config.baseline_alpha),
        aggressive: run_verdict(config, draw, config.ego_alpha),
    }
}

/// Win counts per strategy; failed runs are left out of the rates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct McSummary {
    pub runs: usize,
    pub baseline_wins: usize,
    pub baseline_failures: usize,
    pub aggressive_wins: usize,
    pub aggressive_failures: usize,
}

impl McSummary {
    pub fn from_runs(runs: &[McRun]) -> Self {
        let mut s = Self { runs: runs.len(), ..Self::default() };
        for r in runs {
            if r.baseline.failed {
                s.baseline_failures += 1;
            } else if r.baseline.win {
                s.baseline_wins += 1;
            }
            if r.aggressive.failed {
                s.aggressive_failures += 1;
            } else if r.aggressive.win {
                s.aggressive_wins += 1;
            }
        }
        s
    }

    fn rate(wins: usize, runs: usize, failures: usize) -> Option<f64> {
        let n = runs - failures;
        (n > 0).then(|| wins as f64 / n as f64)
    }

    pub fn baseline_rate(&self) -> Option<f64> {
        Self::rate(self.baseline_wins, self.runs, self.baseline_failures)
    }

    pub fn aggressive_rate(&self) -> Option<f64> {
        Self::rate(self.aggressive_wins, self.runs, self.aggressive_failures)
    }
}

/// Sequential Monte Carlo study over paired draws.
pub fn monte_carlo(config: &McConfig, n_runs: usize, seed: u64) -> (McSummary, Vec<McRun>) {
    let runs: Vec<McRun> = draw_initial_conditions(config, n_runs, seed).iter().map(|d| run_pair(config, d)).collect();
    (McSummary::from_runs(&runs), runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: &SmoothFn, x: &[f64]) {
        assert!(crate::function::gradient_fd_mismatch(f, x) < 1e-6);
        let y = f.gather(x);
        let k = y.len();
        let mut h = vec![0.0; k * k];
        f.hessian_local(&y, &mut h);
        for j in 0..k {
            let step = 1e-6 * (1.0 + abs(y[j]));
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[j] += step;
            ym[j] -= step;
            let (mut gp, mut gm) = (vec![0.0; k], vec![0.0; k]);
            f.gradient_local(&yp, &mut gp);
            f.gradient_local(&ym, &mut gm);
            for i in 0..k {
                let fd = (gp[i] - gm[i]) / (2.0 * step);
                assert!(abs(fd - h[i * k + j]) < 1e-5 * (1.0 + abs(fd)), "H[{i},{j}] {} vs {fd}", h[i * k + j]);
            }
        }
    }

    #[test]
    fn straight_step() {
        let t = Track::straight(10.0, 0.5).unwrap();
        let p = RaceParams::default();
        let x = CarState::on_track(&t, 1.0, 0.0, 2.0, 0.1);
        let n = bicycle_step(&x, &CarInput::default(), &t, &p);
        assert!(abs(n.s - 2.1) < 1e-15 && n.e == 0.1 && n.psi == 0.0 && n.v == 1.0);
        let n = bicycle_step(&x, &CarInput { accel: 2.0, steer: 0.0 }, &t, &p);
        assert!(abs(n.v - 1.2) < 1e-15);
        let still = CarState::on_track(&t, 0.0, 0.0, 2.0, 0.1);
        assert_eq!(bicycle_step(&still, &CarInput::default(), &t, &p), still);
    }

    #[test]
    fn l_track_geometry() {
        let t = Track::l_shape();
        assert!(abs(t.length() - (12.0 + core::f64::consts::FRAC_PI_2)) < 1e-15);
        let (x, y, h) = t.centerline(t.length());
        assert!(abs(x - 7.0) < 1e-12 && abs(y - 7.0) < 1e-12 && abs(h - core::f64::consts::FRAC_PI_2) < 1e-12);
        // beyond the ends the track continues straight
        let (x, y) = t.frenet_to_inertial(-1.0, 0.2);
        assert!(abs(x + 1.0) < 1e-15 && abs(y - 0.2) < 1e-15);
        let (x, y) = t.frenet_to_inertial(t.length() + 1.0, 0.0);
        assert!(abs(x - 7.0) < 1e-12 && abs(y - 8.0) < 1e-12);
        let (k, _, _) = t.smoothed_curvature(6.0 + 0.78, 0.05);
        assert!(abs(k - 1.0) < 1e-6);
        assert_eq!(t.curvature(3.0), 0.0);
    }

    #[test]
    fn jet_rates_match_plain() {
        let t = Arc::new(Track::l_shape());
        let p = RaceParams::default();
        for &(v, psi, s, e, d) in &[(1.3, 0.1, 5.98, 0.2, 0.1), (2.0, -0.2, 6.5, -0.3, -0.3), (0.5, 0.0, 1.0, 0.0, 0.0)] {
            let (ed, sd, pd) = rates(&t, &p, v, psi, s, e, d);
            for (rate, want) in [(Rate::Lateral, ed), (Rate::Progress, sd), (Rate::Heading, pd)] {
                let free: Vec<usize> = (0..5).filter(|&i| rate.uses()[i]).collect();
                let row = StepRow { rate, fixed: [None; 5], free: free.clone(), track: t.clone(), params: p.clone() };
                let y = [v, psi, s, e, d];
                let mut local = vec![0.0];
                local.extend(free.iter().map(|&i| y[i]));
                let (f, _) = row.jet(&local);
                assert!(abs(f.v - want) < 1e-14);
            }
        }
    }

    #[test]
    fn kernels_match_finite_differences() {
        let track = Arc::new(Track::l_shape());
        let p = RaceParams::default();
        let a = CarState::on_track(&track, 1.5, 0.05, 5.7, 0.1);
        let b = CarState::on_track(&track, 2.0, -0.05, 4.5, -0.2);
        let race = build_race_game(&track, &[a, b], &p, 0.5).unwrap();
        let mut z = race.initial_guess();
        // perturb off the rollout so every term is exercised
        for (i, v) in z.iter_mut().enumerate() {
            *v += 1e-3 * ((i * 7919 % 13) as f64 - 6.0);
        }
        let x = &z[..race.game.dim()];
        for player in race.game.players() {
            for h in &player.eq_constraints {
                fd_check(h, x);
            }
        }
    }

    #[test]
    fn far_apart_cars_decouple() {
        let track = Arc::new(Track::straight(40.0, 0.5).unwrap());
        let p = RaceParams::default();
        let a = CarState::on_track(&track, 2.0, 0.0, 20.0, 0.0);
        let b = CarState::on_track(&track, 2.0, 0.0, 0.0, 0.0);
        let race = build_race_game(&track, &[a, b], &p, 1.0).unwrap();
        let sol = solve_step(&race, None, &SolverOptions::default()).unwrap();
        assert!(sol.solution.sigma.iter().all(|&s| s < 1e-8));
        // straight line, throttle tapering off toward the end of the horizon
        let mut prev = f64::INFINITY;
        for k in 0..p.horizon {
            let u = race.input_at(&sol.report.z, 1, k);
            let want = p.dt * p.dt * (p.horizon - 1 - k) as f64 / p.beta;
            assert!(abs(u.accel - want) < 1e-6 && abs(u.steer) < 1e-8, "k={k} {u:?} want {want}");
            assert!(u.accel <= prev);
            prev = u.accel;
        }
    }

    #[test]
    fn symmetric_start_gives_mirrored_plans() {
        let track = Arc::new(Track::straight(40.0, 0.5).unwrap());
        let mut p = RaceParams::default();
        p.v_max = vec![3.0, 3.0];
        let a = CarState::on_track(&track, 2.0, 0.0, 5.0, 0.22);
        let b = CarState::on_track(&track, 2.0, 0.0, 5.0, -0.22);
        let race = build_race_game(&track, &[a, b], &p, 1.0).unwrap();
        let sol = solve_step(&race, None, &SolverOptions::default()).unwrap();
        for k in 1..=p.horizon {
            let (s1, s2) = (race.state_at(&sol.report.z, 0, k), race.state_at(&sol.report.z, 1, k));
            assert!(abs(s1.e + s2.e) < 1e-6 && abs(s1.s - s2.s) < 1e-6, "k={k} {s1:?} {s2:?}");
        }
        let d = race.min_planned_distance(&sol.report.z).unwrap();
        assert!(d >= p.d_safe - 1e-6);
    }

    #[test]
    fn initial_collision_is_rejected() {
        let track = Arc::new(Track::l_shape());
        let a = CarState::on_track(&track, 1.0, 0.0, 2.0, 0.0);
        let b = CarState::on_track(&track, 1.0, 0.0, 2.1, 0.0);
        assert!(matches!(
            build_race_game(&track, &[a, b], &RaceParams::default(), 1.0),
            Err(RaceError::InitialCollision { .. })
        ));
    }
}
