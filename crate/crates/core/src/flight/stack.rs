//! Scripted flights on the topic bus: a commander callback sequences arm,
//! takeoff, mission and landing; a controller callback runs the mode state
//! machine and either the cascade or the neural runtime every tick.

use std::cell::RefCell;
use std::path::Path;
use std::rc::Rc;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mission::{mission_tick, square_mission, LegEnd, MissionPlan, MissionState};
use super::mode::{mode_switch, FlightMode, ModeCommand};
use super::telemetry::{TelemetryLog, TelemetryRow};
use crate::cascade::{Cascade, CascadeGains};
use crate::error::{Error, Result};
use crate::middleware::{run_ticks, Payload, StateSample, TickSource, TopicBus, TopicId};
use crate::modelpack::DEFAULT_BUDGET_BYTES;
use crate::runtime::{Fault, InferenceRuntime, StateInputs};
use crate::vehicle::{integrate, RigidBodyState, VehicleParams};

/// Downward speed at ground contact above which the flight counts as crashed, m/s.
pub const CRASH_SPEED: f64 = 1.5;
/// Height above the start point above which the vehicle counts as airborne, m.
pub const AIRBORNE_HEIGHT: f64 = 0.1;
/// Landing ramps aim this far below the ground so the vehicle settles on it, m.
pub const LAND_OVERSHOOT: f64 = 0.2;
/// Landed when within this height of the start point ...
pub const LANDED_HEIGHT: f64 = 0.05;
/// ... with vertical speed below this ...
pub const LANDED_SPEED: f64 = 0.1;
/// ... for this long, s.
pub const LANDED_TIME: f64 = 1.0;
/// Position error that counts as re-stabilized after a fallback, m.
pub const RECOVERY_RADIUS: f64 = 0.3;
/// Horizontal distance from the start that counts as a flyaway, m.
pub const FLYAWAY_DISTANCE: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Switch to the neural controller for the mission.
    pub neural: bool,
    /// Model file, relative to the scenario file.
    pub model: Option<String>,
    pub seed: u64,
    pub rate_hz: f64,
    /// Takeoff height above the start point, m.
    pub altitude: f64,
    /// Vertical ramp speed for takeoff and landing, m/s.
    pub climb_rate: f64,
    /// Hover time between takeoff and the mission, s.
    pub settle_time: f64,
    pub side: f64,
    pub accept_radius: f64,
    pub dwell: f64,
    pub leg_timeout: f64,
    /// Hover time between the mission and landing, s.
    pub post_mission_hold: f64,
    /// Injects a non-finite attitude this long after the neural mode engages, s.
    /// Nothing is injected if the neural mode has ended by then.
    pub fault_at: Option<f64>,
    /// When `fault_at` is absent, draw the injection time uniformly from
    /// this window using `seed`.
    pub fault_window: Option<[f64; 2]>,
    /// Position hold after a fallback before landing, s.
    pub fault_hold: f64,
    /// Hard stop, s.
    pub max_duration: f64,
    pub budget_bytes: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "classical".into(),
            neural: false,
            model: None,
            seed: 1,
            rate_hz: 650.0,
            altitude: 1.5,
            climb_rate: 0.5,
            settle_time: 2.0,
            side: 2.0,
            accept_radius: 0.15,
            dwell: 1.0,
            leg_timeout: 10.0,
            post_mission_hold: 1.0,
            fault_at: None,
            fault_window: None,
            fault_hold: 4.0,
            max_duration: 180.0,
            budget_bytes: DEFAULT_BUDGET_BYTES,
        }
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Scenario =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rate_hz", self.rate_hz),
            ("altitude", self.altitude),
            ("climb_rate", self.climb_rate),
            ("max_duration", self.max_duration),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Parameter(format!("scenario {name} must be > 0, got {v}")));
            }
        }
        if self.settle_time < 0.0 || self.post_mission_hold < 0.0 || self.fault_hold < 0.0 {
            return Err(Error::Parameter("scenario hold times must be ≥ 0".into()));
        }
        if self.fault_at.is_some_and(|t| t < 0.0) {
            return Err(Error::Parameter("fault_at must be ≥ 0".into()));
        }
        if let Some([a, b]) = self.fault_window {
            if !(0.0 <= a && a < b) {
                return Err(Error::Parameter("fault_window must satisfy 0 ≤ start < end".into()));
            }
        }
        if (self.fault_at.is_some() || self.fault_window.is_some()) && !self.neural {
            return Err(Error::Config("fault injection needs a neural scenario".into()));
        }
        self.plan(Vector3::zeros()).map(|_| ())
    }

    fn plan(&self, start: Vector3<f64>) -> Result<MissionPlan> {
        let center = start - Vector3::new(0.0, 0.0, self.altitude);
        square_mission(center, self.side, self.accept_radius, self.dwell, self.leg_timeout)
    }

    /// Injection delay after neural engagement, if any.
    pub fn fault_delay(&self) -> Option<f64> {
        self.fault_at.or_else(|| {
            self.fault_window.map(|[a, b]| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.gen_range(a..b)
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LegStats {
    pub waypoint: usize,
    pub target: [f64; 3],
    pub start: f64,
    pub end: f64,
    pub reached: bool,
    pub mean_error: f64,
    pub max_error: f64,
    /// Mean error over the final dwell period of the leg.
    pub steady_state_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeChange {
    pub time: f64,
    pub mode: FlightMode,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaultReport {
    pub injected_tick: u64,
    pub injected_at: f64,
    /// Tick on which the position mode took over; equal to the injected
    /// tick when the fallback happens within the same tick.
    pub fallback_tick: Option<u64>,
    pub hold_position: Option<[f64; 3]>,
    /// Time after the fallback from which the error stayed below
    /// [`RECOVERY_RADIUS`] for the rest of the hold, s.
    pub recovery_time: Option<f64>,
    pub recovered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlightSummary {
    pub scenario: String,
    pub ticks: u64,
    pub duration: f64,
    pub completed: bool,
    pub mission_finished: bool,
    pub failure: Option<String>,
    pub legs: Vec<LegStats>,
    pub max_steady_state_error: Option<f64>,
    pub timeline: Vec<ModeChange>,
    pub rejected_commands: Vec<String>,
    pub fault_fallbacks: usize,
    pub fault: Option<FaultReport>,
}

#[derive(Debug, Clone)]
pub struct FlightOutcome {
    pub telemetry: TelemetryLog,
    pub summary: FlightSummary,
}

impl Serialize for FlightMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

/// Output of one controller tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub mode: FlightMode,
    pub motors: [f64; 4],
    pub fault: Option<Fault>,
}

/// State and controllers consulted by [`controller_tick`].
pub struct ControllerCtx<'a> {
    pub cascade: &'a mut Cascade,
    pub runtime: Option<&'a mut InferenceRuntime>,
    /// Most recent finite state, used when the current one is not.
    pub last_good: &'a RigidBodyState,
    pub dt: f64,
}

fn to_rigid(inputs: &StateInputs) -> RigidBodyState {
    let [w, x, y, z] = inputs.attitude;
    RigidBodyState {
        position: Vector3::from(inputs.position),
        velocity: Vector3::from(inputs.velocity),
        attitude: UnitQuaternion::new_normalize(nalgebra::Quaternion::new(w, x, y, z)),
        angular_velocity: Vector3::from(inputs.angular_velocity),
        motor_speed: [0.0; 4],
    }
}

fn inputs_finite(inputs: &StateInputs) -> bool {
    inputs
        .position
        .iter()
        .chain(&inputs.velocity)
        .chain(&inputs.attitude)
        .chain(&inputs.angular_velocity)
        .all(|v| v.is_finite())
}

/// One control step in `mode`. A neural fault switches to the position mode
/// within the same tick and computes the cascade output from the last good
/// state. The returned mode is the one after any fault transition.
pub fn controller_tick(
    mode: FlightMode,
    inputs: &StateInputs,
    setpoint: &Vector3<f64>,
    airborne: bool,
    ctx: ControllerCtx<'_>,
) -> ControlOutput {
    let finite = inputs_finite(inputs);
    let current = if finite { to_rigid(inputs) } else { ctx.last_good.clone() };
    match mode {
        FlightMode::Disarmed => {
            ctx.cascade.reset(&current);
            ControlOutput {
                mode,
                motors: [0.0; 4],
                fault: None,
            }
        }
        FlightMode::NeuralMode => {
            let result = match ctx.runtime {
                Some(rt) => rt.step(inputs, &[setpoint.x, setpoint.y, setpoint.z]),
                None => Err(Fault::NonFiniteOutput),
            };
            match result {
                Ok(u) => {
                    ctx.cascade.reset(&current);
                    ControlOutput {
                        mode,
                        motors: u.map(f64::from),
                        fault: None,
                    }
                }
                Err(fault) => {
                    let next = mode_switch(mode, None, airborne, true).unwrap_or(FlightMode::PositionMode);
                    let hold = ctx.last_good.position;
                    ctx.cascade.reset(ctx.last_good);
                    ControlOutput {
                        mode: next,
                        motors: ctx.cascade.update(ctx.last_good, &hold, ctx.dt),
                        fault: Some(fault),
                    }
                }
            }
        }
        FlightMode::PositionMode => ControlOutput {
            mode,
            motors: ctx.cascade.update(&current, setpoint, ctx.dt),
            fault: None,
        },
    }
}

fn read_inputs(bus: &TopicBus) -> Option<StateInputs> {
    let av = bus.read_latest(TopicId::VehicleAngularVelocity)?;
    let att = bus.read_latest(TopicId::VehicleAttitude)?;
    let pos = bus.read_latest(TopicId::VehicleLocalPosition)?;
    match (av.message.payload, att.message.payload, pos.message.payload) {
        (Payload::AngularVelocity(w), Payload::Attitude(q), Payload::LocalPosition { position, velocity }) => {
            Some(StateInputs {
                position,
                velocity,
                attitude: q,
                angular_velocity: w,
            })
        }
        _ => None,
    }
}

fn read_mode(bus: &TopicBus) -> FlightMode {
    match bus.read_latest(TopicId::FlightModeStatus).map(|l| l.message.payload) {
        Some(Payload::Mode(code)) => FlightMode::from_code(code).unwrap_or(FlightMode::Disarmed),
        _ => FlightMode::Disarmed,
    }
}

fn seconds(us: u64) -> f64 {
    us as f64 * 1e-6
}

/// Flight-wide shared record, filled by the plant and both callbacks.
#[derive(Default)]
struct Record {
    stop: bool,
    failure: Option<String>,
    fault_injected: Option<(u64, f64)>,
    fault_fallback: Option<(u64, [f64; 3])>,
    fault_fallbacks: usize,
    telemetry: Vec<TelemetryRow>,
    timeline: Vec<ModeChange>,
    rejected: Vec<String>,
    mission_finished: bool,
    legs: Vec<super::mission::LegRecord>,
    plan: Option<MissionPlan>,
}

struct Plant {
    state: RigidBodyState,
    params: VehicleParams,
    start: Vector3<f64>,
    tick: u64,
    fault_delay: Option<f64>,
    neural_since: Option<f64>,
    record: Rc<RefCell<Record>>,
}

impl TickSource for Plant {
    fn advance(&mut self, bus: &TopicBus, dt: f64) -> Result<Option<StateSample>> {
        let mut rec = self.record.borrow_mut();
        if rec.stop {
            return Ok(None);
        }
        let motors = match bus.read_latest(TopicId::ActuatorMotors).map(|l| l.message.payload) {
            Some(Payload::Motors(u)) => u,
            _ => [0.0; 4],
        };
        let speeds = motors.map(|u| u * self.params.omega_max);
        let mut next = match integrate(&self.state, &speeds, dt, &self.params) {
            Ok(s) => s,
            Err(e) => {
                rec.failure = Some(e.to_string());
                return Ok(None);
            }
        };
        // flat ground at the start height, no bounce
        if next.position.z >= self.start.z {
            if next.velocity.z > CRASH_SPEED {
                rec.failure = Some(format!("ground impact at {:.2} m/s", next.velocity.z));
                return Ok(None);
            }
            next.position.z = self.start.z;
            next.velocity = Vector3::zeros();
            next.angular_velocity = Vector3::zeros();
        }
        if next.up_alignment() < 0.0 {
            rec.failure = Some("vehicle inverted".into());
            return Ok(None);
        }
        if (next.position - self.start).xy().norm() > FLYAWAY_DISTANCE {
            rec.failure = Some("flyaway".into());
            return Ok(None);
        }
        self.state = next;

        let now = seconds(bus.now());
        let neural = read_mode(bus) == FlightMode::NeuralMode;
        if neural {
            self.neural_since.get_or_insert(now);
        }
        let q = self.state.attitude.into_inner();
        let mut attitude = [q.w, q.i, q.j, q.k];
        if let (Some(delay), Some(since), None) = (self.fault_delay, self.neural_since, rec.fault_injected) {
            // a delay that outlasts the neural phase injects nothing
            if neural && now >= since + delay {
                attitude = [f64::NAN; 4];
                rec.fault_injected = Some((self.tick, now));
            }
        }
        self.tick += 1;
        Ok(Some(StateSample {
            angular_velocity: self.state.angular_velocity.into(),
            attitude,
            position: self.state.position.into(),
            velocity: self.state.velocity.into(),
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Arm,
    Takeoff { t0: f64 },
    Settle { until: f64 },
    Engage,
    Mission,
    PostMission { until: f64 },
    FaultHold { until: f64 },
    Land { t0: f64, from: Vector3<f64> },
    Disarm,
}

struct Commander {
    scenario: Scenario,
    plan: MissionPlan,
    mission: MissionState,
    start: Vector3<f64>,
    phase: Phase,
    setpoint: Vector3<f64>,
    landed_since: Option<f64>,
    record: Rc<RefCell<Record>>,
}

impl Commander {
    fn tick(&mut self, bus: &mut TopicBus) {
        let now = seconds(bus.now());
        let mode = read_mode(bus);
        let (position, velocity) = match bus.read_latest(TopicId::VehicleLocalPosition).map(|l| l.message.payload) {
            Some(Payload::LocalPosition { position, velocity }) => (Vector3::from(position), Vector3::from(velocity)),
            _ => (self.start, Vector3::zeros()),
        };
        let s = &self.scenario;
        let top = self.start.z - s.altitude;
        let mut command = None;
        match self.phase {
            Phase::Arm => {
                command = Some(ModeCommand::Arm);
                self.phase = Phase::Takeoff { t0: now };
                self.setpoint = self.start;
            }
            Phase::Takeoff { t0 } => {
                let z = (self.start.z - s.climb_rate * (now - t0)).max(top);
                self.setpoint = Vector3::new(self.start.x, self.start.y, z);
                if z <= top {
                    self.phase = Phase::Settle {
                        until: now + s.settle_time,
                    };
                }
            }
            Phase::Settle { until } => {
                if now >= until {
                    if s.neural {
                        command = Some(ModeCommand::EngageNeural);
                        self.phase = Phase::Engage;
                    } else {
                        self.phase = Phase::Mission;
                    }
                }
            }
            Phase::Engage => {
                if mode == FlightMode::NeuralMode {
                    self.phase = Phase::Mission;
                }
            }
            Phase::Mission => {
                if s.neural && mode != FlightMode::NeuralMode {
                    self.phase = Phase::FaultHold {
                        until: now + s.fault_hold,
                    };
                } else {
                    let (sp, done) = mission_tick(&self.plan, &mut self.mission, &position, now);
                    self.setpoint = sp;
                    if done {
                        let mut rec = self.record.borrow_mut();
                        rec.mission_finished = true;
                        rec.legs = self.mission.legs.clone();
                        if s.neural {
                            command = Some(ModeCommand::EngagePosition);
                        }
                        self.phase = Phase::PostMission {
                            until: now + s.post_mission_hold,
                        };
                    }
                }
            }
            Phase::PostMission { until } | Phase::FaultHold { until } => {
                if now >= until {
                    if matches!(self.phase, Phase::FaultHold { .. }) {
                        command = Some(ModeCommand::EngagePosition);
                        self.record.borrow_mut().legs = self.mission.legs.clone();
                    }
                    let from = Vector3::new(position.x, position.y, position.z.min(top));
                    self.phase = Phase::Land { t0: now, from };
                }
            }
            Phase::Land { t0, from } => {
                let z = (from.z + s.climb_rate * (now - t0)).min(self.start.z + LAND_OVERSHOOT);
                self.setpoint = Vector3::new(from.x, from.y, z);
                let settled = (position.z - self.start.z).abs() <= LANDED_HEIGHT && velocity.z.abs() < LANDED_SPEED;
                if settled {
                    let since = *self.landed_since.get_or_insert(now);
                    if now - since >= LANDED_TIME {
                        command = Some(ModeCommand::Disarm);
                        self.phase = Phase::Disarm;
                    }
                } else {
                    self.landed_since = None;
                }
            }
            Phase::Disarm => {
                if mode == FlightMode::Disarmed {
                    self.record.borrow_mut().stop = true;
                } else {
                    command = Some(ModeCommand::Disarm);
                }
            }
        }
        bus.publish_now(Payload::Setpoint(self.setpoint.into()));
        if let Some(c) = command {
            bus.publish_now(Payload::Command(c.code()));
        }
    }
}

struct Controller {
    mode: FlightMode,
    cascade: Cascade,
    runtime: Option<InferenceRuntime>,
    last_good: RigidBodyState,
    command_generation: u64,
    hold: Option<Vector3<f64>>,
    start: Vector3<f64>,
    dt: f64,
    record: Rc<RefCell<Record>>,
}

impl Controller {
    fn set_mode(&mut self, now: f64, mode: FlightMode, reason: &str) {
        if mode != self.mode {
            self.mode = mode;
            self.record.borrow_mut().timeline.push(ModeChange {
                time: now,
                mode,
                reason: reason.to_owned(),
            });
        }
    }

    fn tick(&mut self, bus: &mut TopicBus) {
        let now = seconds(bus.now());
        let tick = self.record.borrow().telemetry.len() as u64;
        let Some(inputs) = read_inputs(bus) else { return };
        let airborne = self.last_good.position.z < self.start.z - AIRBORNE_HEIGHT;

        let generation = bus.generation(TopicId::VehicleCommand);
        if generation > self.command_generation {
            self.command_generation = generation;
            let code = match bus.read_latest(TopicId::VehicleCommand).map(|l| l.message.payload) {
                Some(Payload::Command(c)) => c,
                _ => 0,
            };
            match ModeCommand::from_code(code) {
                Some(cmd) => match mode_switch(self.mode, Some(cmd), airborne, false) {
                    Ok(next) => {
                        if cmd == ModeCommand::EngagePosition {
                            self.hold = None;
                        }
                        self.set_mode(now, next, &format!("{cmd:?}"));
                    }
                    Err(r) => self.record.borrow_mut().rejected.push(format!("t={now:.3}s: {r}")),
                },
                None => self.record.borrow_mut().rejected.push(format!("t={now:.3}s: unknown command {code}")),
            }
        }

        let commanded = match bus.read_latest(TopicId::TrajectorySetpoint).map(|l| l.message.payload) {
            Some(Payload::Setpoint(sp)) => Vector3::from(sp),
            _ => self.last_good.position,
        };
        let setpoint = self.hold.unwrap_or(commanded);
        let out = controller_tick(
            self.mode,
            &inputs,
            &setpoint,
            airborne,
            ControllerCtx {
                cascade: &mut self.cascade,
                runtime: self.runtime.as_mut(),
                last_good: &self.last_good,
                dt: self.dt,
            },
        );
        let mut logged_setpoint = setpoint;
        if let Some(fault) = out.fault {
            let hold = self.last_good.position;
            self.hold = Some(hold);
            logged_setpoint = hold;
            let mut rec = self.record.borrow_mut();
            rec.fault_fallbacks += 1;
            rec.fault_fallback.get_or_insert((tick, hold.into()));
            drop(rec);
            self.set_mode(now, out.mode, &format!("fault: {fault:?}"));
        }
        if inputs_finite(&inputs) {
            self.last_good = to_rigid(&inputs);
        }
        bus.publish_now(Payload::Motors(out.motors));
        bus.publish_now(Payload::Mode(self.mode.code()));
        let shown = &self.last_good;
        self.record.borrow_mut().telemetry.push(TelemetryRow {
            time: now,
            mode: self.mode,
            position: shown.position.into(),
            setpoint: logged_setpoint.into(),
            velocity: shown.velocity.into(),
            motors: out.motors,
        });
    }
}

/// Runs a scripted flight in virtual time. `model` is the ModelPack blob for
/// neural scenarios. Flight failures (crash, inversion, divergence) are
/// reported in the summary with the log up to that point retained.
pub fn run_flight(
    scenario: &Scenario,
    params: &VehicleParams,
    gains: &CascadeGains,
    model: Option<&[u8]>,
) -> Result<FlightOutcome> {
    scenario.validate()?;
    params.validate()?;
    let runtime = match (scenario.neural, model) {
        (true, Some(blob)) => Some(InferenceRuntime::init(blob, scenario.budget_bytes)?),
        (true, None) => return Err(Error::Config("neural scenario needs a model".into())),
        (false, _) => None,
    };
    let start = Vector3::zeros();
    let plan = scenario.plan(start)?;
    let record = Rc::new(RefCell::new(Record {
        plan: Some(plan.clone()),
        ..Record::default()
    }));
    let mut initial = RigidBodyState {
        position: start,
        ..RigidBodyState::default()
    };
    initial.motor_speed = [0.0; 4];
    let dt = 1.0 / scenario.rate_hz;

    let mut bus = TopicBus::new();
    let commander = Rc::new(RefCell::new(Commander {
        scenario: scenario.clone(),
        plan,
        mission: MissionState::new(),
        start,
        phase: Phase::Arm,
        setpoint: start,
        landed_since: None,
        record: record.clone(),
    }));
    let controller = Rc::new(RefCell::new(Controller {
        mode: FlightMode::Disarmed,
        cascade: Cascade::new(gains.clone(), params)?,
        runtime,
        last_good: initial.clone(),
        command_generation: 0,
        hold: None,
        start,
        dt,
        record: record.clone(),
    }));
    {
        let c = commander.clone();
        bus.schedule_on(
            TopicId::VehicleAngularVelocity,
            Box::new(move |bus, _| c.borrow_mut().tick(bus)),
        );
        let c = controller.clone();
        bus.schedule_on(
            TopicId::VehicleAngularVelocity,
            Box::new(move |bus, _| c.borrow_mut().tick(bus)),
        );
    }
    let mut plant = Plant {
        state: initial,
        params: params.clone(),
        start,
        tick: 0,
        fault_delay: scenario.fault_delay(),
        neural_since: None,
        record: record.clone(),
    };
    let ticks = run_ticks(&mut bus, &mut plant, scenario.rate_hz, scenario.max_duration)?;
    drop(bus);

    let mut rec = record.take();
    if rec.legs.is_empty() {
        rec.legs = commander.borrow().mission.legs.clone();
    }
    let telemetry = TelemetryLog {
        rows: std::mem::take(&mut rec.telemetry),
    };
    let summary = summarize(scenario, ticks, &rec, &telemetry);
    Ok(FlightOutcome { telemetry, summary })
}

fn summarize(scenario: &Scenario, ticks: u64, rec: &Record, log: &TelemetryLog) -> FlightSummary {
    let plan = rec.plan.as_ref().expect("plan recorded");
    let legs: Vec<LegStats> = rec
        .legs
        .iter()
        .map(|leg| {
            let target = plan.waypoints[leg.waypoint];
            let err = |r: &TelemetryRow| (Vector3::from(r.position) - target).norm();
            let in_leg: Vec<&TelemetryRow> =
                log.rows.iter().filter(|r| r.time >= leg.start && r.time <= leg.end).collect();
            let tail: Vec<f64> = in_leg
                .iter()
                .filter(|r| r.time >= leg.end - plan.dwell)
                .map(|r| err(r))
                .collect();
            let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
            let errors: Vec<f64> = in_leg.iter().map(|r| err(r)).collect();
            LegStats {
                waypoint: leg.waypoint,
                target: target.into(),
                start: leg.start,
                end: leg.end,
                reached: leg.outcome == LegEnd::Reached,
                mean_error: mean(&errors),
                max_error: errors.iter().cloned().fold(0.0, f64::max),
                steady_state_error: mean(&tail),
            }
        })
        .collect();
    let max_steady_state_error = legs
        .iter()
        .map(|l| l.steady_state_error)
        .fold(None, |acc: Option<f64>, e| Some(acc.map_or(e, |a| a.max(e))));

    let fault = rec.fault_injected.map(|(injected_tick, injected_at)| {
        let fallback_tick = rec.fault_fallback.map(|f| f.0);
        let hold_position = rec.fault_fallback.map(|f| f.1);
        let recovery_time = rec.fault_fallback.and_then(|(tick, hold)| {
            let t0 = log.rows.get(tick as usize)?.time;
            let window: Vec<&TelemetryRow> = log
                .rows
                .iter()
                .skip(tick as usize)
                .take_while(|r| r.time <= t0 + scenario.fault_hold && r.setpoint == hold)
                .collect();
            let last = window.last()?.time;
            let last_bad = window
                .iter()
                .filter(|r| r.position_error() >= RECOVERY_RADIUS)
                .map(|r| r.time)
                .last();
            match last_bad {
                None => Some(0.0),
                Some(t) if t < last => Some(t - t0),
                Some(_) => None,
            }
        });
        FaultReport {
            injected_tick,
            injected_at,
            fallback_tick,
            hold_position,
            recovery_time,
            recovered: fallback_tick == Some(injected_tick) && recovery_time.is_some_and(|t| t <= 3.0),
        }
    });

    let completed = rec.failure.is_none() && rec.stop;
    FlightSummary {
        scenario: scenario.name.clone(),
        ticks,
        duration: ticks as f64 / scenario.rate_hz,
        completed,
        mission_finished: rec.mission_finished,
        failure: rec
            .failure
            .clone()
            .or_else(|| (!rec.stop).then(|| format!("did not land within {} s", scenario.max_duration))),
        legs,
        max_steady_state_error,
        timeline: rec.timeline.clone(),
        rejected_commands: rec.rejected.clone(),
        fault_fallbacks: rec.fault_fallbacks,
        fault,
    }
}
