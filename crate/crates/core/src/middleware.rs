//! Latest-value topic bus with synchronous callbacks and a virtual-time tick
//! loop. Delivery is single-threaded so flights replay bit for bit.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TopicId {
    VehicleAngularVelocity,
    VehicleAttitude,
    VehicleLocalPosition,
    TrajectorySetpoint,
    ActuatorMotors,
    VehicleCommand,
    FlightModeStatus,
}

impl TopicId {
    pub const ALL: [TopicId; 7] = [
        TopicId::VehicleAngularVelocity,
        TopicId::VehicleAttitude,
        TopicId::VehicleLocalPosition,
        TopicId::TrajectorySetpoint,
        TopicId::ActuatorMotors,
        TopicId::VehicleCommand,
        TopicId::FlightModeStatus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TopicId::VehicleAngularVelocity => "vehicle_angular_velocity",
            TopicId::VehicleAttitude => "vehicle_attitude",
            TopicId::VehicleLocalPosition => "vehicle_local_position",
            TopicId::TrajectorySetpoint => "trajectory_setpoint",
            TopicId::ActuatorMotors => "actuator_motors",
            TopicId::VehicleCommand => "vehicle_command",
            TopicId::FlightModeStatus => "flight_mode_status",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Fixed-arity record per topic. The variant determines the topic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payload {
    /// rad/s, body frame
    AngularVelocity([f64; 3]),
    /// Scalar-first quaternion, body→world
    Attitude([f64; 4]),
    /// m and m/s, world NED
    LocalPosition { position: [f64; 3], velocity: [f64; 3] },
    /// m, world NED
    Setpoint([f64; 3]),
    /// Normalized rotor-speed commands
    Motors([f64; 4]),
    Command(u32),
    Mode(u32),
}

impl Payload {
    pub fn topic(&self) -> TopicId {
        match self {
            Payload::AngularVelocity(_) => TopicId::VehicleAngularVelocity,
            Payload::Attitude(_) => TopicId::VehicleAttitude,
            Payload::LocalPosition { .. } => TopicId::VehicleLocalPosition,
            Payload::Setpoint(_) => TopicId::TrajectorySetpoint,
            Payload::Motors(_) => TopicId::ActuatorMotors,
            Payload::Command(_) => TopicId::VehicleCommand,
            Payload::Mode(_) => TopicId::FlightModeStatus,
        }
    }

    fn write_values(&self, out: &mut String) {
        let mut push = |v: f64| {
            let _ = write!(out, ",{v}");
        };
        match *self {
            Payload::AngularVelocity(v) | Payload::Setpoint(v) => v.into_iter().for_each(&mut push),
            Payload::Attitude(v) | Payload::Motors(v) => v.into_iter().for_each(&mut push),
            Payload::LocalPosition { position, velocity } => {
                position.into_iter().chain(velocity).for_each(&mut push)
            }
            Payload::Command(c) | Payload::Mode(c) => push(c as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopicMessage {
    pub topic: TopicId,
    /// µs, monotonic
    pub timestamp: u64,
    pub payload: Payload,
}

impl TopicMessage {
    pub fn new(timestamp: u64, payload: Payload) -> Self {
        Self {
            topic: payload.topic(),
            timestamp,
            payload,
        }
    }
}

/// Latest message on a topic together with its publication count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latest {
    pub message: TopicMessage,
    pub generation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Registration(usize);

pub type Callback = Box<dyn FnMut(&mut TopicBus, &TopicMessage)>;

struct Subscriber {
    topic: TopicId,
    /// Taken out while the callback runs.
    callback: Option<Callback>,
    active: bool,
}

#[derive(Default)]
pub struct TopicBus {
    slots: [Option<Latest>; 7],
    subscribers: Vec<Subscriber>,
    now_us: u64,
    trace: Option<String>,
}

impl std::fmt::Debug for TopicBus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TopicBus")
            .field("now_us", &self.now_us)
            .field("subscribers", &self.subscribers.len())
            .finish()
    }
}

pub const TRACE_HEADER: &str = "topic,generation,timestamp_us,values";

impl TopicBus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records every publication for [`TopicBus::write_trace`].
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(|| format!("{TRACE_HEADER}\n"));
    }

    pub fn trace(&self) -> Option<&str> {
        self.trace.as_deref()
    }

    pub fn write_trace(&self, path: &Path) -> Result<()> {
        let text = self.trace.as_deref().unwrap_or(TRACE_HEADER);
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Current virtual time, µs.
    pub fn now(&self) -> u64 {
        self.now_us
    }

    pub fn advance_clock(&mut self, us: u64) {
        self.now_us += us;
    }

    pub fn read_latest(&self, topic: TopicId) -> Option<Latest> {
        self.slots[topic.index()]
    }

    pub fn generation(&self, topic: TopicId) -> u64 {
        self.slots[topic.index()].map_or(0, |l| l.generation)
    }

    pub fn schedule_on(&mut self, topic: TopicId, callback: Callback) -> Registration {
        self.subscribers.push(Subscriber {
            topic,
            callback: Some(callback),
            active: true,
        });
        Registration(self.subscribers.len() - 1)
    }

    pub fn deregister(&mut self, reg: Registration) {
        if let Some(s) = self.subscribers.get_mut(reg.0) {
            s.active = false;
            s.callback = None;
        }
    }

    /// Stores `message` and runs the topic's callbacks in registration order
    /// before returning.
    pub fn publish(&mut self, message: TopicMessage) {
        self.store(message);
        self.dispatch(&message);
    }

    /// Stores every message first, then dispatches callbacks message by
    /// message. A callback fired by the first message already sees the rest
    /// of the batch.
    pub fn publish_batch(&mut self, messages: &[TopicMessage]) {
        for m in messages {
            self.store(*m);
        }
        for m in messages {
            self.dispatch(m);
        }
    }

    pub fn publish_now(&mut self, payload: Payload) {
        self.publish(TopicMessage::new(self.now_us, payload));
    }

    fn store(&mut self, message: TopicMessage) {
        let slot = &mut self.slots[message.topic.index()];
        debug_assert!(
            slot.map_or(true, |l| l.message.timestamp <= message.timestamp),
            "timestamps must not decrease on {}",
            message.topic.name()
        );
        let generation = slot.map_or(0, |l| l.generation) + 1;
        *slot = Some(Latest { message, generation });
        if let Some(trace) = self.trace.as_mut() {
            let _ = write!(trace, "{},{},{}", message.topic.name(), generation, message.timestamp);
            message.payload.write_values(trace);
            trace.push('\n');
        }
    }

    fn dispatch(&mut self, message: &TopicMessage) {
        let count = self.subscribers.len();
        for i in 0..count {
            let sub = &mut self.subscribers[i];
            if !sub.active || sub.topic != message.topic {
                continue;
            }
            // a callback publishing to its own topic does not re-enter itself
            let Some(mut cb) = sub.callback.take() else { continue };
            cb(self, message);
            let sub = &mut self.subscribers[i];
            if sub.active {
                sub.callback = Some(cb);
            }
        }
    }
}

/// Vehicle state as published each tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSample {
    pub angular_velocity: [f64; 3],
    pub attitude: [f64; 4],
    pub position: [f64; 3],
    pub velocity: [f64; 3],
}

/// Whatever advances the vehicle between ticks.
pub trait TickSource {
    /// Advance by `dt` seconds given the bus as it stands (normally reading
    /// `actuator_motors`). `None` stops the loop.
    fn advance(&mut self, bus: &TopicBus, dt: f64) -> Result<Option<StateSample>>;
}

/// Tick period in whole microseconds.
pub fn tick_period_us(rate_hz: f64) -> u64 {
    (1e6 / rate_hz).round() as u64
}

/// Virtual-time loop: per tick the source advances by `1/rate_hz`, the state
/// is published (angular velocity, attitude, local position) and the clock
/// moves on by the quantized period. Returns the number of ticks run.
pub fn run_ticks<S: TickSource + ?Sized>(
    bus: &mut TopicBus,
    sim: &mut S,
    rate_hz: f64,
    duration_s: f64,
) -> Result<u64> {
    assert!(rate_hz > 0.0, "rate_hz must be positive");
    let dt = 1.0 / rate_hz;
    let period = tick_period_us(rate_hz);
    let ticks = (duration_s * rate_hz).round() as u64;
    for k in 0..ticks {
        let Some(s) = sim.advance(bus, dt)? else {
            return Ok(k);
        };
        let t = bus.now();
        bus.publish_batch(&[
            TopicMessage::new(t, Payload::AngularVelocity(s.angular_velocity)),
            TopicMessage::new(t, Payload::Attitude(s.attitude)),
            TopicMessage::new(
                t,
                Payload::LocalPosition {
                    position: s.position,
                    velocity: s.velocity,
                },
            ),
        ]);
        bus.advance_clock(period);
    }
    Ok(ticks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::RefCell;
    use std::rc::Rc;

    struct Still;

    impl TickSource for Still {
        fn advance(&mut self, _: &TopicBus, _: f64) -> Result<Option<StateSample>> {
            Ok(Some(StateSample {
                angular_velocity: [0.0; 3],
                attitude: [1.0, 0.0, 0.0, 0.0],
                position: [0.0; 3],
                velocity: [0.0; 3],
            }))
        }
    }

    #[test]
    fn latest_value_semantics() {
        let mut bus = TopicBus::new();
        assert!(bus.read_latest(TopicId::ActuatorMotors).is_none());
        bus.publish_now(Payload::Motors([0.1; 4]));
        let l = bus.read_latest(TopicId::ActuatorMotors).unwrap();
        assert_eq!((l.message.payload, l.generation), (Payload::Motors([0.1; 4]), 1));
        bus.publish_now(Payload::Motors([0.2; 4]));
        let l = bus.read_latest(TopicId::ActuatorMotors).unwrap();
        assert_eq!((l.message.payload, l.generation), (Payload::Motors([0.2; 4]), 2));
        for _ in 0..5 {
            bus.publish_now(Payload::Command(1));
        }
        assert_eq!(bus.generation(TopicId::VehicleCommand), 5);
    }

    #[test]
    fn callbacks_fire_in_registration_order_and_deregister() {
        let mut bus = TopicBus::new();
        let log = Rc::new(RefCell::new(Vec::new()));
        let (a, b) = (log.clone(), log.clone());
        let ra = bus.schedule_on(TopicId::VehicleCommand, Box::new(move |_, _| a.borrow_mut().push('a')));
        bus.schedule_on(TopicId::VehicleCommand, Box::new(move |_, _| b.borrow_mut().push('b')));
        bus.publish_now(Payload::Command(0));
        bus.publish_now(Payload::Mode(0));
        assert_eq!(*log.borrow(), vec!['a', 'b']);
        bus.deregister(ra);
        bus.publish_now(Payload::Command(0));
        assert_eq!(*log.borrow(), vec!['a', 'b', 'b']);
    }

    #[test]
    fn nested_publish_is_delivered_synchronously() {
        let mut bus = TopicBus::new();
        let seen = Rc::new(RefCell::new(Vec::new()));
        let s = seen.clone();
        bus.schedule_on(
            TopicId::VehicleAngularVelocity,
            Box::new(|bus, _| bus.publish_now(Payload::Motors([0.5; 4]))),
        );
        bus.schedule_on(
            TopicId::ActuatorMotors,
            Box::new(move |bus, m| s.borrow_mut().push((m.payload, bus.generation(TopicId::VehicleAngularVelocity)))),
        );
        bus.publish_now(Payload::AngularVelocity([0.0; 3]));
        assert_eq!(*seen.borrow(), vec![(Payload::Motors([0.5; 4]), 1)]);
    }

    #[test]
    fn run_ticks_at_650_hz() {
        let mut bus = TopicBus::new();
        let stamps = Rc::new(RefCell::new(Vec::new()));
        let s = stamps.clone();
        bus.schedule_on(
            TopicId::VehicleAngularVelocity,
            Box::new(move |bus, m| {
                let att = bus.generation(TopicId::VehicleAttitude);
                let pos = bus.generation(TopicId::VehicleLocalPosition);
                let gen = bus.generation(TopicId::VehicleAngularVelocity);
                assert_eq!((att, pos), (gen, gen));
                s.borrow_mut().push(m.timestamp);
            }),
        );
        let n = run_ticks(&mut bus, &mut Still, 650.0, 1.0).unwrap();
        assert_eq!(n, 650);
        let stamps = stamps.borrow();
        assert_eq!(stamps.len(), 650);
        assert!(stamps.windows(2).all(|w| w[1] - w[0] == 1538));
        assert_eq!(bus.now(), 650 * 1538);
    }

    #[test]
    fn identical_sequences_trace_identically() {
        let run = || {
            let mut bus = TopicBus::new();
            bus.enable_trace();
            bus.schedule_on(
                TopicId::VehicleAngularVelocity,
                Box::new(|bus, m| bus.publish_now(Payload::Mode((m.timestamp % 7) as u32))),
            );
            run_ticks(&mut bus, &mut Still, 650.0, 0.1).unwrap();
            bus.trace().unwrap().to_owned()
        };
        let a = run();
        assert_eq!(a, run());
        assert_eq!(a.lines().count(), 1 + 65 * 4);
    }
}
