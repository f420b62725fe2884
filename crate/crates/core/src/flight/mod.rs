//! Flight modes, square missions and scripted flights on the topic bus.

pub mod mission;
pub mod mode;
pub mod stack;
pub mod telemetry;

pub use mission::{mission_tick, square_mission, LegEnd, LegRecord, MissionPlan, MissionState};
pub use mode::{mode_switch, FlightMode, ModeCommand, Rejected};
pub use stack::{controller_tick, run_flight, ControlOutput, ControllerCtx, FlightOutcome, FlightSummary, Scenario};
pub use telemetry::{TelemetryLog, TelemetryRow, TELEMETRY_COLUMNS};
