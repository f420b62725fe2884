//! Flight-mode state machine.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlightMode {
    Disarmed,
    PositionMode,
    NeuralMode,
}

impl FlightMode {
    pub fn code(self) -> u32 {
        match self {
            FlightMode::Disarmed => 0,
            FlightMode::PositionMode => 1,
            FlightMode::NeuralMode => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(FlightMode::Disarmed),
            1 => Some(FlightMode::PositionMode),
            2 => Some(FlightMode::NeuralMode),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FlightMode::Disarmed => "disarmed",
            FlightMode::PositionMode => "position",
            FlightMode::NeuralMode => "neural",
        }
    }
}

impl fmt::Display for FlightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Codes carried on `vehicle_command`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModeCommand {
    Arm,
    Disarm,
    EngageNeural,
    EngagePosition,
}

impl ModeCommand {
    pub fn code(self) -> u32 {
        match self {
            ModeCommand::Arm => 1,
            ModeCommand::Disarm => 2,
            ModeCommand::EngageNeural => 3,
            ModeCommand::EngagePosition => 4,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(ModeCommand::Arm),
            2 => Some(ModeCommand::Disarm),
            3 => Some(ModeCommand::EngageNeural),
            4 => Some(ModeCommand::EngagePosition),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rejected {
    pub from: FlightMode,
    pub command: ModeCommand,
}

impl fmt::Display for Rejected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} rejected in {}", self.command, self.from)
    }
}

/// Next mode. A fault in `NeuralMode` forces `PositionMode` regardless of the
/// command. Illegal transitions return `Err` and leave the caller's mode as is.
pub fn mode_switch(
    current: FlightMode,
    command: Option<ModeCommand>,
    airborne: bool,
    fault: bool,
) -> Result<FlightMode, Rejected> {
    use FlightMode::*;
    use ModeCommand::*;
    if fault && current == NeuralMode {
        return Ok(PositionMode);
    }
    let Some(command) = command else {
        return Ok(current);
    };
    let reject = Err(Rejected { from: current, command });
    match (current, command) {
        (Disarmed, Arm) => Ok(PositionMode),
        (Disarmed, Disarm) => Ok(Disarmed),
        (Disarmed, _) => reject,
        (PositionMode, Arm) | (PositionMode, EngagePosition) => Ok(PositionMode),
        (PositionMode, EngageNeural) if airborne && !fault => Ok(NeuralMode),
        (PositionMode, Disarm) if !airborne => Ok(Disarmed),
        (PositionMode, _) => reject,
        (NeuralMode, EngagePosition) => Ok(PositionMode),
        (NeuralMode, EngageNeural) => Ok(NeuralMode),
        (NeuralMode, _) => reject,
    }
}
