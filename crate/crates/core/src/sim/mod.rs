//! Deterministic scripted backends and the scenario file format.

pub mod backends;
pub mod generate;
pub mod scenario;

pub use backends::{
    scripted_generation_rate_check, AsrEntry, EncoderEntry, LmStep, RateCheck, ScriptedAsr, ScriptedDecoder,
    ScriptedEncoder, ScriptedLm, ScriptedLmState,
};
pub use generate::{generate_scenario, ScenarioKind};
pub use scenario::{
    load_scenario, load_scenario_file, ExpectCheck, Expectation, Scenario, ScenarioError, ScenarioEvent, TimedEvent,
    DEFAULT_ROLE,
};
