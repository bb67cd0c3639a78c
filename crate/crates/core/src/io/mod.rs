//! Scenario files, histogram tables and the binary timestamp format.

mod histogram;
mod scenario;
mod timestamps;

pub use histogram::{format_significant, read_histogram, read_histogram_file, write_histogram, write_histogram_file};
pub use scenario::{
    load_scenario, parse_quantity, parse_scenario, DiffusionAmplitude, DiffusionEntry, Dimension, EmitterEntry,
    OutputEntry, Scenario, ScenarioEntry, ScenarioFile, SimulationEntry,
};
pub use timestamps::{
    read_timestamps, read_timestamps_file, split_channels, write_timestamps, write_timestamps_file, TimestampRecord,
    PHTS_MAGIC, PHTS_VERSION,
};
