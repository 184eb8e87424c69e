//! File formats and configuration: benchmark-style detection/result files,
//! binary PPM frame directories, and key=value config parsing.

pub mod config;
pub mod mot;
pub mod ppm;

pub use config::{load_config, load_scenario, render_config, ConfigError, LoadedConfig};
pub use mot::{parse_mot, write_mot, MotError, MotRecord};
pub use ppm::{decode_ppm, load_frames, FrameStoreError, PpmFrameSource};
