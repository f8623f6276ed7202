//! Weight files, config files and PPM image ingestion.

mod config;
mod image;
mod weights;

pub use config::{config_from_toml, config_to_toml, load_config, save_config};
pub use image::{load_ppm, parse_ppm, resize_nearest, to_input, Image, NORM_MEAN, NORM_STD};
pub use weights::{load_weights, load_weights_from, read_weights, save_weights, write_weights, WeightRecord, FORMAT_VERSION, MAGIC};
