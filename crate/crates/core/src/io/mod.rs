pub mod config;
pub mod descriptor_file;

pub use config::{
    load_cross_norm_params, load_synthetic_spec, parse_cross_norm_params, parse_synthetic_spec,
    save_cross_norm_params,
};
pub use descriptor_file::{decode_dataset, encode_dataset, read_dataset, write_dataset};
