//! Synthetic data sources: channel telemetry for anomaly detection and the
//! sensing task whose releases are attacked and evaluated at the edge.

pub mod channel;
pub mod sensing;

pub use channel::{
    build_dataset, gen_baseline, inject_adversarial, inject_hardware, inject_network,
    inject_physical, ChannelSample, Label, Profile, Trace, TraceProfile,
};
pub use sensing::{diurnal_series, sensing_domains, sensing_fields, FieldSpec, SensingData, SensingRow, SensingSource};
