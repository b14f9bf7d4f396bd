//! Ready-made scenario configs compiled into the binary.

pub const NAMES: &[&str] = &[
    "pendulum_optimal",
    "pendulum_tdmpc",
    "pendulum_dim_a",
    "pendulum_dim_b",
    "pendulum_certified",
    "scalar_certified",
    "scalar_dim_certified",
];

pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "pendulum_optimal" => Some(include_str!("../presets/pendulum_optimal.json")),
        "pendulum_tdmpc" => Some(include_str!("../presets/pendulum_tdmpc.json")),
        "pendulum_dim_a" => Some(include_str!("../presets/pendulum_dim_a.json")),
        "pendulum_dim_b" => Some(include_str!("../presets/pendulum_dim_b.json")),
        "pendulum_certified" => Some(include_str!("../presets/pendulum_certified.json")),
        "scalar_certified" => Some(include_str!("../presets/scalar_certified.json")),
        "scalar_dim_certified" => Some(include_str!("../presets/scalar_dim_certified.json")),
        _ => None,
    }
}
