//! Shipped run configurations, one per test case, at two scales.
//!
//! `paper` reproduces the published setting; `desk` keeps every physical
//! parameter but shrinks the mesh (about a quarter of the elements) and the
//! horizon so that a run finishes in well under a minute.

use std::fmt;
use std::str::FromStr;

use crate::config::{parse_config, RunConfig};
use crate::error::ConfigError;

/// Version of the shipped catalog; bumped whenever a configuration changes.
pub const CATALOG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Paper,
    Desk,
}

impl FromStr for Scale {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Scale::Paper),
            "desk" => Ok(Scale::Desk),
            o => Err(ConfigError::InvalidValue { key: "scale".into(), msg: format!("expected paper or desk, got `{o}`") }),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Paper => "paper",
            Scale::Desk => "desk",
        })
    }
}

/// Published reference value attached to a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric {
    pub name: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Scenario {
    pub name: &'static str,
    pub summary: &'static str,
    paper: &'static str,
    desk: &'static str,
    /// Reference values at paper scale.
    pub expected: &'static [Metric],
}

impl Scenario {
    pub fn text(&self, scale: Scale) -> &'static str {
        match scale {
            Scale::Paper => self.paper,
            Scale::Desk => self.desk,
        }
    }
}

const fn m(name: &'static str, value: f64) -> Metric {
    Metric { name, value }
}

pub const CATALOG: &[Scenario] = &[
    Scenario {
        name: "test1a",
        summary: "manufactured traveling wave, energy-norm convergence",
        paper: include_str!("../scenarios/test1a.paper.cfg"),
        desk: include_str!("../scenarios/test1a.desk.cfg"),
        expected: &[m("energy_error_p2_h0.0374", 3.4308e-4)],
    },
    Scenario {
        name: "test1b",
        summary: "single front, adaptive vs uniform degrees of freedom",
        paper: include_str!("../scenarios/test1b.paper.cfg"),
        desk: include_str!("../scenarios/test1b.desk.cfg"),
        expected: &[
            m("l2_error_uniform_t5", 1.63e-3),
            m("l2_error_adaptive_t5", 1.62e-3),
            m("ndof_initial", 3.15e4),
            m("ndof_after_wave", 4500.0),
        ],
    },
    Scenario {
        name: "test1c",
        summary: "single front driven by the full, jump-only or residual-only indicator",
        paper: include_str!("../scenarios/test1c.paper.cfg"),
        desk: include_str!("../scenarios/test1c.desk.cfg"),
        expected: &[
            m("l2_error_full_t2", 3.82e-3),
            m("l2_error_jump_t2", 3.85e-3),
            m("l2_error_residual_t2", 1.05e-1),
        ],
    },
    Scenario {
        name: "test2a",
        summary: "two colliding fronts, homogeneous conductivity",
        paper: include_str!("../scenarios/test2a.paper.cfg"),
        desk: include_str!("../scenarios/test2a.desk.cfg"),
        expected: &[m("ndof_mid_run", 8.6e3), m("collision_time", 15.6), m("ndof_after_collision", 4500.0)],
    },
    Scenario {
        name: "test2b",
        summary: "slow and fast fronts across a conductivity jump",
        paper: include_str!("../scenarios/test2b.paper.cfg"),
        desk: include_str!("../scenarios/test2b.desk.cfg"),
        expected: &[m("speed_slow", 0.1212), m("speed_fast", 0.3157)],
    },
    Scenario {
        name: "test3",
        summary: "Barreto-Cressman bursting with forcing in a grey-matter slab",
        paper: include_str!("../scenarios/test3.paper.cfg"),
        desk: include_str!("../scenarios/test3.desk.cfg"),
        expected: &[m("second_spike_0d_unforced", 40.0), m("second_spike_0d_forced", 7.0)],
    },
    Scenario {
        name: "two-material",
        summary: "front crossing from isotropic grey into anisotropic white matter",
        paper: include_str!("../scenarios/two-material.paper.cfg"),
        desk: include_str!("../scenarios/two-material.desk.cfg"),
        expected: &[],
    },
];

pub fn names() -> impl Iterator<Item = &'static str> {
    CATALOG.iter().map(|s| s.name)
}

pub fn find(name: &str) -> Result<&'static Scenario, ConfigError> {
    CATALOG.iter().find(|s| s.name == name).ok_or_else(|| ConfigError::UnknownScenario(name.to_string()))
}

/// Parsed configuration of a catalog entry.
pub fn instantiate(name: &str, scale: Scale) -> Result<RunConfig, ConfigError> {
    parse_config(find(name)?.text(scale))
}
