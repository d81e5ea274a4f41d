use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CethMode {
    Inactive,
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityModel {
    Constant,
    Tcn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GustPolicy {
    NoAbort,
    Abort,
    SafetyPosition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scenario {
    pub ceth: CethMode,
    pub velocity_model: VelocityModel,
    pub gust_policy: GustPolicy,
}

impl Scenario {
    pub fn new(ceth: CethMode, velocity_model: VelocityModel, gust_policy: GustPolicy) -> Result<Self> {
        if ceth == CethMode::Inactive && gust_policy == GustPolicy::Abort {
            return Err(Error::Invalid("the abort policy requires active CETH".into()));
        }
        Ok(Self {
            ceth,
            velocity_model,
            gust_policy,
        })
    }

    /// The eight evaluated combinations, in report order.
    pub fn all() -> Vec<Scenario> {
        use CethMode::*;
        use GustPolicy::*;
        use VelocityModel::*;
        [
            (Inactive, Tcn, NoAbort),
            (Inactive, Tcn, SafetyPosition),
            (Active, Constant, NoAbort),
            (Active, Constant, Abort),
            (Active, Constant, SafetyPosition),
            (Active, Tcn, NoAbort),
            (Active, Tcn, Abort),
            (Active, Tcn, SafetyPosition),
        ]
        .into_iter()
        .map(|(c, v, g)| Scenario::new(c, v, g).expect("valid combination"))
        .collect()
    }

    /// Whether the gust detector drives the policy.
    pub fn uses_detection(&self) -> bool {
        self.gust_policy != GustPolicy::NoAbort
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self.ceth {
            CethMode::Inactive => "inactive",
            CethMode::Active => "active",
        };
        let v = match self.velocity_model {
            VelocityModel::Constant => "const",
            VelocityModel::Tcn => "tcn",
        };
        let g = match self.gust_policy {
            GustPolicy::NoAbort => "no_abort",
            GustPolicy::Abort => "abort",
            GustPolicy::SafetyPosition => "safety",
        };
        write!(f, "{c}-{v}-{g}")
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('-').collect();
        let bad = || Error::Invalid(format!("unknown scenario '{s}', expected e.g. active-tcn-safety"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let ceth = match parts[0] {
            "inactive" => CethMode::Inactive,
            "active" => CethMode::Active,
            _ => return Err(bad()),
        };
        let vm = match parts[1] {
            "const" | "constant" => VelocityModel::Constant,
            "tcn" => VelocityModel::Tcn,
            _ => return Err(bad()),
        };
        let gp = match parts[2] {
            "no_abort" => GustPolicy::NoAbort,
            "abort" => GustPolicy::Abort,
            "safety" | "safety_position" => GustPolicy::SafetyPosition,
            _ => return Err(bad()),
        };
        Scenario::new(ceth, vm, gp)
    }
}
