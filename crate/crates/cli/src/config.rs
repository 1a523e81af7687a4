use std::path::Path;

use anyhow::{bail, Context, Result};
use prfem::report::Format;
use prfem::MixedElement;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Reconstruct {
    On,
    Off,
    Both,
}

impl Reconstruct {
    pub fn flags(self) -> Vec<bool> {
        match self {
            Reconstruct::On => vec![true],
            Reconstruct::Off => vec![false],
            Reconstruct::Both => vec![true, false],
        }
    }
}

/// Tolerances a run is checked against; every field can be set in the config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub velocity_eoc: f64,
    pub pressure_eoc: f64,
    pub mini_velocity_eoc: f64,
    pub mini_pressure_eoc: f64,
    pub coefficient: f64,
    pub picard: f64,
    pub max_iter: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            velocity_eoc: 0.15,
            pressure_eoc: 0.25,
            mini_velocity_eoc: 0.2,
            mini_pressure_eoc: 0.3,
            coefficient: 1e-8,
            picard: 1e-11,
            max_iter: 50,
        }
    }
}

/// The JSON document accepted by `--config`. Omitted fields take the
/// defaults of the command being run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub element: Option<String>,
    pub order: Option<usize>,
    pub elements: Option<Vec<String>>,
    pub levels: Option<Vec<usize>>,
    pub nu: Option<Vec<f64>>,
    pub reconstruct: Option<Reconstruct>,
    pub seed: Option<u64>,
    pub preset: Option<String>,
    pub samples: Option<usize>,
    pub formats: Option<Vec<String>>,
    pub tolerances: Tolerances,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("config {}", path.display()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Convergence,
    NuSweep,
    GradientForcing,
    NavierStokes,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Convergence => "convergence",
            Command::NuSweep => "nu-sweep",
            Command::GradientForcing => "gradient-forcing",
            Command::NavierStokes => "navier-stokes",
            Command::Verify => "verify",
        }
    }

    fn default_elements(self) -> Vec<MixedElement> {
        use MixedElement::*;
        match self {
            Command::NuSweep => vec![TaylorHood(2)],
            Command::NavierStokes => vec![TaylorHood(2), TaylorHood(3), TaylorHood(4)],
            _ => vec![TaylorHood(2), TaylorHood(3), TaylorHood(4), Mini(1)],
        }
    }

    fn default_levels(self) -> Vec<usize> {
        match self {
            Command::Convergence => vec![4, 8, 16, 32],
            Command::NuSweep => vec![6, 12, 24],
            Command::GradientForcing => vec![4, 8, 16],
            Command::NavierStokes => vec![13, 27],
            Command::Verify => vec![8],
        }
    }

    fn default_nu(self) -> Vec<f64> {
        match self {
            Command::NuSweep => prfem::experiments::default_viscosities(),
            Command::NavierStokes => vec![0.1],
            _ => vec![1e-3],
        }
    }

    fn default_preset(self) -> &'static str {
        match self {
            Command::NavierStokes => "potential_flow",
            Command::GradientForcing => "gradient_forcing",
            _ => "example1_2d",
        }
    }
}

/// Flag values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub element: Option<String>,
    pub order: Option<usize>,
    pub levels: Option<Vec<usize>>,
    pub reconstruct: Option<Reconstruct>,
    pub seed: Option<u64>,
}

/// Fully resolved run parameters; serialized form is hashed into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    pub elements: Vec<String>,
    pub levels: Vec<usize>,
    pub nu: Vec<f64>,
    pub reconstruct: Reconstruct,
    pub seed: u64,
    pub preset: String,
    pub samples: usize,
    pub formats: Vec<String>,
    pub tolerances: Tolerances,
}

fn parse_element(name: &str, order: Option<usize>) -> Result<MixedElement> {
    let lower = name.trim().to_ascii_lowercase();
    let bare = matches!(lower.as_str(), "th" | "taylor-hood" | "taylorhood" | "taylor_hood" | "mini");
    let full = match (bare, order) {
        (true, Some(k)) => format!("{lower}{k}"),
        (false, Some(_)) => bail!("--order given together with an element that already has an order ('{name}')"),
        (_, None) => lower,
    };
    Ok(full.parse::<MixedElement>()?)
}

impl RunConfig {
    pub fn resolve(command: Command, file: ConfigFile, o: Overrides) -> Result<Self> {
        let element = o.element.or(file.element.clone());
        let order = o.order.or(file.order);
        let elements = match (element, order, &file.elements) {
            (Some(e), order, _) => vec![parse_element(&e, order)?],
            (None, Some(k), _) => vec![parse_element("th", Some(k))?],
            (None, None, Some(list)) => list.iter().map(|e| parse_element(e, None)).collect::<Result<_>>()?,
            (None, None, None) => command.default_elements(),
        };
        let levels = o.levels.or(file.levels).unwrap_or_else(|| command.default_levels());
        if levels.is_empty() || levels.contains(&0) {
            bail!("levels must be a nonempty list of positive integers");
        }
        let nu = file.nu.unwrap_or_else(|| command.default_nu());
        if nu.is_empty() || nu.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            bail!("nu must be a nonempty list of positive numbers");
        }
        let formats = file.formats.unwrap_or_else(|| vec!["csv".into(), "md".into(), "dat".into()]);
        for f in &formats {
            f.parse::<Format>()?;
        }
        let preset = file.preset.unwrap_or_else(|| command.default_preset().to_string());
        prfem::analysis::preset(&preset)?;
        let t = file.tolerances;
        if t.max_iter == 0 || !(t.picard > 0.0) {
            bail!("tolerances.picard must be positive and tolerances.max_iter at least 1");
        }
        Ok(Self {
            command: command.name(),
            elements: elements.iter().map(|e| e.to_string()).collect(),
            levels,
            nu,
            reconstruct: o.reconstruct.or(file.reconstruct).unwrap_or(Reconstruct::Both),
            seed: o.seed.or(file.seed).unwrap_or(2024),
            preset,
            samples: file.samples.unwrap_or(20),
            formats,
            tolerances: t,
        })
    }

    pub fn elements(&self) -> Vec<MixedElement> {
        self.elements.iter().map(|e| e.parse().expect("validated on resolve")).collect()
    }

    pub fn formats(&self) -> Vec<Format> {
        self.formats.iter().map(|f| f.parse().expect("validated on resolve")).collect()
    }

    pub fn json(&self) -> String {
        serde_json::to_string(self).expect("plain data serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.json().as_bytes()))
    }
}
