//! Physical parameter sets for the vertical vehicle-track model and the
//! key/value parameter file they are loaded from.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Parameter file shipped with the repository.
pub const NOMINAL_PARAMS_TOML: &str = include_str!("../../../data/crh380_nominal.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidBodyParams {
    /// kg
    pub carbody_mass: f64,
    /// kg·m²
    pub carbody_pitch_inertia: f64,
    pub bogie_mass: f64,
    pub bogie_pitch_inertia: f64,
    pub wheelset_mass: f64,
}

impl RigidBodyParams {
    pub fn validate(&self) -> Result<()> {
        positive("carbody_mass", self.carbody_mass)?;
        positive("carbody_pitch_inertia", self.carbody_pitch_inertia)?;
        positive("bogie_mass", self.bogie_mass)?;
        positive("bogie_pitch_inertia", self.bogie_pitch_inertia)?;
        positive("wheelset_mass", self.wheelset_mass)
    }
}

/// Suspension and fastener force elements. Primary values are per wheelset,
/// secondary values per bogie, fastener values per discrete support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspensionParams {
    pub primary_stiffness: f64,
    pub primary_damping: f64,
    pub secondary_stiffness: f64,
    pub secondary_damping: f64,
    pub fastener_stiffness: f64,
    pub fastener_damping: f64,
    /// Half the wheelbase of a bogie (l_t), m.
    pub semi_wheelbase: f64,
    /// Half the distance between bogie pivots (l_c), m.
    pub semi_bogie_spacing: f64,
}

impl SuspensionParams {
    pub fn validate(&self) -> Result<()> {
        nonnegative("primary_stiffness", self.primary_stiffness)?;
        nonnegative("primary_damping", self.primary_damping)?;
        nonnegative("secondary_stiffness", self.secondary_stiffness)?;
        nonnegative("secondary_damping", self.secondary_damping)?;
        nonnegative("fastener_stiffness", self.fastener_stiffness)?;
        nonnegative("fastener_damping", self.fastener_damping)?;
        positive("semi_wheelbase", self.semi_wheelbase)?;
        positive("semi_bogie_spacing", self.semi_bogie_spacing)
    }

    /// Wheelset positions relative to the rear wheelset, leading wheelset first.
    pub fn wheel_offsets(&self) -> [f64; 4] {
        let (lc, lt) = (self.semi_bogie_spacing, self.semi_wheelbase);
        [2.0 * lc + 2.0 * lt, 2.0 * lc, 2.0 * lt, 0.0]
    }
}

/// Simply supported rail on discrete fasteners, plus the running speed and
/// the wheel-rail contact law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamParams {
    /// Pa
    pub elastic_modulus: f64,
    /// m⁴
    pub second_moment: f64,
    /// kg/m
    pub mass_per_length: f64,
    /// m
    pub length: f64,
    /// Number of retained modes (NM).
    pub modes: usize,
    /// Fastener locations along the rail, strictly increasing, m.
    pub fastener_positions: Vec<f64>,
    /// m/s
    pub speed: f64,
    /// Hertzian constant G, m/N^(2/3).
    pub hertz_constant: f64,
    /// Contact law exponent; 1.5 is the nonlinear Hertz law, 1.0 the linearised one.
    pub hertz_exponent: f64,
    /// Position of the rear wheelset at t = 0, m.
    pub entry_position: f64,
}

impl BeamParams {
    pub fn validate(&self) -> Result<()> {
        if self.modes < 1 {
            return Err(invalid("rail mode count must be at least 1"));
        }
        positive("elastic_modulus", self.elastic_modulus)?;
        positive("second_moment", self.second_moment)?;
        positive("mass_per_length", self.mass_per_length)?;
        positive("length", self.length)?;
        positive("hertz_constant", self.hertz_constant)?;
        positive("hertz_exponent", self.hertz_exponent)?;
        nonnegative("speed", self.speed)?;
        let mut prev = f64::NEG_INFINITY;
        for &x in &self.fastener_positions {
            if !(0.0..=self.length).contains(&x) || x <= prev {
                return Err(invalid(format!(
                    "fastener positions must be strictly increasing inside [0, {}]",
                    self.length
                )));
            }
            prev = x;
        }
        Ok(())
    }

    pub fn fastener_count(&self) -> usize {
        self.fastener_positions.len()
    }

    /// Fasteners at (i + 1/2)·spacing covering the whole rail.
    pub fn uniform_fasteners(length: f64, spacing: f64) -> Vec<f64> {
        let n = (length / spacing).floor() as usize;
        (0..n).map(|i| (i as f64 + 0.5) * spacing).collect()
    }
}

/// Everything needed to assemble one vehicle-track system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VtcdParams {
    pub rigid: RigidBodyParams,
    pub suspension: SuspensionParams,
    pub beam: BeamParams,
    /// m/s²
    pub gravity: f64,
}

/// Names of the 13 varied parameters, in parameter-vector order.
pub const VARIED_PARAMETER_NAMES: [&str; 13] = [
    "carbody_mass",
    "carbody_pitch_inertia",
    "bogie_mass",
    "bogie_pitch_inertia",
    "wheelset_mass",
    "primary_stiffness",
    "primary_damping",
    "secondary_stiffness",
    "secondary_damping",
    "fastener_stiffness",
    "fastener_damping",
    "speed",
    "hertz_constant",
];

pub const N_VARIED: usize = VARIED_PARAMETER_NAMES.len();

impl VtcdParams {
    pub fn nominal() -> Self {
        Self::from_toml_str(NOMINAL_PARAMS_TOML).expect("shipped parameter file is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ParamFile =
            toml::from_str(text).map_err(|e| Error::Format(format!("parameter file: {e}")))?;
        let params = file.into_params();
        params.validate()?;
        Ok(params)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&ParamFile::from_params(self)).expect("parameter file serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.rigid.validate()?;
        self.suspension.validate()?;
        self.beam.validate()?;
        nonnegative("gravity", self.gravity)
    }

    /// The 13 varied entries, in [`VARIED_PARAMETER_NAMES`] order.
    pub fn varied_vector(&self) -> [f64; N_VARIED] {
        let (r, s, b) = (&self.rigid, &self.suspension, &self.beam);
        [
            r.carbody_mass,
            r.carbody_pitch_inertia,
            r.bogie_mass,
            r.bogie_pitch_inertia,
            r.wheelset_mass,
            s.primary_stiffness,
            s.primary_damping,
            s.secondary_stiffness,
            s.secondary_damping,
            s.fastener_stiffness,
            s.fastener_damping,
            b.speed,
            b.hertz_constant,
        ]
    }

    pub fn with_varied(&self, values: &[f64]) -> Result<Self> {
        if values.len() != N_VARIED {
            return Err(Error::DimensionMismatch {
                expected: N_VARIED,
                actual: values.len(),
                context: "varied parameter vector",
            });
        }
        let mut p = self.clone();
        let v = values;
        p.rigid.carbody_mass = v[0];
        p.rigid.carbody_pitch_inertia = v[1];
        p.rigid.bogie_mass = v[2];
        p.rigid.bogie_pitch_inertia = v[3];
        p.rigid.wheelset_mass = v[4];
        p.suspension.primary_stiffness = v[5];
        p.suspension.primary_damping = v[6];
        p.suspension.secondary_stiffness = v[7];
        p.suspension.secondary_damping = v[8];
        p.suspension.fastener_stiffness = v[9];
        p.suspension.fastener_damping = v[10];
        p.beam.speed = v[11];
        p.beam.hertz_constant = v[12];
        p.validate()?;
        Ok(p)
    }

    /// Initial wheelset positions along the rail, leading wheelset first.
    pub fn initial_wheel_positions(&self) -> [f64; 4] {
        self.suspension
            .wheel_offsets()
            .map(|o| self.beam.entry_position + o)
    }
}

fn positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be strictly positive, got {value}")))
    }
}

fn nonnegative(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be nonnegative, got {value}")))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamFile {
    vehicle: RigidBodyParams,
    suspension: SuspensionParams,
    rail: RailSection,
    contact: ContactSection,
    operation: OperationSection,
}

#[derive(Debug, Serialize, Deserialize)]
struct RailSection {
    elastic_modulus: f64,
    second_moment: f64,
    mass_per_length: f64,
    length: f64,
    modes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fastener_spacing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fastener_positions: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ContactSection {
    hertz_constant: f64,
    #[serde(default = "default_exponent")]
    hertz_exponent: f64,
}

fn default_exponent() -> f64 {
    1.5
}

#[derive(Debug, Serialize, Deserialize)]
struct OperationSection {
    speed: f64,
    gravity: f64,
    entry_position: f64,
}

impl ParamFile {
    fn into_params(self) -> VtcdParams {
        let fastener_positions = match (self.rail.fastener_positions, self.rail.fastener_spacing) {
            (Some(list), _) => list,
            (None, Some(spacing)) if spacing > 0.0 => {
                BeamParams::uniform_fasteners(self.rail.length, spacing)
            }
            _ => Vec::new(),
        };
        VtcdParams {
            rigid: self.vehicle,
            suspension: self.suspension,
            beam: BeamParams {
                elastic_modulus: self.rail.elastic_modulus,
                second_moment: self.rail.second_moment,
                mass_per_length: self.rail.mass_per_length,
                length: self.rail.length,
                modes: self.rail.modes,
                fastener_positions,
                speed: self.operation.speed,
                hertz_constant: self.contact.hertz_constant,
                hertz_exponent: self.contact.hertz_exponent,
                entry_position: self.operation.entry_position,
            },
            gravity: self.operation.gravity,
        }
    }

    fn from_params(p: &VtcdParams) -> Self {
        ParamFile {
            vehicle: p.rigid.clone(),
            suspension: p.suspension.clone(),
            rail: RailSection {
                elastic_modulus: p.beam.elastic_modulus,
                second_moment: p.beam.second_moment,
                mass_per_length: p.beam.mass_per_length,
                length: p.beam.length,
                modes: p.beam.modes,
                fastener_spacing: None,
                fastener_positions: Some(p.beam.fastener_positions.clone()),
            },
            contact: ContactSection {
                hertz_constant: p.beam.hertz_constant,
                hertz_exponent: p.beam.hertz_exponent,
            },
            operation: OperationSection {
                speed: p.beam.speed,
                gravity: p.gravity,
                entry_position: p.beam.entry_position,
            },
        }
    }
}
