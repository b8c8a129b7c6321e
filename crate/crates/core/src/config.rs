//! Run configuration as TOML, with the shipped scenario presets.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::medium::{Amplitude, DeclaredBounds, MediumModel};
use crate::observables::{DepthProfile, FourierAngular, Observable, ObservableSet, TimeFlux, TransverseMap, UniformBins};
use crate::spectral::{characteristic_time, DEFAULT_L, DEFAULT_U4_MODES};
use crate::transport::{ExitSide, Scattering, Slab, Source, TransportModel, TransportSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AmplitudeSpec {
    Constant { value: f64 },
    Gaussian { peak: f64, width: f64 },
    /// Constant amplitude `(1 − g)/(2π)` matching a Henyey–Greenstein kernel.
    HgLimit { g: f64 },
}

impl AmplitudeSpec {
    pub fn build(&self) -> Amplitude {
        match *self {
            AmplitudeSpec::Constant { value } => Amplitude::Constant(value),
            AmplitudeSpec::Gaussian { peak, width } => Amplitude::Gaussian { peak, width },
            AmplitudeSpec::HgLimit { g } => Amplitude::from_hg_anisotropy(g),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MediumSpec {
    /// Homogeneous medium filling space.
    Constant {
        alpha: f64,
        #[serde(default = "one")]
        lambda: f64,
        amplitude: AmplitudeSpec,
    },
    /// λ = 1 on −5 < x₃ < 40, constant α.
    Slab { alpha: f64, amplitude: AmplitudeSpec },
    /// Slab with α = `alpha_inside` on the ball of radius 3 at the origin.
    SphereDefect { alpha_inside: f64, amplitude: AmplitudeSpec },
    /// Slab with α = 5/3, 4/3, 1.9 on x₃ ≤ 2, 2 < x₃ ≤ 8, x₃ > 8 and a
    /// Gaussian amplitude.
    NkTurbulence,
}

fn one() -> f64 {
    1.0
}

impl MediumSpec {
    pub fn build(&self, bounds: Option<&DeclaredBounds>) -> Result<MediumModel> {
        if let Some(b) = bounds {
            let auto = self.build(None)?;
            return MediumModel::new(
                auto.alpha_field().clone(),
                auto.lambda_field().clone(),
                auto.amplitude().clone(),
                *b,
            );
        }
        match self {
            MediumSpec::Constant {
                alpha,
                lambda,
                amplitude,
            } => MediumModel::constant(*alpha, *lambda, amplitude.build()),
            MediumSpec::Slab { alpha, amplitude } => MediumModel::slab(*alpha, amplitude.build()),
            MediumSpec::SphereDefect { alpha_inside, amplitude } => {
                MediumModel::sphere_defect(*alpha_inside, amplitude.build())
            }
            MediumSpec::NkTurbulence => MediumModel::nk_turbulence(),
        }
    }

    /// Layer of the slab-type presets.
    pub fn slab(&self) -> Option<Slab> {
        match self {
            MediumSpec::Constant { .. } => None,
            _ => Some(Slab { lo: -5.0, hi: 40.0 }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportSpec {
    pub eps: f64,
    #[serde(default = "default_h0")]
    pub h0: f64,
    #[serde(default = "yes")]
    pub correction: bool,
    #[serde(default = "default_degree")]
    pub collocation_degree: usize,
    #[serde(default)]
    pub jacobi: [f64; 2],
    /// Henyey–Greenstein anisotropy; when set the classical kernel replaces
    /// the singular one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hg_anisotropy: Option<f64>,
    /// Overrides the layer implied by the medium preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slab: Option<Slab>,
}

fn default_h0() -> f64 {
    0.3
}

fn yes() -> bool {
    true
}

fn default_degree() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub n_particles: u64,
    #[serde(default = "one_u64")]
    pub seed: u64,
    #[serde(default = "one_usize")]
    pub workers: usize,
    /// Observation time; exactly one of `horizon` and `horizon_tc` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Observation time in units of the characteristic time t_c.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_tc: Option<f64>,
    /// α used for t_c (default 1).
    #[serde(default = "one")]
    pub tc_alpha: f64,
}

fn one_u64() -> u64 {
    1
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObservableSpec {
    Transverse {
        side: ExitSide,
        half_width: f64,
        cells: usize,
    },
    TimeFlux {
        side: ExitSide,
        lo: f64,
        hi: f64,
        dt: f64,
    },
    FourierAngular {
        xi_lo: f64,
        xi_hi: f64,
        xi_count: usize,
        dangle: f64,
    },
    DepthProfile {
        lo: f64,
        hi: f64,
        bins: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    #[serde(default = "default_l")]
    pub l_max: usize,
    #[serde(default = "default_modes")]
    pub u4_modes: usize,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        ReferenceSpec {
            l_max: DEFAULT_L,
            u4_modes: DEFAULT_U4_MODES,
        }
    }
}

fn default_l() -> usize {
    DEFAULT_L
}

fn default_modes() -> usize {
    DEFAULT_U4_MODES
}

/// Parameter sweep for `compare`: every (ε, α, correction) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub eps: Vec<f64>,
    pub alpha: Vec<f64>,
    pub correction: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub medium: MediumSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<DeclaredBounds>,
    pub transport: TransportSpec,
    pub run: RunSpec,
    pub source: Source,
    #[serde(default)]
    pub reference: ReferenceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub observables: Vec<ObservableSpec>,
}

const PRESETS: &[(&str, &str)] = &[
    ("test-case-u1", include_str!("../../../presets/test-case-u1.toml")),
    ("test-case-u4", include_str!("../../../presets/test-case-u4.toml")),
    ("slab-transmitted", include_str!("../../../presets/slab-transmitted.toml")),
    ("slab-reflected", include_str!("../../../presets/slab-reflected.toml")),
    ("sphere-defect", include_str!("../../../presets/sphere-defect.toml")),
    ("nk-turbulence", include_str!("../../../presets/nk-turbulence.toml")),
    ("hg-comparison", include_str!("../../../presets/hg-comparison.toml")),
    ("vacuum-smoke", include_str!("../../../presets/vacuum-smoke.toml")),
];

impl SimulationConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: SimulationConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// A shipped preset by name.
    pub fn preset(name: &str) -> Result<Self> {
        PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::parse(text))
            .unwrap_or_else(|| {
                Err(Error::Config(format!(
                    "unknown preset '{name}'; known: {}",
                    preset_names().join(", ")
                )))
            })
    }

    /// A path to a TOML file, or else a preset name.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        let p = Path::new(name_or_path);
        if p.exists() {
            Self::load(p)
        } else {
            Self::preset(name_or_path)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.transport;
        if !(t.eps > 0.0 && t.eps < 1.0) {
            return Err(Error::Config(format!("eps must lie in (0, 1), got {}", t.eps)));
        }
        if !(t.h0 > 0.0) {
            return Err(Error::Config(format!("h0 must be positive, got {}", t.h0)));
        }
        match (self.run.horizon, self.run.horizon_tc) {
            (Some(h), None) if h > 0.0 => {}
            (None, Some(h)) if h > 0.0 => {}
            _ => {
                return Err(Error::Config(
                    "set exactly one positive value of run.horizon or run.horizon_tc".into(),
                ))
            }
        }
        if self.run.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn medium_model(&self) -> Result<MediumModel> {
        self.medium.build(self.bounds.as_ref())
    }

    pub fn settings(&self) -> TransportSettings {
        TransportSettings {
            eps: self.transport.eps,
            h0: self.transport.h0,
            correction: self.transport.correction,
            collocation_degree: self.transport.collocation_degree,
            jacobi: (self.transport.jacobi[0], self.transport.jacobi[1]),
            slab: self.transport.slab.or_else(|| self.medium.slab()),
            scattering: match self.transport.hg_anisotropy {
                Some(g) => Scattering::HenyeyGreenstein { g },
                None => Scattering::Singular,
            },
        }
    }

    pub fn transport_model(&self) -> Result<TransportModel> {
        TransportModel::new(Arc::new(self.medium_model()?), self.settings())
    }

    /// a(0) of the configured medium.
    pub fn amplitude_at_zero(&self) -> Result<f64> {
        Ok(self.medium_model()?.amplitude().at_zero())
    }

    pub fn characteristic_time(&self) -> Result<f64> {
        characteristic_time(self.run.tc_alpha, self.amplitude_at_zero()?)
    }

    pub fn horizon(&self) -> Result<f64> {
        match (self.run.horizon, self.run.horizon_tc) {
            (Some(h), _) => Ok(h),
            (None, Some(m)) => Ok(m * self.characteristic_time()?),
            _ => Err(Error::Config("no horizon configured".into())),
        }
    }

    pub fn observable_set(&self) -> Result<ObservableSet> {
        let mass = self.source.total_mass();
        let items = self
            .observables
            .iter()
            .map(|o| {
                Ok(match *o {
                    ObservableSpec::Transverse { side, half_width, cells } => {
                        let b = UniformBins::new(-half_width, half_width, cells)?;
                        Observable::Transverse(TransverseMap::new(side, b, b))
                    }
                    ObservableSpec::TimeFlux { side, lo, hi, dt } => {
                        Observable::TimeFlux(TimeFlux::new(side, UniformBins::with_width(lo, hi, dt)?))
                    }
                    ObservableSpec::FourierAngular {
                        xi_lo,
                        xi_hi,
                        xi_count,
                        dangle,
                    } => Observable::Fourier(FourierAngular::uniform(xi_lo, xi_hi, xi_count, dangle, mass)?),
                    ObservableSpec::DepthProfile { lo, hi, bins } => {
                        Observable::Depth(DepthProfile::new(UniformBins::new(lo, hi, bins)?, mass))
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ObservableSet::new(items))
    }

    /// Constant α and a(0) of a homogeneous medium, as the reference solver needs.
    pub fn homogeneous_parameters(&self) -> Result<(f64, f64)> {
        match &self.medium {
            MediumSpec::Constant {
                alpha,
                lambda,
                amplitude,
            } => {
                if *lambda != 1.0 {
                    return Err(Error::Config(format!(
                        "the reference solver assumes lambda = 1, got {lambda}"
                    )));
                }
                let a = amplitude.build();
                if !a.is_constant() {
                    return Err(Error::Config("the reference solver needs a constant amplitude".into()));
                }
                Ok((*alpha, a.at_zero()))
            }
            _ => Err(Error::Config(
                "the reference solver needs the 'constant' medium preset".into(),
            )),
        }
    }
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}
