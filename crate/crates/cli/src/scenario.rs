//! Scenario files and built-in presets.
//!
//! A scenario file is a JSON object:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "kind": "pointer-readout",
//!   "params": { "pointer_width": 0.25 },
//!   "ensemble": { "trajectories": 10000, "seed": 7 }
//! }
//! ```
//!
//! `params` is merged key by key over the defaults of `kind`, so a file only
//! lists what it changes. Unknown keys anywhere are schema errors.

use std::path::Path;

use bohmlab_core::equilibrium::EnsembleSpec;
use bohmlab_core::experiments::{AbsoluteUncertaintyParams, DoubleSlitParams, FreeGaussianParams, PacketExchangeParams};
use bohmlab_core::measurement::{MeasurementScenario, PacketSpec, ReadyShape};
use bohmlab_core::{Axis, Boundary, Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum Experiment {
    PointerReadout(MeasurementScenario),
    Camera(MeasurementScenario),
    RepeatMeasurement(MeasurementScenario),
    DoubleSlit(DoubleSlitParams),
    PacketExchange(PacketExchangeParams),
    AbsoluteUncertainty(AbsoluteUncertaintyParams),
    FreeGaussian(FreeGaussianParams),
}

pub const KINDS: [&str; 7] = [
    "pointer-readout",
    "camera",
    "repeat-measurement",
    "double-slit",
    "packet-exchange",
    "absolute-uncertainty",
    "free-gaussian",
];

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::PointerReadout(_) => "pointer-readout",
            Experiment::Camera(_) => "camera",
            Experiment::RepeatMeasurement(_) => "repeat-measurement",
            Experiment::DoubleSlit(_) => "double-slit",
            Experiment::PacketExchange(_) => "packet-exchange",
            Experiment::AbsoluteUncertainty(_) => "absolute-uncertainty",
            Experiment::FreeGaussian(_) => "free-gaussian",
        }
    }

    /// Defaults of a kind.
    pub fn default_for(kind: &str) -> Result<Experiment> {
        Ok(match kind {
            "pointer-readout" => Experiment::PointerReadout(measurement(0.3, 512, false)),
            "camera" => Experiment::Camera(measurement(0.3, 256, true)),
            "repeat-measurement" => Experiment::RepeatMeasurement(measurement(0.3, 256, true)),
            "double-slit" => Experiment::DoubleSlit(DoubleSlitParams::default()),
            "packet-exchange" => Experiment::PacketExchange(PacketExchangeParams::default()),
            "absolute-uncertainty" => Experiment::AbsoluteUncertainty(AbsoluteUncertaintyParams::default()),
            "free-gaussian" => Experiment::FreeGaussian(FreeGaussianParams::default()),
            other => {
                return Err(Error::Schema(format!(
                    "unknown kind `{other}`, expected one of {}",
                    KINDS.join(", ")
                )))
            }
        })
    }

    fn params(&self) -> Value {
        match serde_json::to_value(self).expect("serializable") {
            Value::Object(mut m) => m.remove("params").unwrap_or(Value::Null),
            _ => unreachable!(),
        }
    }

    /// Semantic checks that need no simulation.
    pub fn validate(&self) -> Result<Value> {
        let axes_ok = |axes: &[Axis]| axes.iter().try_for_each(|a| a.validate());
        match self {
            Experiment::PointerReadout(s) | Experiment::Camera(s) | Experiment::RepeatMeasurement(s) => {
                s.validate()?;
                if !matches!(self, Experiment::PointerReadout(_)) && s.camera.is_none() {
                    return Err(Error::Schema(format!("`camera` axis is required for kind `{}`", self.kind())));
                }
                let leak = s.check_localization()?;
                Ok(serde_json::json!({
                    "pointer_displacement": s.pointer_displacement(),
                    "required_displacement": s.min_separation * s.pointer_width,
                    "localization_leak": leak,
                }))
            }
            Experiment::DoubleSlit(p) => {
                axes_ok(&[p.axis])?;
                Ok(Value::Null)
            }
            Experiment::PacketExchange(p) => {
                axes_ok(&[p.axis, p.transverse_axis])?;
                Ok(Value::Null)
            }
            Experiment::AbsoluteUncertainty(p) => {
                axes_ok(&[p.system, p.pointer])?;
                Ok(Value::Null)
            }
            Experiment::FreeGaussian(p) => {
                axes_ok(&[p.axis])?;
                Ok(Value::Null)
            }
        }
    }
}

fn measurement(c1_sq: f64, points: usize, camera: bool) -> MeasurementScenario {
    let packet = |center| PacketSpec {
        center,
        sigma: 0.5,
        momentum: 0.0,
    };
    MeasurementScenario {
        system: Axis::symmetric(8.0, points).expect("valid axis"),
        pointer: Axis::symmetric(16.0, points).expect("valid axis"),
        camera: camera.then(|| Axis::symmetric(16.0, points).expect("valid axis")),
        boundary: Boundary::Periodic,
        c1: [c1_sq.sqrt(), 0.0],
        c2: [(1.0 - c1_sq).sqrt(), 0.0],
        phi1: packet(-4.0),
        phi2: packet(4.0),
        pointer_width: 0.5,
        camera_width: 0.5,
        separation: 6.0,
        min_separation: 6.0,
        ready_shape: ReadyShape::Gaussian,
        coupling_duration: 1.0,
        settle_time: 0.0,
        dt: None,
        snapshot_stride: 10,
        masses: vec![1.0; 3],
        localization_tolerance: 1e-6,
    }
}

/// A fully resolved scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub experiment: Experiment,
    pub ensemble: EnsembleSpec,
    /// Check names whose verdicts decide the run.
    pub acceptance: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema_version: u32,
    kind: String,
    #[serde(default)]
    params: Option<Value>,
    #[serde(default)]
    ensemble: Option<EnsembleSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    acceptance: Vec<String>,
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    // Tagged enums are replaced whole.
                    Some(slot) if slot.is_object() && v.is_object() && v.get("shape").is_none() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn schema(e: serde_json::Error) -> Error {
    Error::Schema(e.to_string())
}

/// Optional overrides applied before the parameters are resolved.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trajectories: Option<usize>,
    pub snapshot_stride: Option<usize>,
}

impl ScenarioSpec {
    pub fn from_json(text: &str, o: &Overrides) -> Result<ScenarioSpec> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(schema)?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        let mut params = Experiment::default_for(&file.kind)?.params();
        if let Some(p) = file.params {
            if !p.is_object() {
                return Err(Error::Schema("`params` must be an object".into()));
            }
            merge(&mut params, p);
        }
        if let (Some(n), Value::Object(m)) = (o.snapshot_stride, &mut params) {
            if !m.contains_key("snapshot_stride") {
                return Err(Error::Config(format!("kind `{}` has no snapshot stride", file.kind)));
            }
            m.insert("snapshot_stride".into(), n.into());
        }
        let mut tagged = Map::new();
        tagged.insert("kind".into(), Value::String(file.kind.clone()));
        tagged.insert("params".into(), params);
        let experiment: Experiment =
            serde_json::from_value(Value::Object(tagged)).map_err(|e| Error::Schema(format!("params: {e}")))?;
        let mut ensemble = file.ensemble.unwrap_or_else(|| default_ensemble(&experiment));
        if let Some(s) = o.seed {
            ensemble.seed = s;
        }
        if let Some(n) = o.trajectories {
            ensemble.trajectories = n;
        }
        ensemble.validate()?;
        Ok(ScenarioSpec {
            experiment,
            ensemble,
            acceptance: file.acceptance,
        })
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(ScenarioFile {
            schema_version: SCHEMA_VERSION,
            kind: self.experiment.kind().to_string(),
            params: Some(self.experiment.params()),
            ensemble: Some(self.ensemble.clone()),
            acceptance: self.acceptance.clone(),
        })
        .expect("serializable")
    }

    /// Preset name or path to a scenario file.
    pub fn load(source: &str, o: &Overrides) -> Result<ScenarioSpec> {
        if let Some(p) = preset(source) {
            return ScenarioSpec::from_json(&p.scenario.to_json().to_string(), o);
        }
        let path = Path::new(source);
        if !path.exists() {
            return Err(Error::Config(format!(
                "`{source}` is neither a preset nor an existing file (presets: {})",
                presets().iter().map(|p| p.name).collect::<Vec<_>>().join(", ")
            )));
        }
        ScenarioSpec::from_json(&std::fs::read_to_string(path)?, o)
    }
}

fn default_ensemble(e: &Experiment) -> EnsembleSpec {
    let n = match e {
        Experiment::RepeatMeasurement(_) => 1000,
        Experiment::AbsoluteUncertainty(_) => 20_000,
        _ => 10_000,
    };
    EnsembleSpec::new(n, 1)
}

pub struct Preset {
    pub name: &'static str,
    pub claim: &'static str,
    pub scenario: ScenarioSpec,
}

fn make(name: &'static str, claim: &'static str, experiment: Experiment, acceptance: &[&str]) -> Preset {
    let ensemble = default_ensemble(&experiment);
    Preset {
        name,
        claim,
        scenario: ScenarioSpec {
            experiment,
            ensemble,
            acceptance: acceptance.iter().map(|s| s.to_string()).collect(),
        },
    }
}

pub fn presets() -> Vec<Preset> {
    let tails = MeasurementScenario {
        ready_shape: ReadyShape::TruncatedCauchy { cutoff: 20.0 },
        localization_tolerance: 0.2,
        ..measurement(0.3, 256, true)
    };
    vec![
        make(
            "pointer-readout",
            "P(Y in L) equals |c1|^2 up to the Cauchy-Schwarz cross term",
            Experiment::PointerReadout(measurement(0.3, 512, false)),
            &["born-rule-empirical", "born-rule-quadrature"],
        ),
        make(
            "camera",
            "a camera reading the pointer never disagrees with it",
            Experiment::Camera(measurement(0.3, 256, true)),
            &["off-diagonal-quadrature", "off-diagonal-count", "camera-agreement"],
        ),
        make(
            "camera-tails",
            "with long-tailed pointer states disagreement is a rare but real event",
            Experiment::Camera(tails),
            &["off-diagonal-quadrature-positive", "off-diagonal-within-wilson"],
        ),
        make(
            "repeat-measurement",
            "a repeated measurement returns the first outcome",
            Experiment::RepeatMeasurement(measurement(0.3, 256, true)),
            &["repeat-agreement", "conditional-fidelity"],
        ),
        make(
            "double-slit",
            "trajectories reach the screen on the side of the slit they left",
            Experiment::DoubleSlit(DoubleSlitParams::default()),
            &["side-flips", "axis-crossings", "interference-minimum-significance"],
        ),
        make(
            "single-slit",
            "one slit alone shows no interference minima",
            Experiment::DoubleSlit(DoubleSlitParams {
                single_slit: true,
                ..Default::default()
            }),
            &["single-slit-quadrature-minima", "single-slit-minimum-significance"],
        ),
        make(
            "packet-exchange",
            "crossing packets exchange trajectories: nobody crosses the plane",
            Experiment::PacketExchange(PacketExchangeParams::default()),
            &["plane-crossings", "attribution-mismatch"],
        ),
        make(
            "packet-exchange-offset",
            "packets that pass without overlapping carry their trajectories along",
            Experiment::PacketExchange(PacketExchangeParams {
                transverse_offset: Some(8.0),
                ..Default::default()
            }),
            &["attribution-mismatch"],
        ),
        make(
            "absolute-uncertainty",
            "given the record, X is distributed as |phi_cond|^2 and nothing finer",
            Experiment::AbsoluteUncertainty(AbsoluteUncertaintyParams::default()),
            &["record-bin-tv", "conditional-pit-ks", "width-ratio"],
        ),
        make(
            "absolute-uncertainty-control",
            "an uncoupled pointer tells nothing: X keeps its prior",
            Experiment::AbsoluteUncertainty(AbsoluteUncertaintyParams {
                coupling: 0.0,
                ..Default::default()
            }),
            &["record-bin-tv", "conditional-pit-ks"],
        ),
        make(
            "free-gaussian",
            "a spreading Gaussian carries its ensemble along in equilibrium",
            Experiment::FreeGaussian(FreeGaussianParams::default()),
            &["trajectory-scaling", "width-law", "order-violations"],
        ),
    ]
}

pub fn preset(name: &str) -> Option<Preset> {
    presets().into_iter().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves() {
        for p in presets() {
            let s = ScenarioSpec::load(p.name, &Overrides::default()).unwrap();
            assert_eq!(s, p.scenario, "{}", p.name);
        }
    }

    #[test]
    fn partial_params_merge_over_defaults() {
        let text = r#"{"schema_version":1,"kind":"pointer-readout","params":{"pointer_width":0.25,"phi1":{"sigma":0.4}}}"#;
        let s = ScenarioSpec::from_json(text, &Overrides::default()).unwrap();
        match &s.experiment {
            Experiment::PointerReadout(m) => {
                assert_eq!(m.pointer_width, 0.25);
                assert_eq!(m.phi1.sigma, 0.4);
                assert_eq!(m.phi1.center, -4.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_apply() {
        let o = Overrides {
            seed: Some(9),
            trajectories: Some(50),
            snapshot_stride: Some(3),
        };
        let s = ScenarioSpec::load("free-gaussian", &o).unwrap();
        assert_eq!((s.ensemble.seed, s.ensemble.trajectories), (9, 50));
        match s.experiment {
            Experiment::FreeGaussian(p) => assert_eq!(p.snapshot_stride, 3),
            other => panic!("{other:?}"),
        }
        let e = ScenarioSpec::load("absolute-uncertainty", &o).unwrap_err();
        assert_eq!(e.kind(), "configuration");
    }
}
