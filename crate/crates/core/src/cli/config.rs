use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::render::{SceneConfig, ShadeOptions};
use crate::sds::{ChannelSet, DipConfig, ParamMode, StageConfig};

use super::CliError;

pub const RESOLUTIONS: [usize; 4] = [512, 1024, 2048, 4096];
pub const SERVER_ENV: &str = "SDS_SERVER";

/// Where epsilon predictions come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScorerSpec {
    /// In-process degenerate and super-resolution stand-ins.
    Toy,
    Remote(String),
}

impl FromStr for ScorerSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "toy" {
            return Ok(ScorerSpec::Toy);
        }
        let endpoint = s
            .strip_prefix("remote:")
            .ok_or_else(|| format!("scorer `{s}` must be `toy` or `remote:HOST:PORT`"))?;
        match endpoint.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => {
                Ok(ScorerSpec::Remote(endpoint.to_string()))
            }
            _ => Err(format!("scorer endpoint `{endpoint}` must be HOST:PORT")),
        }
    }
}

impl fmt::Display for ScorerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScorerSpec::Toy => f.write_str("toy"),
            ScorerSpec::Remote(e) => write!(f, "remote:{e}"),
        }
    }
}

impl Serialize for ScorerSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ScorerSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Classifier-free guidance per stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Guidance {
    pub stage1: f32,
    pub stage2: f32,
}

impl Guidance {
    pub fn default_for(scorer: &ScorerSpec) -> Self {
        match scorer {
            ScorerSpec::Toy => Self {
                stage1: 1.0,
                stage2: 1.0,
            },
            ScorerSpec::Remote(_) => Self {
                stage1: 20.0,
                stage2: 9.0,
            },
        }
    }
}

/// Second-stage settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Config {
    pub enabled: bool,
    /// Condition on renders of the frozen first-stage textures rather than
    /// on the current render.
    pub fixed_condition: bool,
    pub stage: StageConfig,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            enabled: true,
            fixed_condition: true,
            stage: StageConfig {
                steps: 1000,
                render_size: 256,
                ..Default::default()
            },
        }
    }
}

/// Settings of the in-process scorers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    /// Ground-truth texture directory (EXR maps); the bundled reference
    /// material when absent.
    pub target: Option<PathBuf>,
    pub views: usize,
    pub view_radius: f32,
    pub view_elevation_deg: f32,
    /// Unsharp gain of the super-resolution stand-in.
    pub sr_gain: f32,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            target: None,
            views: 8,
            view_radius: 1.8,
            view_elevation_deg: 20.0,
            sr_gain: 1.0,
        }
    }
}

/// Everything a `texgen` or `render` run needs. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// OBJ path or `builtin:sphere` / `builtin:torus`.
    pub mesh: String,
    pub prompt: String,
    #[serde(default = "default_scorer")]
    pub scorer: ScorerSpec,
    /// Endpoint of the super-resolution model; the first-stage endpoint
    /// when absent.
    #[serde(default)]
    pub scorer_stage2: Option<ScorerSpec>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "all_channels")]
    pub channels: ChannelSet,
    #[serde(default = "no_channels")]
    pub freeze: ChannelSet,
    #[serde(default = "default_param")]
    pub param: ParamMode,
    #[serde(default)]
    pub dip: DipConfig,
    /// Optional PNG used as the initial diffuse map.
    #[serde(default)]
    pub init_diffuse: Option<PathBuf>,
    /// HDR path or `train` / `studio`.
    #[serde(default = "default_train_env")]
    pub env_train: String,
    #[serde(default = "default_eval_env")]
    pub env_eval: String,
    #[serde(default)]
    pub guidance: Option<Guidance>,
    #[serde(default)]
    pub stage1: StageConfig,
    #[serde(default)]
    pub stage2: Stage2Config,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub shade: ShadeOptions,
    #[serde(default)]
    pub toy: ToyConfig,
}

fn default_scorer() -> ScorerSpec {
    ScorerSpec::Toy
}
fn default_resolution() -> usize {
    1024
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn all_channels() -> ChannelSet {
    ChannelSet::ALL
}
fn no_channels() -> ChannelSet {
    ChannelSet::NONE
}
fn default_param() -> ParamMode {
    ParamMode::Explicit
}
fn default_train_env() -> String {
    "train".into()
}
fn default_eval_env() -> String {
    "studio".into()
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub mesh: Option<String>,
    pub prompt: Option<String>,
    pub scorer: Option<ScorerSpec>,
    pub resolution: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub channels: Option<ChannelSet>,
    pub freeze: Option<ChannelSet>,
    pub envlight: Option<String>,
    pub stage2: Option<bool>,
    pub param: Option<ParamMode>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Loads the optional file, applies `SDS_SERVER` and then the flags,
    /// fills scorer-dependent defaults and validates.
    pub fn resolve(file: Option<&Path>, flags: &Overrides, server_env: Option<&str>) -> Result<Self, CliError> {
        let mut value = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("reading {}: {e}", p.display())))?;
                serde_json::from_str::<serde_json::Value>(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::Value::Object(Default::default()),
        };
        let obj = value
            .as_object_mut()
            .ok_or_else(|| CliError::Config("config must be a JSON object".into()))?;
        let mut set = |k: &str, v: serde_json::Value| {
            obj.insert(k.to_string(), v);
        };
        if let Some(endpoint) = server_env.filter(|s| !s.is_empty()) {
            set("scorer", format!("remote:{endpoint}").into());
        }
        if let Some(v) = &flags.mesh {
            set("mesh", v.clone().into());
        }
        if let Some(v) = &flags.prompt {
            set("prompt", v.clone().into());
        }
        if let Some(v) = &flags.scorer {
            set("scorer", v.to_string().into());
        }
        if let Some(v) = flags.resolution {
            set("resolution", v.into());
        }
        if let Some(v) = flags.seed {
            set("seed", v.into());
        }
        if let Some(v) = &flags.out {
            set("out", v.display().to_string().into());
        }
        if let Some(v) = flags.channels {
            set("channels", v.to_string().into());
        }
        if let Some(v) = flags.freeze {
            set("freeze", v.to_string().into());
        }
        if let Some(v) = &flags.envlight {
            set("env_train", v.clone().into());
        }
        if let Some(v) = flags.param {
            set("param", serde_json::to_value(v).expect("enum serializes"));
        }
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(on) = flags.stage2 {
            cfg.stage2.enabled = on;
        }
        cfg.finish()?;
        Ok(cfg)
    }

    /// Fills derived fields and validates.
    pub fn finish(&mut self) -> Result<(), CliError> {
        let g = *self.guidance.get_or_insert_with(|| Guidance::default_for(&self.scorer));
        self.stage1.sds.guidance = g.stage1;
        self.stage2.stage.sds.guidance = g.stage2;
        self.stage1.seed = self.seed;
        self.stage2.stage.seed = self.seed.wrapping_add(1);
        self.stage1.prompt = self.prompt.clone();
        self.stage2.stage.prompt = self.prompt.clone();
        self.validate()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !RESOLUTIONS.contains(&self.resolution) {
            return bad(format!(
                "resolution must be one of {{512,1024,2048,4096}}, got {}",
                self.resolution
            ));
        }
        if self.mesh.is_empty() {
            return bad("mesh: must not be empty".into());
        }
        if self.channels.is_empty() {
            return bad("channels: at least one channel must be enabled".into());
        }
        if !self.freeze.iter().all(|c| self.channels.contains(c)) {
            return bad(format!(
                "freeze: {} is not a subset of channels {}",
                self.freeze, self.channels
            ));
        }
        if self.param == ParamMode::Dip && !self.freeze.is_empty() {
            return bad("freeze: requires param = explicit".into());
        }
        if self.init_diffuse.is_some()
            && (self.param == ParamMode::Dip || !self.channels.contains(crate::sds::Channel::Diffuse))
        {
            return bad("init_diffuse: requires param = explicit with the diffuse channel enabled".into());
        }
        if self.param == ParamMode::Dip {
            DipConfig::check_resolution(self.resolution).map_err(|m| CliError::Config(format!("dip: {m}")))?;
        }
        self.stage1
            .validate()
            .map_err(|m| CliError::Config(format!("stage1: {m}")))?;
        self.stage2
            .stage
            .validate()
            .map_err(|m| CliError::Config(format!("stage2: {m}")))?;
        if self.stage2.enabled && !self.stage2.stage.render_size.is_multiple_of(crate::score::SR_FACTOR) {
            return bad(format!(
                "stage2.render_size: {} must be a multiple of {}",
                self.stage2.stage.render_size,
                crate::score::SR_FACTOR
            ));
        }
        self.scene
            .validate()
            .map_err(|e| CliError::Config(format!("scene: {e}")))?;
        if self.toy.views == 0 {
            return bad("toy.views: must be at least 1".into());
        }
        if !(self.toy.sr_gain.is_finite() && self.toy.sr_gain >= 0.0) {
            return bad(format!("toy.sr_gain: {} must be finite and >= 0", self.toy.sr_gain));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> RunConfig {
        let mut c = RunConfig::from_json(r#"{"mesh": "builtin:sphere", "prompt": "a vase"}"#).unwrap();
        c.finish().unwrap();
        c
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = minimal();
        assert_eq!(c.resolution, 1024);
        assert_eq!(c.seed, 0);
        assert_eq!(c.scorer, ScorerSpec::Toy);
        assert_eq!(c.stage1.steps, 1500);
        assert_eq!(c.stage2.stage.steps, 1000);
        assert_eq!(c.stage1.sds.guidance, 1.0);
    }

    #[test]
    fn bad_resolution_is_rejected() {
        let mut c = RunConfig::from_json(r#"{"mesh": "m.obj", "prompt": "p", "resolution": 777}"#).unwrap();
        let err = c.finish().unwrap_err().to_string();
        assert!(err.contains("resolution must be one of {512,1024,2048,4096}"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"mesh": "m", "prompt": "p", "sed": 1}"#).unwrap_err();
        assert!(err.to_string().contains("sed"));
        let err = RunConfig::from_json(r#"{"mesh": "m", "prompt": "p", "stage1": {"stepz": 1}}"#).unwrap_err();
        assert!(err.to_string().contains("stepz"));
    }

    #[test]
    fn flags_override_file_and_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"mesh": "builtin:sphere", "prompt": "p", "seed": 1}"#).unwrap();
        let flags = Overrides {
            seed: Some(5),
            ..Default::default()
        };
        let c = RunConfig::resolve(Some(&path), &flags, None).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.stage1.seed, 5);

        let c = RunConfig::resolve(Some(&path), &Overrides::default(), Some("10.0.0.1:7000")).unwrap();
        assert_eq!(c.scorer, ScorerSpec::Remote("10.0.0.1:7000".into()));
        assert_eq!(c.stage1.sds.guidance, 20.0);
        assert_eq!(c.stage2.stage.sds.guidance, 9.0);

        let flags = Overrides {
            scorer: Some(ScorerSpec::Toy),
            ..Default::default()
        };
        let c = RunConfig::resolve(Some(&path), &flags, Some("10.0.0.1:7000")).unwrap();
        assert_eq!(c.scorer, ScorerSpec::Toy);
    }

    #[test]
    fn scorer_spec_parsing() {
        assert_eq!("toy".parse::<ScorerSpec>().unwrap(), ScorerSpec::Toy);
        assert_eq!(
            "remote:localhost:9000".parse::<ScorerSpec>().unwrap(),
            ScorerSpec::Remote("localhost:9000".into())
        );
        assert!("remote:localhost".parse::<ScorerSpec>().is_err());
        assert!("gpu".parse::<ScorerSpec>().is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = minimal();
        let mut back = RunConfig::from_json(&c.to_json()).unwrap();
        back.finish().unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn freeze_rules() {
        let mut c = minimal();
        c.freeze = "d".parse().unwrap();
        c.validate().unwrap();
        c.param = ParamMode::Dip;
        assert!(c.validate().is_err());
        c.param = ParamMode::Explicit;
        c.channels = "r,m".parse().unwrap();
        assert!(c.validate().is_err());
    }
}
