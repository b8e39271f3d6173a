use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::dip::{build_unet, Builder, DipConfig, DIP_CHANNELS};
use super::SdsError;
use crate::gradtape::{Graph, Tensor};
use crate::render::TextureSet;

pub const DEFAULT_ROUGHNESS: f32 = 0.6;
pub const DEFAULT_METALNESS: f32 = 0.0;
/// Largest tangent-plane offset of a decoded normal.
pub const NORMAL_TILT: f32 = 1.0;
const DISABLED_DIFFUSE: f32 = 0.5;
const EXPLICIT_INIT_STD: f32 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Diffuse,
    Roughness,
    Metalness,
    Normal,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::Diffuse,
        Channel::Roughness,
        Channel::Metalness,
        Channel::Normal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Diffuse => "diffuse",
            Channel::Roughness => "roughness",
            Channel::Metalness => "metalness",
            Channel::Normal => "normal",
        }
    }

    /// Pre-activation width.
    fn raw_channels(self) -> usize {
        match self {
            Channel::Diffuse => 3,
            Channel::Normal => 2,
            _ => 1,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Subset of [`Channel`]s, written as `d,r,m,n`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ChannelSet(u8);

impl ChannelSet {
    pub const ALL: ChannelSet = ChannelSet(0b1111);
    pub const NONE: ChannelSet = ChannelSet(0);

    pub fn only(c: Channel) -> Self {
        ChannelSet(1 << c.index())
    }

    pub fn contains(self, c: Channel) -> bool {
        self.0 & (1 << c.index()) != 0
    }

    pub fn with(self, c: Channel) -> Self {
        ChannelSet(self.0 | (1 << c.index()))
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Channel> {
        Channel::ALL.into_iter().filter(move |c| self.contains(*c))
    }
}

impl FromStr for ChannelSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut set = ChannelSet::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let c = match part {
                "d" | "diffuse" => Channel::Diffuse,
                "r" | "roughness" => Channel::Roughness,
                "m" | "metalness" => Channel::Metalness,
                "n" | "normal" => Channel::Normal,
                other => return Err(format!("unknown channel `{other}` (expected d, r, m or n)")),
            };
            set = set.with(c);
        }
        Ok(set)
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let letters: Vec<&str> = self.iter().map(|c| &c.name()[..1]).collect();
        write!(f, "{}", letters.join(","))
    }
}

impl Serialize for ChannelSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ChannelSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamMode {
    Explicit,
    Dip,
}

impl FromStr for ParamMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "explicit" => Ok(ParamMode::Explicit),
            "dip" => Ok(ParamMode::Dip),
            o => Err(format!("unknown parameterization `{o}` (expected explicit or dip)")),
        }
    }
}

/// Trainable texture parameters, the graph mapping them to a
/// [`TextureSet`], and optimizer moments.
#[derive(Clone, Debug)]
pub struct ParamState {
    mode: ParamMode,
    resolution: usize,
    enabled: ChannelSet,
    frozen: ChannelSet,
    params: BTreeMap<String, Tensor>,
    graph: Graph,
    pub adam: AdamState,
}

fn activation(
    graph: &mut Graph,
    c: Channel,
    raw: crate::gradtape::NodeId,
    resolution: usize,
) -> crate::gradtape::NodeId {
    match c {
        Channel::Normal => {
            let t = graph.tanh(raw);
            let t = graph.scale(t, NORMAL_TILT);
            let one = graph.constant(Tensor::full(vec![resolution, resolution, 1], 1.0));
            let v = graph.concat(&[t, one]);
            graph.normalize3(v)
        }
        _ => graph.sigmoid(raw),
    }
}

impl ParamState {
    /// Raw maps drawn from `N(0, 0.1^2)`.
    pub fn explicit(resolution: usize, enabled: ChannelSet, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0f32, EXPLICIT_INIT_STD).expect("positive std");
        let mut graph = Graph::new();
        let mut params = BTreeMap::new();
        let mut outs = Vec::new();
        for c in enabled.iter() {
            let shape = vec![resolution, resolution, c.raw_channels()];
            params.insert(
                c.name().to_string(),
                Tensor::from_fn(shape, |_| dist.sample(&mut rng)).with_grad(),
            );
            let raw = graph.input(c.name());
            outs.push(activation(&mut graph, c, raw, resolution));
        }
        graph.set_outputs(&outs);
        Self {
            mode: ParamMode::Explicit,
            resolution,
            enabled,
            frozen: ChannelSet::NONE,
            params,
            graph,
            adam: AdamState::new(AdamConfig::default()),
        }
    }

    /// U-Net over seeded noise with one 1x1 head per enabled channel.
    pub fn dip(resolution: usize, enabled: ChannelSet, cfg: &DipConfig, seed: u64) -> Result<Self, SdsError> {
        DipConfig::check_resolution(resolution).map_err(SdsError::Config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut graph = Graph::new();
        let mut params = BTreeMap::new();
        let mut b = Builder {
            graph: &mut graph,
            params: &mut params,
            rng: &mut rng,
        };
        let features = build_unet(&mut b, resolution, cfg);
        let mut outs = Vec::new();
        for c in enabled.iter() {
            let raw = b.conv(
                &format!("head.{}", c.name()),
                features,
                1,
                DIP_CHANNELS[0],
                c.raw_channels(),
                0.5,
            );
            outs.push(activation(b.graph, c, raw, resolution));
        }
        graph.set_outputs(&outs);
        Ok(Self {
            mode: ParamMode::Dip,
            resolution,
            enabled,
            frozen: ChannelSet::NONE,
            params,
            graph,
            adam: AdamState::new(AdamConfig::default()),
        })
    }

    /// Frozen channels receive no gradient and no update. Only explicit maps
    /// can be frozen, since DIP channels share the network body.
    pub fn with_frozen(mut self, frozen: ChannelSet) -> Result<Self, SdsError> {
        if frozen.is_empty() {
            return Ok(self);
        }
        if self.mode == ParamMode::Dip {
            return Err(SdsError::Config(
                "freezing channels requires the explicit parameterization".into(),
            ));
        }
        for c in frozen.iter() {
            if let Some(p) = self.params.get_mut(c.name()) {
                p.set_requires_grad(false);
            }
        }
        self.frozen = frozen;
        Ok(self)
    }

    /// Replaces the raw diffuse map so that it decodes to `image`
    /// (`[R, R, 3]` linear, clamped away from 0 and 1).
    pub fn set_diffuse(&mut self, image: &Tensor) -> Result<(), SdsError> {
        if self.mode != ParamMode::Explicit || !self.enabled.contains(Channel::Diffuse) {
            return Err(SdsError::Config(
                "diffuse initialization needs an explicit diffuse map".into(),
            ));
        }
        let p = self.params.get_mut("diffuse").expect("enabled");
        p.expect_same_shape(image)?;
        for (r, x) in p.data_mut().iter_mut().zip(image.data()) {
            let x = x.clamp(1e-3, 1.0 - 1e-3);
            *r = (x / (1.0 - x)).ln();
        }
        Ok(())
    }

    pub fn mode(&self) -> ParamMode {
        self.mode
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn enabled(&self) -> ChannelSet {
        self.enabled
    }

    pub fn frozen(&self) -> ChannelSet {
        self.frozen
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.params
    }

    /// Decoded maps; disabled channels take fixed defaults.
    pub fn textures(&mut self) -> Result<TextureSet, SdsError> {
        let outs = self.graph.forward(&self.params)?;
        let r = self.resolution;
        let mut tex = TextureSet::constant(r, [DISABLED_DIFFUSE; 3], DEFAULT_ROUGHNESS, DEFAULT_METALNESS);
        for (c, t) in self.enabled.iter().zip(outs) {
            match c {
                Channel::Diffuse => tex.diffuse = t,
                Channel::Roughness => tex.roughness = t,
                Channel::Metalness => tex.metalness = t,
                Channel::Normal => tex.normal = t,
            }
        }
        Ok(tex)
    }

    /// Gradients of the trainable tensors given gradients of the last
    /// [`ParamState::textures`] output.
    pub fn backward(&self, grads: &TextureSet) -> Result<BTreeMap<String, Tensor>, SdsError> {
        let maps = grads.maps();
        let out: Vec<Tensor> = self.enabled.iter().map(|c| maps[c.index()].clone()).collect();
        Ok(self.graph.backward_multi(&out)?)
    }

    /// One Adam step on every unfrozen tensor.
    pub fn apply(&mut self, grads: &BTreeMap<String, Tensor>, lr: f32) -> Result<(), SdsError> {
        let frozen = self.frozen;
        let live: BTreeMap<String, Tensor> = grads
            .iter()
            .filter(|(k, _)| !frozen.iter().any(|c| c.name() == k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        self.adam.step(&mut self.params, &live, lr)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explicit_zero_raw_decodes_to_midpoint_and_flat_normal() {
        let mut p = ParamState::explicit(4, ChannelSet::ALL, 0);
        for t in p.params_mut().values_mut() {
            t.data_mut().fill(0.0);
        }
        let tex = p.textures().unwrap();
        assert!(tex.diffuse.data().iter().all(|v| *v == 0.5));
        assert!(tex.normal.data().chunks(3).all(|n| n == [0.0, 0.0, 1.0]));
    }

    #[test]
    fn disabled_channels_take_defaults() {
        let mut p = ParamState::explicit(4, ChannelSet::only(Channel::Diffuse), 0);
        let tex = p.textures().unwrap();
        assert!(tex.roughness.data().iter().all(|v| *v == DEFAULT_ROUGHNESS));
        assert!(tex.metalness.data().iter().all(|v| *v == DEFAULT_METALNESS));
        tex.validate().unwrap();
    }

    #[test]
    fn dip_with_zero_heads_is_constant() {
        let mut p = ParamState::dip(16, ChannelSet::ALL, &DipConfig::default(), 3).unwrap();
        for (k, t) in p.params_mut().iter_mut() {
            if k.starts_with("head.") {
                t.data_mut().fill(0.0);
            }
        }
        let tex = p.textures().unwrap();
        assert!(tex.diffuse.data().iter().all(|v| *v == 0.5));
        assert!(ParamState::dip(24, ChannelSet::ALL, &DipConfig::default(), 3).is_err());
    }

    #[test]
    fn dip_rejects_freezing() {
        let p = ParamState::dip(16, ChannelSet::ALL, &DipConfig::default(), 3).unwrap();
        assert!(p.with_frozen(ChannelSet::only(Channel::Diffuse)).is_err());
    }

    #[test]
    fn channel_set_parsing() {
        let s: ChannelSet = "d,m".parse().unwrap();
        assert!(s.contains(Channel::Diffuse) && s.contains(Channel::Metalness) && !s.contains(Channel::Normal));
        assert_eq!(s.to_string(), "d,m");
        assert!("x".parse::<ChannelSet>().is_err());
        assert_eq!("".parse::<ChannelSet>().unwrap(), ChannelSet::NONE);
    }

    #[test]
    fn set_diffuse_roundtrip() {
        let mut p = ParamState::explicit(4, ChannelSet::ALL, 0);
        let img = Tensor::from_fn(vec![4, 4, 3], |i| 0.1 + 0.8 * (i as f32 / 48.0));
        p.set_diffuse(&img).unwrap();
        let tex = p.textures().unwrap();
        assert!(tex.diffuse.rel_err(&img).unwrap() < 1e-5);
    }
}
