//! Versioned binary checkpoints for actors and full SAC agents.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic          8 bytes  "TKRLCKPT"
//! version        u16      FORMAT_VERSION
//! kind           u8       0 = policy only, 1 = policy + training state
//! config_hash    32 bytes SHA-256 of the run configuration
//! config_len     u32, then config_len bytes of UTF-8 configuration text
//! torque_limit   f64
//! actor          network, then u8 has_sde and, if 1, an sde block
//! -- kind 1 only --
//! critic 1, critic 2, target 1, target 2   networks
//! log_alpha f64, alpha_m f64, alpha_v f64, alpha_step u64, updates u64
//! sac_len        u32, then sac_len bytes of JSON-encoded SacConfig
//! ```
//!
//! A network is `u32 layers, u64 adam_step`, then per layer
//! `u32 inputs, u32 outputs, u8 activation` followed by weight (row-major,
//! inputs x outputs), bias, m_weight, m_bias, v_weight, v_bias as f64 arrays.
//! An sde block is `u32 width, u64 step` and then log_std, m, v.
//!
//! Decoding never trusts a length field: every allocation is bounded by the
//! bytes that remain, and trailing bytes are rejected.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::neural::{Activation, Dense, Moments, Network};
use crate::sac::{Actor, SacAgent, SacConfig, SdeParams};

pub const MAGIC: &[u8; 8] = b"TKRLCKPT";
pub const FORMAT_VERSION: u16 = 1;

const MAX_LAYERS: u32 = 64;
const MAX_WIDTH: u32 = 1 << 16;

/// Optimizer and critic state needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub critics: [Network; 2],
    pub targets: [Network; 2],
    pub log_alpha: f64,
    pub alpha_moments: (f64, f64),
    pub alpha_step: u64,
    pub updates: u64,
    pub config: SacConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub config_text: String,
    pub torque_limit: f64,
    pub actor: Actor,
    pub training: Option<TrainingState>,
}

impl Checkpoint {
    pub fn policy(
        actor: Actor,
        torque_limit: f64,
        config_hash: [u8; 32],
        config_text: String,
    ) -> Self {
        Self {
            config_hash,
            config_text,
            torque_limit,
            actor,
            training: None,
        }
    }

    pub fn agent(agent: &SacAgent, config_hash: [u8; 32], config_text: String) -> Self {
        Self {
            config_hash,
            config_text,
            torque_limit: agent.torque_limit(),
            actor: agent.actor.clone(),
            training: Some(TrainingState {
                critics: agent.critics.clone(),
                targets: agent.targets.clone(),
                log_alpha: agent.log_alpha(),
                alpha_moments: agent.alpha_moments(),
                alpha_step: agent.alpha_step(),
                updates: agent.updates(),
                config: agent.config().clone(),
            }),
        }
    }

    /// Rebuild the full agent; fails for policy-only checkpoints.
    pub fn into_agent(self) -> Result<SacAgent> {
        let t = self
            .training
            .ok_or_else(|| Error::Checkpoint("checkpoint holds no training state".into()))?;
        SacAgent::from_parts(
            self.actor,
            t.critics,
            t.targets,
            t.log_alpha,
            t.alpha_moments,
            t.alpha_step,
            self.torque_limit,
            t.config,
            t.updates,
        )
    }

    /// Deterministic torque for `obs`.
    pub fn act(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.torque_limit * self.actor.mode(obs)?)
    }

    pub fn config_hash_hex(&self) -> String {
        hex::encode(self.config_hash)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u16(&mut out, FORMAT_VERSION);
        out.push(u8::from(self.training.is_some()));
        out.extend_from_slice(&self.config_hash);
        put_bytes(&mut out, self.config_text.as_bytes());
        put_f64(&mut out, self.torque_limit);
        write_network(&mut out, &self.actor.net);
        match &self.actor.sde {
            None => out.push(0),
            Some(p) => {
                out.push(1);
                put_u32(&mut out, p.log_std.len() as u32);
                put_u64(&mut out, p.step);
                for xs in [&p.log_std, &p.m, &p.v] {
                    xs.iter().for_each(|&x| put_f64(&mut out, x));
                }
            }
        }
        if let Some(t) = &self.training {
            for net in t.critics.iter().chain(&t.targets) {
                write_network(&mut out, net);
            }
            put_f64(&mut out, t.log_alpha);
            put_f64(&mut out, t.alpha_moments.0);
            put_f64(&mut out, t.alpha_moments.1);
            put_u64(&mut out, t.alpha_step);
            put_u64(&mut out, t.updates);
            let config = serde_json::to_vec(&t.config).expect("SacConfig serializes");
            put_bytes(&mut out, &config);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader(Cursor::new(bytes));
        let mut magic = [0u8; 8];
        r.fill(&mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let kind = r.u8()?;
        if kind > 1 {
            return Err(bad(format!("unknown checkpoint kind {kind}")));
        }
        let mut config_hash = [0u8; 32];
        r.fill(&mut config_hash, "config hash")?;
        let config_text = String::from_utf8(r.bytes("config text")?)
            .map_err(|_| bad("config text is not UTF-8"))?;
        let torque_limit = r.f64()?;
        if !(torque_limit.is_finite() && torque_limit > 0.0) {
            return Err(bad(format!(
                "torque limit must be positive, got {torque_limit}"
            )));
        }
        let net = read_network(&mut r)?;
        let sde = match r.u8()? {
            0 => None,
            1 => {
                let width = r.u32()?;
                if width > MAX_WIDTH {
                    return Err(bad(format!("sde width {width} too large")));
                }
                let step = r.u64()?;
                let w = width as usize;
                Some(SdeParams {
                    log_std: r.f64s(w)?,
                    m: r.f64s(w)?,
                    v: r.f64s(w)?,
                    step,
                })
            }
            other => return Err(bad(format!("invalid sde flag {other}"))),
        };
        let actor = Actor::from_parts(net, sde).map_err(|e| bad(format!("actor: {e}")))?;
        let training = if kind == 1 {
            let critics = [read_network(&mut r)?, read_network(&mut r)?];
            let targets = [read_network(&mut r)?, read_network(&mut r)?];
            let log_alpha = r.f64()?;
            let alpha_moments = (r.f64()?, r.f64()?);
            let alpha_step = r.u64()?;
            let updates = r.u64()?;
            let config: SacConfig = serde_json::from_slice(&r.bytes("sac config")?)
                .map_err(|e| bad(format!("sac config: {e}")))?;
            Some(TrainingState {
                critics,
                targets,
                log_alpha,
                alpha_moments,
                alpha_step,
                updates,
                config,
            })
        } else {
            None
        };
        if r.0.position() as usize != bytes.len() {
            return Err(bad("trailing bytes after checkpoint"));
        }
        let ckpt = Self {
            config_hash,
            config_text,
            torque_limit,
            actor,
            training,
        };
        if let Some(t) = &ckpt.training {
            // validates shapes and the config against the actor
            SacAgent::from_parts(
                ckpt.actor.clone(),
                t.critics.clone(),
                t.targets.clone(),
                t.log_alpha,
                t.alpha_moments,
                t.alpha_step,
                ckpt.torque_limit,
                t.config.clone(),
                t.updates,
            )
            .map_err(|e| bad(format!("training state: {e}")))?;
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.write_u16::<LE>(v).expect("vec write");
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.write_u32::<LE>(v).expect("vec write");
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.write_u64::<LE>(v).expect("vec write");
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.write_f64::<LE>(v).expect("vec write");
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    put_u32(out, bytes.len() as u32);
    out.extend_from_slice(bytes);
}

fn write_network(out: &mut Vec<u8>, net: &Network) {
    put_u32(out, net.layers().len() as u32);
    put_u64(out, net.step());
    for (layer, m) in net.layers().iter().zip(net.moments()) {
        put_u32(out, layer.inputs() as u32);
        put_u32(out, layer.outputs() as u32);
        out.push(layer.activation.code());
        let put_all = |out: &mut Vec<u8>, xs: &mut dyn Iterator<Item = &f64>| {
            xs.for_each(|&x| put_f64(out, x))
        };
        put_all(out, &mut layer.weight.iter());
        put_all(out, &mut layer.bias.iter());
        put_all(out, &mut m.m_weight.iter());
        put_all(out, &mut m.m_bias.iter());
        put_all(out, &mut m.v_weight.iter());
        put_all(out, &mut m.v_bias.iter());
    }
}

fn read_network(r: &mut Reader) -> Result<Network> {
    let count = r.u32()?;
    if count == 0 || count > MAX_LAYERS {
        return Err(bad(format!("invalid layer count {count}")));
    }
    let step = r.u64()?;
    let mut layers = Vec::with_capacity(count as usize);
    let mut moments = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let inputs = r.u32()?;
        let outputs = r.u32()?;
        if inputs == 0 || outputs == 0 || inputs > MAX_WIDTH || outputs > MAX_WIDTH {
            return Err(bad(format!("invalid layer shape {inputs}x{outputs}")));
        }
        let code = r.u8()?;
        let activation =
            Activation::from_code(code).ok_or_else(|| bad(format!("unknown activation {code}")))?;
        let (i, o) = (inputs as usize, outputs as usize);
        let matrix = |r: &mut Reader| -> Result<Array2<f64>> {
            Ok(Array2::from_shape_vec((i, o), r.f64s(i * o)?).expect("length checked"))
        };
        let vector = |r: &mut Reader| -> Result<Array1<f64>> { Ok(Array1::from(r.f64s(o)?)) };
        let weight = matrix(r)?;
        let bias = vector(r)?;
        let m_weight = matrix(r)?;
        let m_bias = vector(r)?;
        let v_weight = matrix(r)?;
        let v_bias = vector(r)?;
        layers.push(Dense {
            weight,
            bias,
            activation,
        });
        moments.push(Moments {
            m_weight,
            m_bias,
            v_weight,
            v_bias,
        });
    }
    Network::from_parts(layers, moments, step).map_err(|e| bad(format!("network: {e}")))
}

struct Reader<'a>(Cursor<&'a [u8]>);

impl Reader<'_> {
    fn remaining(&self) -> usize {
        self.0
            .get_ref()
            .len()
            .saturating_sub(self.0.position() as usize)
    }

    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.0
            .read_exact(buf)
            .map_err(|_| bad(format!("truncated while reading {what}")))
    }

    fn u8(&mut self) -> Result<u8> {
        self.0.read_u8().map_err(|_| bad("truncated"))
    }

    fn u16(&mut self) -> Result<u16> {
        self.0.read_u16::<LE>().map_err(|_| bad("truncated"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.0.read_u32::<LE>().map_err(|_| bad("truncated"))
    }

    fn u64(&mut self) -> Result<u64> {
        self.0.read_u64::<LE>().map_err(|_| bad("truncated"))
    }

    fn f64(&mut self) -> Result<f64> {
        self.0.read_f64::<LE>().map_err(|_| bad("truncated"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n.checked_mul(8).is_none_or(|b| b > self.remaining()) {
            return Err(bad(format!("truncated: {n} floats announced")));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn bytes(&mut self, what: &str) -> Result<Vec<u8>> {
        let n = self.u32()? as usize;
        if n > self.remaining() {
            return Err(bad(format!("truncated while reading {what}")));
        }
        let mut buf = vec![0u8; n];
        self.fill(&mut buf, what)?;
        Ok(buf)
    }
}
