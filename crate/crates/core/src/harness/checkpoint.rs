//! Network checkpoints.
//!
//! Layout: a UTF-8 header of `key=value` lines, the first being the magic
//! line and the last being `end`, each terminated by `\n`. The bytes after
//! `end\n` are the policy's flat parameters followed by the critic's, each
//! value an IEEE-754 binary64 in little-endian order. A network's flat order
//! is, layer by layer, the input-major weight matrix (`w[i·outputs + j]`)
//! then the bias vector.
//!
//! Header keys: `algo`, `state`, `seed`, `config_hash`, `obs_scale`,
//! `policy_dims` and `critic_dims` (comma-separated layer widths, or `none`),
//! and `param_count` (total values that follow).

use std::collections::BTreeMap;
use std::path::Path;

use crate::agents::Algo;
use crate::nn::MlpParams;
use crate::sim::Representation;

use super::HarnessError;

pub const CHECKPOINT_MAGIC: &str = "queuectl-checkpoint v1";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub algo: Algo,
    pub representation: Representation,
    pub seed: u64,
    pub config_hash: String,
    pub obs_scale: f64,
    pub policy: MlpParams,
    pub critic: Option<MlpParams>,
}

fn dims_text(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let critic_dims = self
            .critic
            .as_ref()
            .map_or_else(|| "none".to_string(), |c| dims_text(&c.layer_dims()));
        let mut values = self.policy.flat();
        if let Some(c) = &self.critic {
            values.extend(c.flat());
        }
        let header = format!(
            "{CHECKPOINT_MAGIC}\nalgo={}\nstate={}\nseed={}\nconfig_hash={}\nobs_scale={}\npolicy_dims={}\ncritic_dims={}\nparam_count={}\nend\n",
            self.algo,
            self.representation.tag(),
            self.seed,
            self.config_hash,
            self.obs_scale,
            dims_text(&self.policy.layer_dims()),
            critic_dims,
            values.len(),
        );
        let mut out = header.into_bytes();
        out.reserve(values.len() * 8);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, HarnessError> {
        let bad = |detail: String| HarnessError::Checkpoint {
            path: path.to_path_buf(),
            detail,
        };
        let marker = b"\nend\n";
        let split = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| bad("header has no `end` line".into()))?;
        let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not UTF-8".into()))?;
        let body = &bytes[split + marker.len()..];

        let mut lines = header.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad(format!("first line is not `{CHECKPOINT_MAGIC}`")));
        }
        let mut fields = BTreeMap::new();
        for line in lines {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed header line `{line}`")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| fields.get(k).ok_or_else(|| bad(format!("missing `{k}`")));
        let parse_dims = |k: &str, v: &str| -> Result<Vec<usize>, HarnessError> {
            v.split(',')
                .map(|d| d.trim().parse::<usize>().map_err(|_| bad(format!("bad `{k}`"))))
                .collect()
        };

        let algo = Algo::from_tag(get("algo")?).ok_or_else(|| bad("unknown algo".into()))?;
        let representation =
            Representation::from_tag(get("state")?).ok_or_else(|| bad("unknown state".into()))?;
        let seed = get("seed")?.parse().map_err(|_| bad("bad `seed`".into()))?;
        let obs_scale = get("obs_scale")?
            .parse()
            .map_err(|_| bad("bad `obs_scale`".into()))?;
        let count: usize = get("param_count")?
            .parse()
            .map_err(|_| bad("bad `param_count`".into()))?;
        let policy_dims = parse_dims("policy_dims", get("policy_dims")?)?;
        let critic_dims = match get("critic_dims")?.as_str() {
            "none" => None,
            v => Some(parse_dims("critic_dims", v)?),
        };

        if body.len() != count * 8 {
            return Err(bad(format!(
                "expected {} parameter bytes, found {}",
                count * 8,
                body.len()
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let policy_len = MlpParams::zeros(&policy_dims).param_count();
        if policy_len > values.len() {
            return Err(bad("param_count smaller than the policy".into()));
        }
        let policy = MlpParams::from_flat(&policy_dims, &values[..policy_len])
            .map_err(|e| bad(e.to_string()))?;
        let rest = &values[policy_len..];
        let critic = match critic_dims {
            None if rest.is_empty() => None,
            None => return Err(bad("trailing values without a critic".into())),
            Some(d) => Some(MlpParams::from_flat(&d, rest).map_err(|e| bad(e.to_string()))?),
        };
        Ok(Self {
            algo,
            representation,
            seed,
            config_hash: get("config_hash")?.clone(),
            obs_scale,
            policy,
            critic,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
