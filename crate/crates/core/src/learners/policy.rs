use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::approx::{Mixer, MixerSpec, Mlp, MlpSpec, MonotonicMixer, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::mmdp::{argmax_masked, one_hot, EnvState, JointAction, MmdpSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algo {
    TabularVi,
    TabularQ,
    Vdn,
    Qmix,
}

impl Algo {
    pub fn is_tabular(self) -> bool {
        matches!(self, Algo::TabularVi | Algo::TabularQ)
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::TabularVi => "tabular-vi",
            Algo::TabularQ => "tabular-q",
            Algo::Vdn => "vdn",
            Algo::Qmix => "qmix",
        })
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tabular-vi" => Ok(Algo::TabularVi),
            "tabular-q" => Ok(Algo::TabularQ),
            "vdn" => Ok(Algo::Vdn),
            "qmix" => Ok(Algo::Qmix),
            other => Err(Error::Config(format!("unknown algo {other:?}"))),
        }
    }
}

/// Table key for an observation: its exact byte encoding.
pub fn obs_key(obs: &[f64]) -> Vec<u8> {
    obs.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Q table of one agent, keyed by observation. Unseen observations read as zeros.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QTable {
    pub n_actions: usize,
    pub rows: HashMap<Vec<u8>, Vec<f64>>,
}

impl QTable {
    pub fn new(n_actions: usize) -> Self {
        Self { n_actions, rows: HashMap::new() }
    }

    pub fn row(&self, obs: &[f64]) -> Vec<f64> {
        self.rows.get(&obs_key(obs)).cloned().unwrap_or_else(|| vec![0.0; self.n_actions])
    }

    pub fn set_row(&mut self, obs: &[f64], values: Vec<f64>) {
        self.rows.insert(obs_key(obs), values);
    }
}

/// Parameter-shared agent network plus the mixer that combines agents.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkQ {
    pub agent: Mlp,
    pub mixer: Mixer,
    pub params: ParamStore,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub n_agents: usize,
}

impl NetworkQ {
    pub fn input_dim(obs_dim: usize, n_actions: usize, n_agents: usize) -> usize {
        obs_dim + n_actions + n_agents
    }

    /// Agent network input: observation, one-hot previous own action (all
    /// zeros at the first step) and one-hot agent index.
    pub fn write_input(&self, out: &mut Vec<f64>, agent: usize, obs: &[f64], prev: Option<usize>) {
        out.extend_from_slice(obs);
        let start = out.len();
        out.resize(start + self.n_actions, 0.0);
        if let Some(p) = prev {
            out[start + p] = 1.0;
        }
        out.extend(one_hot(agent, self.n_agents));
    }

    pub fn q_rows(&self, params: &ParamStore, observations: &[Vec<f64>], prevs: &[Option<usize>]) -> Result<Vec<Vec<f64>>> {
        let n = observations.len();
        let mut input = Vec::with_capacity(n * self.agent.spec.input_dim());
        for (i, (obs, prev)) in observations.iter().zip(prevs).enumerate() {
            self.write_input(&mut input, i, obs, *prev);
        }
        let out = self.agent.forward_plain(params, &Tensor::matrix(n, self.agent.spec.input_dim(), input)?)?;
        Ok((0..n).map(|r| out.row(r).to_vec()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QRepr {
    Tabular(Vec<QTable>),
    Network(NetworkQ),
}

/// Per-agent Q functions with greedy action selection. Base team policies
/// and attacker policies are both represented by this type.
#[derive(Debug, Clone, PartialEq)]
pub struct QTeamPolicy {
    pub algo: Algo,
    pub n_agents: usize,
    pub n_actions: Vec<usize>,
    pub repr: QRepr,
    /// Free-form provenance written into the saved header.
    pub meta: BTreeMap<String, String>,
}

impl QTeamPolicy {
    pub fn tabular(algo: Algo, tables: Vec<QTable>) -> Self {
        let n_actions = tables.iter().map(|t| t.n_actions).collect();
        Self { algo, n_agents: tables.len(), n_actions, repr: QRepr::Tabular(tables), meta: BTreeMap::new() }
    }

    pub fn network(algo: Algo, net: NetworkQ) -> Self {
        Self {
            algo,
            n_agents: net.n_agents,
            n_actions: vec![net.n_actions; net.n_agents],
            repr: QRepr::Network(net),
            meta: BTreeMap::new(),
        }
    }

    /// Fresh network policy for `spec` with an MLP `[in, hidden.., n_actions]` per agent.
    pub fn new_network(
        algo: Algo,
        spec: &MmdpSpec,
        hidden: &[usize],
        mixer: Option<MixerSpec>,
        rng: &mut crate::seeding::Rng,
    ) -> Result<Self> {
        if !spec.is_homogeneous() {
            return Err(Error::ConfigMismatch("network policies need homogeneous agents".into()));
        }
        let (obs_dim, n_actions, n_agents) = (spec.obs_dims[0], spec.action_counts[0], spec.n_agents);
        let mut widths = vec![NetworkQ::input_dim(obs_dim, n_actions, n_agents)];
        widths.extend_from_slice(hidden);
        widths.push(n_actions);
        let mut params = ParamStore::new();
        let agent = Mlp::init(MlpSpec::new(widths)?, "agent", &mut params, rng)?;
        let mixer = match mixer {
            Some(m) => Mixer::Monotonic(MonotonicMixer::init(m, "mixer", &mut params, rng)?),
            None => Mixer::Sum { n_inputs: n_agents },
        };
        Ok(Self::network(algo, NetworkQ { agent, mixer, params, obs_dim, n_actions, n_agents }))
    }

    pub fn q_values(&self, agent: usize, obs: &[f64], prev: Option<usize>) -> Result<Vec<f64>> {
        match &self.repr {
            QRepr::Tabular(tables) => Ok(tables[agent].row(obs)),
            QRepr::Network(net) => {
                let mut input = Vec::with_capacity(net.agent.spec.input_dim());
                net.write_input(&mut input, agent, obs, prev);
                let out = net.agent.forward_plain(&net.params, &Tensor::matrix(1, input.len(), input)?)?;
                Ok(out.into_data())
            }
        }
    }

    /// Q rows of every agent in one batched pass.
    pub fn q_values_all(&self, observations: &[Vec<f64>], prevs: &[Option<usize>]) -> Result<Vec<Vec<f64>>> {
        if observations.len() != self.n_agents || prevs.len() != self.n_agents {
            return Err(Error::WrongArity { expected: self.n_agents, got: observations.len() });
        }
        match &self.repr {
            QRepr::Tabular(tables) => Ok(tables.iter().zip(observations).map(|(t, o)| t.row(o)).collect()),
            QRepr::Network(net) => net.q_rows(&net.params, observations, prevs),
        }
    }

    /// Legal argmax of the agent's Q row, lowest index on ties.
    pub fn greedy_action(&self, agent: usize, obs: &[f64], mask: &[bool], prev: Option<usize>) -> Result<usize> {
        let q = self.q_values(agent, obs, prev)?;
        argmax_masked(&q, mask).ok_or(Error::NoLegalAction(agent))
    }

    /// Greedy joint action for a state plus the Q rows it was derived from.
    pub fn act_greedy(&self, view: &EnvState, prevs: &[Option<usize>]) -> Result<(JointAction, Vec<Vec<f64>>)> {
        let rows = self.q_values_all(&view.observations, prevs)?;
        let actions = rows
            .iter()
            .zip(&view.action_masks)
            .enumerate()
            .map(|(i, (q, m))| argmax_masked(q, m).ok_or(Error::NoLegalAction(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok((JointAction::new(actions), rows))
    }

    fn to_store(&self) -> Result<ParamStore> {
        match &self.repr {
            QRepr::Network(net) => Ok(net.params.clone()),
            QRepr::Tabular(tables) => {
                let mut store = ParamStore::new();
                for (i, t) in tables.iter().enumerate() {
                    let mut rows: Vec<(&Vec<u8>, &Vec<f64>)> = t.rows.iter().collect();
                    rows.sort_by(|a, b| a.0.cmp(b.0));
                    let width = rows.first().map_or(0, |(k, _)| k.len() / 8);
                    let keys: Vec<f64> = rows
                        .iter()
                        .flat_map(|(k, _)| k.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                        .collect();
                    let values: Vec<f64> = rows.iter().flat_map(|(_, v)| v.iter().copied()).collect();
                    store.add(format!("agent{i}.keys"), Tensor::new(vec![rows.len(), width], keys)?)?;
                    store.add(format!("agent{i}.q"), Tensor::new(vec![rows.len(), t.n_actions], values)?)?;
                }
                Ok(store)
            }
        }
    }

    /// SHA-256 over the parameter manifest and payload.
    pub fn fingerprint(&self) -> Result<String> {
        let store = self.to_store()?;
        let mut h = Sha256::new();
        h.update(self.algo.to_string());
        h.update(store.manifest());
        h.update(store.payload());
        Ok(hex(&h.finalize()))
    }

    fn header(&self) -> String {
        let mut lines = vec![
            format!("mode = {}", if self.algo.is_tabular() { "tabular" } else { "network" }),
            format!("algo = {}", self.algo),
            format!("n_agents = {}", self.n_agents),
            format!("n_actions = {}", join(&self.n_actions)),
        ];
        if let QRepr::Network(net) = &self.repr {
            lines.push(format!("obs_dim = {}", net.obs_dim));
            lines.push(format!("agent_widths = {}", join(&net.agent.spec.widths)));
            match &net.mixer {
                Mixer::Sum { .. } => lines.push("mixer = sum".into()),
                Mixer::Monotonic(m) => lines.push(format!(
                    "mixer = monotonic {} {} {} {}",
                    m.spec.n_inputs, m.spec.state_dim, m.spec.embed_dim, m.spec.hyper_hidden
                )),
            }
        }
        for (k, v) in &self.meta {
            lines.push(format!("meta.{k} = {v}"));
        }
        lines.join("\n") + "\n"
    }

    /// Writes `<base>.policy` (header), `<base>.manifest` and `<base>.bin`.
    pub fn save(&self, base: &Path) -> Result<()> {
        if let Some(dir) = base.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(base.with_extension("policy"), self.header())?;
        self.to_store()?.save(base)
    }

    pub fn load(base: &Path) -> Result<Self> {
        let header = fs::read_to_string(base.with_extension("policy"))?;
        let store = ParamStore::load(base)?;
        let mut fields = BTreeMap::new();
        let mut meta = BTreeMap::new();
        for line in header.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(" = ").ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
            match k.strip_prefix("meta.") {
                Some(m) => meta.insert(m.to_string(), v.to_string()),
                None => fields.insert(k.to_string(), v.to_string()),
            };
        }
        let get = |k: &str| fields.get(k).ok_or_else(|| Error::Format(format!("header misses {k}")));
        let algo: Algo = get("algo")?.parse()?;
        let n_agents: usize = parse_num(get("n_agents")?)?;
        let n_actions = parse_list(get("n_actions")?)?;
        let mut policy = if algo.is_tabular() {
            let mut tables = Vec::new();
            for i in 0..n_agents {
                let missing = || Error::Format(format!("missing table for agent {i}"));
                let keys = store.get(store.id(&format!("agent{i}.keys")).ok_or_else(missing)?);
                let q = store.get(store.id(&format!("agent{i}.q")).ok_or_else(missing)?);
                let mut table = QTable::new(n_actions[i]);
                for r in 0..q.rows() {
                    let key = if keys.cols() == 0 { &[][..] } else { keys.row(r) };
                    table.set_row(key, q.row(r).to_vec());
                }
                tables.push(table);
            }
            QTeamPolicy::tabular(algo, tables)
        } else {
            let obs_dim = parse_num(get("obs_dim")?)?;
            let widths = parse_list(get("agent_widths")?)?;
            let agent = Mlp::bind(MlpSpec::new(widths)?, "agent", &store)?;
            let mixer_line: Vec<&str> = get("mixer")?.split_whitespace().collect();
            let mixer = match mixer_line[..] {
                ["sum"] => Mixer::Sum { n_inputs: n_agents },
                ["monotonic", n, s, e, h] => {
                    let spec = MixerSpec {
                        n_inputs: parse_num(n)?,
                        state_dim: parse_num(s)?,
                        embed_dim: parse_num(e)?,
                        hyper_hidden: parse_num(h)?,
                    };
                    Mixer::Monotonic(MonotonicMixer::bind(spec, "mixer", &store)?)
                }
                _ => return Err(Error::Format(format!("bad mixer line {mixer_line:?}"))),
            };
            QTeamPolicy::network(
                algo,
                NetworkQ { agent, mixer, params: store, obs_dim, n_actions: n_actions[0], n_agents },
            )
        };
        policy.meta = meta;
        Ok(policy)
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse_num(s: &str) -> Result<usize> {
    s.trim().parse().map_err(|e| Error::Format(format!("bad number {s:?}: {e}")))
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',').map(parse_num).collect()
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from;

    fn table_policy() -> QTeamPolicy {
        let mut t = QTable::new(3);
        t.set_row(&[0.0], vec![1.0, 3.0, 2.0]);
        QTeamPolicy::tabular(Algo::TabularQ, vec![t])
    }

    #[test]
    fn greedy_respects_mask_and_ties() {
        let p = table_policy();
        assert_eq!(p.greedy_action(0, &[0.0], &[true; 3], None).unwrap(), 1);
        assert_eq!(p.greedy_action(0, &[0.0], &[true, false, true], None).unwrap(), 2);
        assert_eq!(p.greedy_action(0, &[5.0], &[true; 3], None).unwrap(), 0, "unseen row is all zeros");
        assert_eq!(p.greedy_action(0, &[0.0], &[false; 3], None).unwrap_err(), Error::NoLegalAction(0));
    }

    #[test]
    fn tabular_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = table_policy();
        p.meta.insert("seed".into(), "4".into());
        let base = dir.path().join("tab");
        p.save(&base).unwrap();
        let back = QTeamPolicy::load(&base).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.fingerprint().unwrap(), p.fingerprint().unwrap());
    }

    #[test]
    fn network_save_load_round_trip() {
        let spec = MmdpSpec {
            n_agents: 2,
            action_counts: vec![5, 5],
            obs_dims: vec![4, 4],
            state_dim: 6,
            horizon: 10,
            discount: 0.99,
            initial_dist: String::new(),
        };
        let mixer = MixerSpec { n_inputs: 2, state_dim: 6, embed_dim: 8, hyper_hidden: 8 };
        let p = QTeamPolicy::new_network(Algo::Qmix, &spec, &[16], Some(mixer), &mut rng_from(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("net");
        p.save(&base).unwrap();
        let back = QTeamPolicy::load(&base).unwrap();
        assert_eq!(back, p);
        let obs = vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.0; 4]];
        let prevs = [Some(2), None];
        assert_eq!(back.q_values_all(&obs, &prevs).unwrap(), p.q_values_all(&obs, &prevs).unwrap());
        assert_eq!(p.q_values(1, &obs[1], None).unwrap(), p.q_values_all(&obs, &prevs).unwrap()[1]);
    }
}
