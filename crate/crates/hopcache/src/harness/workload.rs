//! Seeded workload traces: a mix specification deserialized from JSON, three
//! named mixes, and a deterministic generator that turns a spec plus a graph
//! model into a concrete operation sequence.

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphstore::{Direction, Scalar, VertexId};
use crate::queryengine::{RmwOp, UpsertEdge};

use super::synth::GraphModel;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WriteProfile {
    pub upsert: f64,
    pub last_seen: f64,
    pub delete_edges: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WorkloadSpec {
    pub duration_ops: u64,
    /// Fraction of operations that are reads.
    pub read_fraction: f64,
    pub write_profile: WriteProfile,
    /// Zipf-style skew exponent for root popularity; 0 is uniform.
    #[serde(default)]
    pub read_skew: f64,
    pub seed: u64,
}

impl WorkloadSpec {
    /// Named mixes: `r-hat` 99/1, `w-hat` 62/38, `r-check` 94/6. Write
    /// sub-shares are upsert 44.85%, last-seen 43.94%, delete-edges 11.22%.
    pub fn named(mix: &str, duration_ops: u64, seed: u64) -> Result<WorkloadSpec> {
        let read_fraction = match mix {
            "r-hat" => 0.99,
            "w-hat" => 0.62,
            "r-check" => 0.94,
            other => return Err(Error::InvalidSpec(format!("unknown mix {other:?}"))),
        };
        Ok(WorkloadSpec {
            duration_ops,
            read_fraction,
            write_profile: WriteProfile { upsert: 0.4485, last_seen: 0.4394, delete_edges: 0.1122 },
            read_skew: 0.8,
            seed,
        })
    }

    pub fn from_json(text: &str) -> Result<WorkloadSpec> {
        let spec: WorkloadSpec = serde_json::from_str(text)
            .map_err(|e| Error::InvalidSpec(format!("workload spec: {e}")))?;
        if !(0.0..=1.0).contains(&spec.read_fraction) {
            return Err(Error::InvalidSpec("read_fraction outside [0,1]".into()));
        }
        let w = &spec.write_profile;
        if w.upsert < 0.0 || w.last_seen < 0.0 || w.delete_edges < 0.0 {
            return Err(Error::InvalidSpec("negative write share".into()));
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceOp {
    Read(String),
    Write(RmwOp),
}

/// Skewed index draw: weight 1/(rank+1)^skew over `n` candidates.
fn skewed_index(rng: &mut ChaCha8Rng, n: usize, skew: f64) -> usize {
    if n <= 1 || skew <= 0.0 {
        return rng.gen_range(0..n.max(1));
    }
    let weights: Vec<f64> = (0..n).map(|i| 1.0 / ((i + 1) as f64).powf(skew)).collect();
    WeightedIndex::new(weights).unwrap().sample(rng)
}

/// Expands a spec into a concrete trace. Identical spec and model produce an
/// identical trace.
pub fn generate(spec: &WorkloadSpec, model: &GraphModel) -> Result<Vec<TraceOp>> {
    if model.lists.is_empty() || model.items.is_empty() {
        return Err(Error::InvalidSpec("workload needs both list and item vertices".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let w = &spec.write_profile;
    let write_weights =
        WeightedIndex::new([w.upsert, w.last_seen, w.delete_edges]).map_err(|_| {
            Error::InvalidSpec("write profile must have a positive total".into())
        })?;
    let mut trace = Vec::with_capacity(spec.duration_ops as usize);
    for i in 0..spec.duration_ops {
        if rng.gen_bool(spec.read_fraction) {
            trace.push(TraceOp::Read(gen_read(&mut rng, model, spec.read_skew)));
        } else {
            trace.push(TraceOp::Write(gen_write(&mut rng, model, &write_weights, i)));
        }
    }
    Ok(trace)
}

fn pick(rng: &mut ChaCha8Rng, pool: &[VertexId], skew: f64) -> VertexId {
    pool[skewed_index(rng, pool.len(), skew)]
}

fn gen_read(rng: &mut ChaCha8Rng, model: &GraphModel, skew: f64) -> String {
    let final_clause = match rng.gen_range(0..10) {
        0 => ".count()",
        1 => ".valueMap()",
        _ => ".id()",
    };
    let b = rng.gen_bool(0.6);
    let s = rng.gen_range(0..3);
    let k = rng.gen_range(0..5);
    let t = rng.gen_range(0..3);
    match rng.gen_range(0..100) {
        // template-shaped, weighted toward the first templates
        0..=29 => format!(
            "g.V({}).outE(\"includes\").has(\"IsActive\",{b}).inV().has(\"Status\",{s}){final_clause}",
            pick(rng, &model.lists, skew)
        ),
        30..=49 => format!(
            "g.V({}).outE(\"similar\").has(\"Score\",{k}).inV(){final_clause}",
            pick(rng, &model.items, skew)
        ),
        50..=64 => format!(
            "g.V({}).inE(\"includes\").has(\"IsActive\",{b}).outV().hasLabel(\"list\"){final_clause}",
            pick(rng, &model.items, skew)
        ),
        65..=76 => format!(
            "g.V({}).inE(\"similar\").has(\"Score\",{k}).outV().has(\"Status\",{s}){final_clause}",
            pick(rng, &model.items, skew)
        ),
        77..=85 => format!(
            "g.V({}).inE(\"includes\").has(\"IsActive\",true).outV().hasLabel(\"list\").has(\"Tier\",{t}){final_clause}",
            pick(rng, &model.items, skew)
        ),
        86..=94 => format!(
            "g.V({}).inE(\"includes\").outV().hasLabel(\"list\").has(\"Tier\",{t}){final_clause}",
            pick(rng, &model.items, skew)
        ),
        // ad-hoc shapes: fallback scans and id-rewrite candidates
        95..=97 => format!(
            "g.V({}).bothE(\"similar\").inV().has(\"Status\",{s}){final_clause}",
            pick(rng, &model.items, skew)
        ),
        _ => format!(
            "g.V({}).outE(\"includes\").has(\"IsActive\",{b}).inV().has(\"Status\",{s}).hasNot(\"sku\",{}).id()",
            pick(rng, &model.lists, skew),
            100_000 + rng.gen_range(0..2 * model.items.len() as u64)
        ),
    }
}

fn gen_write(
    rng: &mut ChaCha8Rng,
    model: &GraphModel,
    weights: &WeightedIndex<f64>,
    op_index: u64,
) -> RmwOp {
    match weights.sample(rng) {
        0 => {
            let root = pick(rng, &model.lists, 0.0);
            let mut set_props = std::collections::BTreeMap::new();
            if rng.gen_bool(0.5) {
                set_props.insert("Tier".to_string(), Scalar::Int(rng.gen_range(0..3)));
            } else {
                set_props
                    .insert("name".to_string(), Scalar::Str(format!("list-{}", rng.gen::<u16>())));
            }
            let edges = (0..rng.gen_range(1..=3))
                .map(|_| UpsertEdge {
                    to: pick(rng, &model.items, 0.0),
                    label: "includes".to_string(),
                    props: [("IsActive".to_string(), Scalar::Bool(rng.gen_bool(0.6)))]
                        .into_iter()
                        .collect(),
                })
                .collect();
            RmwOp::UpsertSubGraph { root, set_props, edges }
        }
        1 => {
            let vertex = if rng.gen_bool(0.5) {
                pick(rng, &model.items, 0.0)
            } else {
                pick(rng, &model.lists, 0.0)
            };
            RmwOp::UpdateLastSeen { vertex, value: op_index as i64 }
        }
        _ => RmwOp::DeleteEdges {
            vertex: pick(rng, &model.items, 0.0),
            direction: Direction::In,
            label: "includes".to_string(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> GraphModel {
        GraphModel {
            lists: (0..20).map(VertexId).collect(),
            items: (20..200).map(VertexId).collect(),
        }
    }

    #[test]
    fn trace_is_deterministic_and_respects_mix() {
        let spec = WorkloadSpec::named("w-hat", 4_000, 9).unwrap();
        let a = generate(&spec, &model()).unwrap();
        let b = generate(&spec, &model()).unwrap();
        assert_eq!(a, b);
        let reads = a.iter().filter(|op| matches!(op, TraceOp::Read(_))).count();
        let frac = reads as f64 / a.len() as f64;
        assert!((frac - 0.62).abs() < 0.03, "read fraction {frac}");
        // write sub-shares within tolerance of 44.85 / 43.94 / 11.22
        let mut counts = [0u64; 3];
        for op in &a {
            if let TraceOp::Write(w) = op {
                match w {
                    RmwOp::UpsertSubGraph { .. } => counts[0] += 1,
                    RmwOp::UpdateLastSeen { .. } => counts[1] += 1,
                    RmwOp::DeleteEdges { .. } => counts[2] += 1,
                }
            }
        }
        let total: u64 = counts.iter().sum();
        for (got, want) in counts.iter().zip([0.4485, 0.4394, 0.1122]) {
            assert!((*got as f64 / total as f64 - want).abs() < 0.05);
        }
    }

    #[test]
    fn named_mixes_and_json_round_trip() {
        assert_eq!(WorkloadSpec::named("r-hat", 10, 1).unwrap().read_fraction, 0.99);
        assert_eq!(WorkloadSpec::named("r-check", 10, 1).unwrap().read_fraction, 0.94);
        assert!(WorkloadSpec::named("nope", 10, 1).is_err());
        let spec = WorkloadSpec::named("r-hat", 500, 3).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(WorkloadSpec::from_json(&text).unwrap(), spec);
        assert!(WorkloadSpec::from_json(r#"{"duration_ops":1,"read_fraction":1.5,"write_profile":{"upsert":1,"last_seen":0,"delete_edges":0},"seed":0}"#).is_err());
    }

    #[test]
    fn generated_reads_parse() {
        let spec = WorkloadSpec::named("r-hat", 500, 5).unwrap();
        for op in generate(&spec, &model()).unwrap() {
            if let TraceOp::Read(text) = op {
                crate::queryengine::parse(&text).unwrap();
            }
        }
    }
}
