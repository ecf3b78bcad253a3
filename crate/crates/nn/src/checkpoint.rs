//! Versioned little-endian container for a graph, its optimizer state and
//! the run seed.
//!
//! Layout:
//! ```text
//! magic "QMAPCKPT" | u32 version | u32 len + topology JSON | u64 seed | u8 frozen
//! u32 tensor count | tensors...
//! u8 has_adam | [u64 step | u32 count | tensors (m) | u32 count | tensors (v)]
//! tensor := u32 name len | name | u32 rank | u64 dims[rank] | f64 data[prod(dims)]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::adam::AdamState;
use crate::error::{NnError, Result};
use crate::graph::{ComputeGraph, Param, RunningStats, Topology};

const MAGIC: &[u8; 8] = b"QMAPCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub graph: ComputeGraph,
    pub adam: Option<AdamState>,
    pub seed: u64,
}

struct NamedTensor {
    name: String,
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_moments(r: &mut impl Read) -> Result<Vec<Vec<f64>>> {
    let n = read_u32(r)? as usize;
    (0..n).map(|_| read_tensor(r).map(|t| t.data)).collect()
}

fn write_tensor(w: &mut impl Write, name: &str, dims: &[usize], data: &[f64]) -> Result<()> {
    write_u32(w, name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    write_u32(w, dims.len() as u32)?;
    for &d in dims {
        write_u64(w, d as u64)?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor(r: &mut impl Read) -> Result<NamedTensor> {
    let name_len = read_u32(r)? as usize;
    if name_len > 4096 {
        return Err(NnError::Format(format!("implausible tensor name length {name_len}")));
    }
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|e| NnError::Format(e.to_string()))?;
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(NnError::Format(format!("tensor {name} has rank {rank}")));
    }
    let dims = (0..rank)
        .map(|_| read_u64(r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let len: usize = dims.iter().product();
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(NamedTensor { name, dims, data })
}

impl Checkpoint {
    pub fn new(graph: ComputeGraph, adam: Option<AdamState>, seed: u64) -> Self {
        Self { graph, adam, seed }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        write_u32(w, VERSION)?;
        let topo = serde_json::to_string(self.graph.topology()).map_err(|e| NnError::Format(e.to_string()))?;
        write_u32(w, topo.len() as u32)?;
        w.write_all(topo.as_bytes())?;
        write_u64(w, self.seed)?;
        w.write_all(&[u8::from(self.graph.is_frozen())])?;

        let mut tensors = Vec::new();
        for (i, (node, ps)) in self.graph.topology().nodes.iter().zip(self.graph.params()).enumerate() {
            for (k, p) in ps.iter().enumerate() {
                tensors.push((format!("{i}.{}.p{k}", node.name), p.shape.clone(), p.value.as_slice()));
            }
            if let Some((mean, var)) = self.graph.running_stats(i) {
                tensors.push((format!("{i}.{}.running_mean", node.name), vec![mean.len()], mean));
                tensors.push((format!("{i}.{}.running_var", node.name), vec![var.len()], var));
            }
        }
        write_u32(w, tensors.len() as u32)?;
        for (name, dims, data) in &tensors {
            write_tensor(w, name, dims, data)?;
        }

        match &self.adam {
            None => w.write_all(&[0])?,
            Some(state) => {
                w.write_all(&[1])?;
                write_u64(w, state.step)?;
                for moments in [&state.m, &state.v] {
                    write_u32(w, moments.len() as u32)?;
                    for (k, t) in moments.iter().enumerate() {
                        write_tensor(w, &format!("moment{k}"), &[t.len()], t)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Format("bad magic header".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(NnError::Format(format!("unsupported checkpoint version {version}")));
        }
        let topo_len = read_u32(r)? as usize;
        let mut topo = vec![0u8; topo_len];
        r.read_exact(&mut topo)?;
        let topology: Topology = serde_json::from_slice(&topo).map_err(|e| NnError::Format(e.to_string()))?;
        let seed = read_u64(r)?;
        let frozen = read_u8(r)? != 0;

        let count = read_u32(r)? as usize;
        let mut tensors = (0..count).map(|_| read_tensor(r)).collect::<Result<Vec<_>>>()?.into_iter();
        let mut params = Vec::with_capacity(topology.nodes.len());
        let mut running = Vec::with_capacity(topology.nodes.len());
        for (i, node) in topology.nodes.iter().enumerate() {
            let shapes = node.layer.param_shapes();
            let mut ps = Vec::with_capacity(shapes.len());
            for (k, shape) in shapes.into_iter().enumerate() {
                let t = tensors
                    .next()
                    .ok_or_else(|| NnError::Format(format!("missing parameter {k} of {}", node.name)))?;
                let expected = format!("{i}.{}.p{k}", node.name);
                if t.name != expected || t.dims != shape {
                    return Err(NnError::Format(format!(
                        "expected {expected} {shape:?}, found {} {:?}",
                        t.name, t.dims
                    )));
                }
                ps.push(Param { shape, value: t.data });
            }
            params.push(ps);
            if matches!(node.layer, crate::LayerSpec::BatchNorm { .. }) {
                let mean = tensors.next().ok_or_else(|| NnError::Format("missing running mean".into()))?;
                let var = tensors.next().ok_or_else(|| NnError::Format("missing running var".into()))?;
                if !mean.name.ends_with("running_mean") || !var.name.ends_with("running_var") {
                    return Err(NnError::Format(format!("buffer order broken at {}", node.name)));
                }
                running.push(Some(RunningStats {
                    mean: mean.data,
                    var: var.data,
                }));
            } else {
                running.push(None);
            }
        }
        if tensors.next().is_some() {
            return Err(NnError::Format("trailing tensors after the parameter table".into()));
        }
        let graph = ComputeGraph::from_parts(topology, params, running, frozen)?;

        let adam = match read_u8(r)? {
            0 => None,
            1 => {
                let step = read_u64(r)?;
                let m = read_moments(r)?;
                let v = read_moments(r)?;
                Some(AdamState { step, m, v })
            }
            other => return Err(NnError::Format(format!("bad optimizer flag {other}"))),
        };
        Ok(Self { graph, adam, seed })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
