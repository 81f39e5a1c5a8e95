//! Learned spatial statistics: perception radii, out-degrees and the
//! averaged allocation matrix.

use std::path::Path;

use flownet_core::data::WindowSet;
use flownet_core::diff::{ParamStore, Tensor};
use flownet_core::stack::FlowNet;
use flownet_core::Scalar;
use serde::Serialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskStatRow {
    pub node: String,
    pub patch: usize,
    pub radius: f64,
    /// Other nodes strictly inside the radius.
    pub out_degree: usize,
}

fn check_nodes<T: Scalar>(net: &FlowNet<T>, windows: &WindowSet) -> Result<()> {
    if windows.is_empty() {
        return Err(CliError::Config("the selected split yields no windows".into()));
    }
    if windows.nodes() != net.nodes() {
        return Err(CliError::Config(format!("checkpoint has {} nodes, data has {}", net.nodes(), windows.nodes())));
    }
    Ok(())
}

/// Radius and out-degree per node and patch.
///
/// The radius pre-activation is affine in the input window, so evaluating
/// the mean window equals averaging the features over the batch.
pub fn mask_stats<T: Scalar>(net: &FlowNet<T>, params: &ParamStore<T>, windows: &WindowSet, node_ids: &[String]) -> Result<Vec<MaskStatRow>> {
    check_nodes(net, windows)?;
    let (b, n, t) = (windows.len(), windows.nodes(), windows.input_len());
    let mut mean = vec![0.0; n * t];
    for w in windows.inputs.data().chunks(n * t) {
        mean.iter_mut().zip(w).for_each(|(m, v)| *m += v / b as f64);
    }
    let x = Tensor::new(vec![1, n, t], mean)?.cast::<T>();
    let radii = net.inspect(params, &x)?.radii.cast::<f64>();
    let dist = net.distances().cast::<f64>();
    let p = radii.shape()[2];
    let mut rows = Vec::with_capacity(n * p);
    for i in 0..n {
        for patch in 0..p {
            let r = radii.at(&[0, i, patch]);
            let out_degree = (0..n).filter(|&j| j != i && dist.at(&[i, j]) < r).count();
            rows.push(MaskStatRow { node: node_ids[i].clone(), patch, radius: r, out_degree });
        }
    }
    Ok(rows)
}

/// `[N, N]` allocation averaged over heads, patches, windows and either all
/// layers or one.
pub fn allocation_average<T: Scalar>(
    net: &FlowNet<T>,
    params: &ParamStore<T>,
    windows: &WindowSet,
    layer: Option<usize>,
    batch_size: usize,
) -> Result<Tensor<f64>> {
    check_nodes(net, windows)?;
    let layers = net.config().fam_layers;
    if let Some(l) = layer {
        if l >= layers {
            return Err(CliError::Config(format!("layer {l} out of range; the model has {layers}")));
        }
    }
    let n = net.nodes();
    let mut acc = vec![0.0; n * n];
    let mut count = 0usize;
    let idx: Vec<usize> = (0..windows.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = windows.select(chunk);
        let ins = net.inspect(params, &x.cast::<T>())?;
        for (l, lam) in ins.allocations.iter().enumerate() {
            if layer.is_some_and(|want| want != l) {
                continue;
            }
            for m in lam.data().chunks(n * n) {
                acc.iter_mut().zip(m).for_each(|(a, v)| *a += v.to_f64().unwrap());
                count += 1;
            }
        }
    }
    acc.iter_mut().for_each(|a| *a /= count as f64);
    Ok(Tensor::new(vec![n, n], acc)?)
}

pub fn write_mask_stats(path: &Path, rows: &[MaskStatRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Headerless CSV, one matrix row per line.
pub fn write_matrix(path: &Path, m: &Tensor<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    let cols = m.shape()[1];
    for row in m.data().chunks(cols) {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Tensor<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        for f in rec.iter() {
            data.push(f.trim().parse::<f64>().map_err(|e| CliError::Config(format!("bad number `{f}`: {e}")))?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Config(format!("{} is empty", path.display())));
    }
    let cols = data.len() / rows;
    Ok(Tensor::new(vec![rows, cols], data)?)
}
