//! Flat clusters cut from a genealogy by the sign of each merge's log Z.

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::genealogy::Genealogy;
use crate::kernels::{self, KernelParams};

#[derive(Clone, Debug, PartialEq)]
pub struct FlatCluster {
    /// Leaf indices in increasing order.
    pub members: Vec<usize>,
    /// Log-likelihood ratio of the cluster's top merge; 0 for singletons.
    pub llr: f64,
    /// Formation time of the cluster's top node; 0 for singletons.
    pub time: f64,
}

/// Walks down from the root. A node whose merge has positive log Z becomes a
/// cluster; otherwise both children are visited. Leaves reached without a
/// break form singletons.
pub fn flat_clusters(g: &Genealogy, data: &DataMatrix, params: &KernelParams) -> Result<Vec<FlatCluster>> {
    if matches!(params, KernelParams::Brownian { .. }) {
        return Err(Error::Unsupported(
            "flat clusters need a stationary model; the brownian ratio is undefined".into(),
        ));
    }
    let (_, log_z) = kernels::upward_pass(g, data, params)?;
    let n = g.n_leaves();
    let times = g.node_times();
    let leaf_sets = g.leaf_sets();
    let mut out = Vec::new();
    let mut stack = vec![g.root()];
    while let Some(node) = stack.pop() {
        if node < n {
            out.push(FlatCluster {
                members: vec![node],
                llr: 0.0,
                time: 0.0,
            });
            continue;
        }
        let llr = log_z[node - n];
        if llr > 0.0 {
            let mut members = leaf_sets[node].clone();
            members.sort_unstable();
            out.push(FlatCluster {
                members,
                llr,
                time: times[node],
            });
        } else {
            let (l, r) = g.children(node).expect("internal node");
            stack.push(r);
            stack.push(l);
        }
    }
    out.sort_by_key(|c| c.members[0]);
    Ok(out)
}
