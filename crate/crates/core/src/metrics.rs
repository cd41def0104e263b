//! Closed-form storage, proof-size and communication costs, plus analytic
//! rows for baseline dispersal schemes.
//!
//! Layer counts are kept fractional (`log_{qr}(b / (c t r))`), so these are
//! formula values; a built tree has an integral number of layers.

use serde::Serialize;

use crate::cit::{TreeParams, HASH_SIZE};
use crate::dispersal::DispersalParams;

pub const KB: f64 = 1024.0;
pub const MB: f64 = 1024.0 * 1024.0;
/// A thousand MB-of-1000-kB, i.e. `10^6` kB. Network totals are reported in it.
pub const GB: f64 = 1.0e6 * KB;

/// `log_{qr}(b / (c t r))`: aggregation steps from base to root.
pub fn layer_count(b: f64, tree: &TreeParams) -> f64 {
    let r = tree.r.as_f64();
    let ratio = b / (tree.c as f64 * tree.t as f64 * r);
    ratio.ln() / (tree.q as f64 * r).ln()
}

/// Bytes stored per node: the root, the node's base symbols, and the
/// sampled symbols and sibling hashes of their proofs.
pub fn storage_cost_x(b: f64, nodes: usize, tree: &TreeParams, dispersal: &DispersalParams) -> f64 {
    let y = HASH_SIZE as f64;
    let n = nodes as f64;
    let r = tree.r.as_f64();
    let c = tree.c as f64;
    let q = tree.q as f64;
    let lambda = dispersal.lambda;
    tree.t as f64 * y
        + b / (n * r * lambda)
        + (2.0 * q - 1.0) * b * y / (n * r * c * lambda) * layer_count(b, tree)
}

/// Bytes in a proof of a failed equation: `d - 1` symbols and `d` paths.
pub fn fraud_proof_p(b: f64, tree: &TreeParams) -> f64 {
    let d = tree.d as f64;
    let y = HASH_SIZE as f64;
    (d - 1.0) * tree.c as f64 + d * y * (tree.q as f64 - 1.0) * layer_count(b, tree)
}

pub fn communication(b: f64, nodes: usize, tree: &TreeParams, dispersal: &DispersalParams) -> f64 {
    nodes as f64 * storage_cost_x(b, nodes, tree, dispersal)
}

/// Efficiency at which `(1 - 2 beta) N` responders cover an `eta` fraction:
/// `(1 - 2 beta) / ln(1 / (1 - eta))`.
pub fn tolerant_lambda(beta: f64, eta: f64) -> f64 {
    (1.0 - 2.0 * beta) / (1.0 / (1.0 - eta)).ln()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BaselineRow {
    pub scheme: &'static str,
    pub max_adversary_fraction: f64,
    pub normal_storage_overhead: &'static str,
    pub normal_download_overhead: &'static str,
    pub worst_storage_overhead: &'static str,
    pub worst_download_overhead: &'static str,
    pub communication_complexity: &'static str,
    /// Communication with unit constants in the asymptotic class.
    pub communication_bytes: f64,
}

/// Analytic rows for the compared schemes, ACeD last.
pub fn baseline_table(b: f64, nodes: usize, tree: &TreeParams, dispersal: &DispersalParams) -> Vec<BaselineRow> {
    let n = nodes as f64;
    vec![
        BaselineRow {
            scheme: "uncoded (repetition)",
            max_adversary_fraction: 0.5,
            normal_storage_overhead: "O(N)",
            normal_download_overhead: "O(1)",
            worst_storage_overhead: "O(N)",
            worst_download_overhead: "O(1)",
            communication_complexity: "O(Nb)",
            communication_bytes: n * b,
        },
        BaselineRow {
            scheme: "uncoded (dispersal)",
            max_adversary_fraction: 1.0 / n,
            normal_storage_overhead: "O(1)",
            normal_download_overhead: "O(1)",
            worst_storage_overhead: "O(1)",
            worst_download_overhead: "O(1)",
            communication_complexity: "O(b)",
            communication_bytes: b,
        },
        BaselineRow {
            scheme: "AVID",
            max_adversary_fraction: 1.0 / 3.0,
            normal_storage_overhead: "O(1)",
            normal_download_overhead: "O(1)",
            worst_storage_overhead: "O(1)",
            worst_download_overhead: "O(1)",
            communication_complexity: "O(Nb)",
            communication_bytes: n * b,
        },
        BaselineRow {
            scheme: "1D-RS",
            max_adversary_fraction: 0.5,
            normal_storage_overhead: "O(1)",
            normal_download_overhead: "O(1)",
            worst_storage_overhead: "O(b)",
            worst_download_overhead: "O(b)",
            communication_complexity: "O(b)",
            communication_bytes: b,
        },
        BaselineRow {
            scheme: "ACeD",
            max_adversary_fraction: 0.5,
            normal_storage_overhead: "O(1)",
            normal_download_overhead: "O(1)",
            worst_storage_overhead: "O(log b)",
            worst_download_overhead: "O(log b)",
            communication_complexity: "O(b)",
            communication_bytes: communication(b, nodes, tree, dispersal),
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub block_size: f64,
    pub nodes: usize,
    pub lambda: f64,
    pub layer_count: f64,
    pub storage_cost_x: f64,
    pub fraud_proof_p: f64,
    pub communication: f64,
    /// `N X / b`.
    pub normal_storage_overhead: f64,
    pub normal_download_overhead: f64,
    /// `P / y`.
    pub worst_storage_overhead: f64,
    pub worst_download_overhead: f64,
    pub chunks: f64,
    pub chunks_per_node: f64,
    pub baselines: Vec<BaselineRow>,
}

pub fn report(b: f64, nodes: usize, tree: &TreeParams, dispersal: &DispersalParams) -> MetricsReport {
    let x = storage_cost_x(b, nodes, tree, dispersal);
    let p = fraud_proof_p(b, tree);
    let comm = nodes as f64 * x;
    let chunks = b / (tree.c as f64 * tree.r.as_f64());
    MetricsReport {
        block_size: b,
        nodes,
        lambda: dispersal.lambda,
        layer_count: layer_count(b, tree),
        storage_cost_x: x,
        fraud_proof_p: p,
        communication: comm,
        normal_storage_overhead: comm / b,
        normal_download_overhead: comm / b,
        worst_storage_overhead: p / HASH_SIZE as f64,
        worst_download_overhead: p / HASH_SIZE as f64,
        chunks,
        chunks_per_node: chunks / (nodes as f64 * dispersal.lambda),
        baselines: baseline_table(b, nodes, tree, dispersal),
    }
}

impl MetricsReport {
    /// Baseline rows as CSV with a header line.
    pub fn baselines_csv(&self) -> String {
        let mut s = String::from(
            "scheme,maximal adversary fraction,normal storage overhead,normal download overhead,\
             worst storage overhead,worst download overhead,communication complexity,communication bytes\n",
        );
        for row in &self.baselines {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.scheme,
                row.max_adversary_fraction,
                row.normal_storage_overhead,
                row.normal_download_overhead,
                row.worst_storage_overhead,
                row.worst_download_overhead,
                row.communication_complexity,
                row.communication_bytes
            ));
        }
        s
    }

    /// Headline figures as `metric,value` CSV.
    pub fn summary_csv(&self) -> String {
        let rows = [
            ("storage_cost_x_bytes", self.storage_cost_x),
            ("fraud_proof_p_bytes", self.fraud_proof_p),
            ("communication_bytes", self.communication),
            ("normal_storage_overhead", self.normal_storage_overhead),
            ("normal_download_overhead", self.normal_download_overhead),
            ("worst_storage_overhead", self.worst_storage_overhead),
            ("worst_download_overhead", self.worst_download_overhead),
            ("layer_count", self.layer_count),
            ("chunks", self.chunks),
            ("chunks_per_node", self.chunks_per_node),
        ];
        let mut s = String::from("metric,value\n");
        for (k, v) in rows {
            s.push_str(&format!("{k},{v}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Rate;

    fn deployment_tree() -> TreeParams {
        TreeParams {
            c: 48 * 1024,
            t: 16,
            r: Rate::one_over(4).unwrap(),
            q: 8,
            d: 8,
            alpha: 0.125,
            code_seed: 0,
            gate_trials: 0,
            max_regenerations: 0,
        }
    }

    fn dispersal(lambda: f64) -> DispersalParams {
        DispersalParams {
            gamma: 1.0 - 2.0 * 0.49,
            eta: 0.875,
            lambda,
        }
    }

    // Expected values recomputed at 40 digits by scripts/reference_metrics.py.
    #[test]
    fn deployment_figures_match_reference() {
        let tree = deployment_tree();
        let lambda = tolerant_lambda(0.49, 0.875);
        assert!((1.0 / lambda - 103.972).abs() < 1e-3);
        let x = storage_cost_x(12.0 * MB, 9000, &tree, &dispersal(lambda));
        assert!((x - 616_035.57).abs() < 0.1, "{x}");
        let p = fraud_proof_p(12.0 * MB, &tree);
        assert!((p - 354_816.0).abs() < 1e-6, "{p}");
        let comm = communication(12.0 * MB, 9000, &tree, &dispersal(lambda));
        assert!((comm / GB - 5.4144).abs() < 1e-3);
    }

    #[test]
    fn storage_floor_is_the_root() {
        let tree = deployment_tree();
        let x = storage_cost_x(12.0 * MB, 9000, &tree, &dispersal(1e12));
        assert!((x - 16.0 * 32.0).abs() < 1e-3);
    }

    #[test]
    fn degenerate_equation_has_only_paths() {
        let mut tree = deployment_tree();
        tree.d = 1;
        let p = fraud_proof_p(12.0 * MB, &tree);
        assert!((p - 32.0 * 7.0 * layer_count(12.0 * MB, &tree)).abs() < 1e-9);
    }

    #[test]
    fn communication_is_linear_in_nodes_given_x() {
        let tree = deployment_tree();
        let d = dispersal(0.01);
        let x1 = storage_cost_x(12.0 * MB, 1, &tree, &d);
        assert_eq!(communication(12.0 * MB, 1, &tree, &d), x1);
    }

    #[test]
    fn baseline_rows() {
        let tree = deployment_tree();
        let rows = baseline_table(12.0 * MB, 9000, &tree, &dispersal(0.01));
        assert_eq!(rows[0].communication_bytes, 9000.0 * 12.0 * MB);
        assert_eq!(rows[1].max_adversary_fraction, 1.0 / 9000.0);
        assert_eq!(rows[4].worst_storage_overhead, "O(log b)");
        let csv = report(12.0 * MB, 9000, &tree, &dispersal(0.01)).baselines_csv();
        assert_eq!(csv.lines().count(), 6);
    }
}
