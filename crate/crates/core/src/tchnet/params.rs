use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::config::{Conventions, ModelConfig};
use super::weights::{layer_inventory, Component, Role};

/// Reference trainable-parameter total for the default configuration.
pub const REFERENCE_TOTAL: u64 = 2_691_696;

/// Accepted relative deviation from [`REFERENCE_TOTAL`].
pub const REFERENCE_TOLERANCE: f64 = 0.03;

/// Rounded per-component reference figures, in parameters. They are
/// proportional estimates and do not sum to the total.
pub const REFERENCE_APPROX: [(Component, u64); 11] = [
    (Component::FeatProj, 35_000),
    (Component::Frontend, 210_000),
    (Component::Path1, 570_000),
    (Component::Path2, 140_000),
    (Component::Path3, 430_000),
    (Component::Merge, 570_000),
    (Component::HBranch, 20_000),
    (Component::CBranch, 10_000),
    (Component::Fusion, 430_000),
    (Component::Head, 180_000),
    (Component::Decoder, 20_000),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentCount {
    pub component: Component,
    pub label: &'static str,
    pub count: u64,
    pub reference_approx: u64,
    /// Trainable values the alternative convention of the `conv_bias` flag adds
    /// or removes here.
    pub conv_bias_delta: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterReport {
    pub conventions: Conventions,
    pub total: u64,
    pub t_branch: u64,
    pub embedding_tables: u64,
    /// Batch-norm running statistics; stored but not trainable.
    pub buffers: u64,
    pub components: Vec<ComponentCount>,
    pub reference_total: u64,
    pub residual: i64,
    pub relative_residual: f64,
    pub within_tolerance: bool,
}

fn per_component(cfg: &ModelConfig, conv: Conventions) -> (BTreeMap<Component, u64>, u64) {
    let mut by: BTreeMap<Component, u64> = Component::ALL.iter().map(|&c| (c, 0)).collect();
    let mut buffers = 0;
    for spec in layer_inventory(cfg, conv) {
        if spec.role.trainable() {
            *by.get_mut(&spec.component).unwrap() += spec.numel() as u64;
        } else {
            buffers += spec.numel() as u64;
        }
    }
    (by, buffers)
}

/// Sums the trainable entries of the layer inventory.
pub fn count_parameters(cfg: &ModelConfig, conv: Conventions) -> ParameterReport {
    let (by, buffers) = per_component(cfg, conv);
    let alt = Conventions { conv_bias: !conv.conv_bias, ..conv };
    let (by_alt, _) = per_component(cfg, alt);
    let total: u64 = by.values().sum();
    let components = REFERENCE_APPROX
        .iter()
        .map(|&(c, approx)| ComponentCount {
            component: c,
            label: c.label(),
            count: by[&c],
            reference_approx: approx,
            conv_bias_delta: by_alt[&c] as i64 - by[&c] as i64,
        })
        .collect();
    let residual = total as i64 - REFERENCE_TOTAL as i64;
    let relative_residual = residual as f64 / REFERENCE_TOTAL as f64;
    ParameterReport {
        conventions: conv,
        total,
        t_branch: by.iter().filter(|(c, _)| c.in_t_branch()).map(|(_, n)| n).sum(),
        embedding_tables: by[&Component::CBranch],
        buffers,
        components,
        reference_total: REFERENCE_TOTAL,
        residual,
        relative_residual,
        within_tolerance: relative_residual.abs() <= REFERENCE_TOLERANCE,
    }
}

/// Count of the fusion Q/K/V weight matrices alone, `9·d_f²`.
pub fn fusion_qkv_weights(cfg: &ModelConfig, conv: Conventions) -> u64 {
    layer_inventory(cfg, conv)
        .iter()
        .filter(|s| s.role == Role::Weight && s.name.starts_with("fusion.") && ["q", "k", "v"].iter().any(|m| s.name.ends_with(&format!(".{m}.weight"))))
        .map(|s| s.numel() as u64)
        .sum()
}

impl ParameterReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameter report serialises")
    }

    /// One line per component explaining where the count differs from the
    /// reference split, plus the convention switch that closes the total.
    pub fn residual_explanation(&self) -> Vec<String> {
        let mut lines = Vec::new();
        for c in &self.components {
            lines.push(format!(
                "{}: {} vs ~{} ({:+}); conv-bias flip {:+}",
                c.label,
                c.count,
                c.reference_approx,
                c.count as i64 - c.reference_approx as i64,
                c.conv_bias_delta
            ));
        }
        let flip: i64 = self.components.iter().map(|c| c.conv_bias_delta).sum();
        lines.push(format!(
            "total {} vs {} ({:+}, {:+.3}%); flipping conv_bias to {} moves it by {:+} to {}",
            self.total,
            self.reference_total,
            self.residual,
            100.0 * self.relative_residual,
            !self.conventions.conv_bias,
            flip,
            self.total as i64 + flip
        ));
        lines
    }
}

impl fmt::Display for ParameterReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<26} {:>10} {:>10} {:>9}", "component", "params", "ref ~", "conv-bias")?;
        for c in &self.components {
            writeln!(f, "{:<26} {:>10} {:>10} {:>+9}", c.label, c.count, c.reference_approx, c.conv_bias_delta)?;
        }
        writeln!(f, "{:<26} {:>10}", "T-branch subtotal", self.t_branch)?;
        writeln!(f, "{:<26} {:>10}", "total trainable", self.total)?;
        writeln!(f, "{:<26} {:>10}", "batch-norm buffers", self.buffers)?;
        writeln!(
            f,
            "reference {} → residual {:+} ({:+.3}%), {}",
            self.reference_total,
            self.residual,
            100.0 * self.relative_residual,
            if self.within_tolerance { "within ±3%" } else { "OUTSIDE ±3%" }
        )?;
        writeln!(
            f,
            "conventions: linear bias {}, conv bias {}, affine norms {}, GRU double bias {}",
            self.conventions.linear_bias, self.conventions.conv_bias, self.conventions.norm_affine, self.conventions.gru_double_bias
        )
    }
}
