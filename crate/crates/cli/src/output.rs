//! Artifact writers shared by the subcommands: pretty JSON, Graphviz
//! rendering of the cluster-feature map, and aligned attention tables.

use std::fs;
use std::path::Path;

use dupdist_core::clustering::ClusterFeatureEdge;
use dupdist_core::Result;

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Bipartite cluster-feature graph in DOT form. Edge width scales with
/// support so heavily backed links stand out.
pub fn dot_graph(edges: &[ClusterFeatureEdge]) -> String {
    let mut out = String::from("graph cluster_feature_map {\n");
    out.push_str("  rankdir=LR;\n");
    out.push_str("  node [fontname=\"Helvetica\"];\n");

    let mut clusters: Vec<usize> = edges.iter().map(|e| e.cluster).collect();
    clusters.sort_unstable();
    clusters.dedup();
    for c in &clusters {
        out.push_str(&format!("  c{c} [label=\"cluster {c}\", shape=box];\n"));
    }

    let mut features: Vec<&str> = edges.iter().map(|e| e.feature.as_str()).collect();
    features.sort_unstable();
    features.dedup();
    for (i, f) in features.iter().enumerate() {
        let label = f.replace('\\', "\\\\").replace('"', "\\\"");
        out.push_str(&format!("  f{i} [label=\"{label}\", shape=ellipse];\n"));
    }

    let max_support = edges.iter().map(|e| e.support).max().unwrap_or(1) as f64;
    for e in edges {
        let fi = features.binary_search(&e.feature.as_str()).expect("feature indexed above");
        let width = 1.0 + 4.0 * e.support as f64 / max_support;
        out.push_str(&format!(
            "  c{} -- f{fi} [label=\"{}\", penwidth={width:.2}];\n",
            e.cluster, e.support
        ));
    }
    out.push_str("}\n");
    out
}

/// Per-word attention weights as a fixed-width text table.
pub fn attention_table(title: &str, rows: &[(String, f64, f64)]) -> String {
    let width = rows.iter().map(|(w, _, _)| w.len()).chain(["word".len()]).max().unwrap_or(4);
    let mut out = format!("{title}:\n  {:width$}  {:>8}  {:>9}\n", "word", "alpha", "beta_mean");
    for (word, alpha, beta_mean) in rows {
        out.push_str(&format!("  {word:width$}  {alpha:>8.4}  {beta_mean:>9.4}\n"));
    }
    out
}
