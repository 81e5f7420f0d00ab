use std::collections::BTreeMap;
use std::fmt::Write;

use super::DirectedGraph;

pub const GEXF_NAMESPACE: &str = "http://gexf.net/1.3";

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Serialize as a directed GEXF 1.3 document.
///
/// Output depends only on the graph: node ids follow label order and no
/// timestamps are written. Each edge carries its fraction as `weight` and its
/// raw count as the `packets` attribute.
pub fn export_gexf(graph: &DirectedGraph) -> String {
    let mut labels: Vec<String> = graph.nodes.iter().map(ToString::to_string).collect();
    labels.sort();
    labels.dedup();
    let ids: BTreeMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let mut edges: Vec<(String, String, f64, u64)> = graph
        .edges
        .iter()
        .map(|e| (e.src.to_string(), e.dst.to_string(), e.weight, e.packets))
        .collect();
    edges.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));

    let mut x = String::new();
    x.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        x,
        "<gexf xmlns=\"{GEXF_NAMESPACE}\" xmlns:xsi=\"http://www.w3.org/2001/XMLSchema-instance\" \
         xsi:schemaLocation=\"{GEXF_NAMESPACE} {GEXF_NAMESPACE}/gexf.xsd\" version=\"1.3\">"
    );
    x.push_str("  <meta>\n    <creator>bacscope</creator>\n    <description>BACnet communication flows</description>\n  </meta>\n");
    x.push_str("  <graph mode=\"static\" defaultedgetype=\"directed\">\n");
    x.push_str("    <attributes class=\"edge\" mode=\"static\">\n");
    x.push_str("      <attribute id=\"packets\" title=\"packets\" type=\"long\"/>\n");
    x.push_str("    </attributes>\n");
    x.push_str("    <nodes>\n");
    for (i, label) in labels.iter().enumerate() {
        let _ = writeln!(x, "      <node id=\"n{i}\" label=\"{}\"/>", escape(label));
    }
    x.push_str("    </nodes>\n");
    x.push_str("    <edges>\n");
    for (i, (src, dst, weight, packets)) in edges.iter().enumerate() {
        let _ = writeln!(
            x,
            "      <edge id=\"e{i}\" source=\"n{}\" target=\"n{}\" weight=\"{weight}\">",
            ids[src.as_str()],
            ids[dst.as_str()]
        );
        let _ = writeln!(
            x,
            "        <attvalues>\n          <attvalue for=\"packets\" value=\"{packets}\"/>\n        </attvalues>"
        );
        x.push_str("      </edge>\n");
    }
    x.push_str("    </edges>\n");
    x.push_str("  </graph>\n");
    x.push_str("</gexf>\n");
    x
}
