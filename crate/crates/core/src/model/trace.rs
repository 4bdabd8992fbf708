use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Attention recorded while greedily decoding one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    /// Query tokens followed by the end symbol (one per encoder step).
    pub query: Vec<String>,
    /// Support inputs in memory order.
    pub support: Vec<String>,
    /// `T × n_s` memory weights; empty for models without memory.
    pub memory_attention: Vec<Vec<f64>>,
    /// Symbols emitted by the decoder, including the end symbol.
    pub decoder_steps: Vec<String>,
    /// One row over the `T` encoder steps per decoder step; empty when the
    /// decoder has no attention.
    pub decoder_attention: Vec<Vec<f64>>,
}

impl AttentionTrace {
    /// Largest deviation of any attention row sum from 1.
    pub fn max_row_error(&self) -> f64 {
        self.memory_attention
            .iter()
            .chain(&self.decoder_attention)
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Plain-text record: header lines, then tab-separated matrix rows each
    /// annotated with its sum.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "query\t{}", self.query.join(" "));
        let _ = writeln!(s, "support\t{}", self.support.join("\t"));
        let _ = writeln!(s, "output\t{}", self.decoder_steps.join(" "));
        let _ = writeln!(s, "memory_attention\t{}x{}", self.memory_attention.len(), self.support.len());
        for (tok, row) in self.query.iter().zip(&self.memory_attention) {
            write_row(&mut s, tok, row);
        }
        let _ = writeln!(s, "decoder_attention\t{}x{}", self.decoder_attention.len(), self.query.len());
        for (tok, row) in self.decoder_steps.iter().zip(&self.decoder_attention) {
            write_row(&mut s, tok, row);
        }
        s.push('\n');
        s
    }

    /// Standalone SVG with the memory heatmap on the left and the decoder
    /// heatmap on the right.
    pub fn to_svg(&self) -> String {
        const CELL: usize = 28;
        const LABEL: usize = 110;
        const TOP: usize = 120;
        let left_w = LABEL + CELL * self.support.len().max(1);
        let right_x = left_w + 40;
        let right_w = LABEL + CELL * self.query.len();
        let rows = self.query.len().max(self.decoder_steps.len());
        let width = right_x + right_w + 20;
        let height = TOP + CELL * rows + 30;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="monospace" font-size="11">"#
        );
        let _ = writeln!(s, r#"<text x="4" y="14">{}</text>"#, escape(&self.query.join(" ")));
        panel(&mut s, 0, TOP, "memory", &self.query, &self.support, &self.memory_attention);
        panel(&mut s, right_x, TOP, "decoder", &self.decoder_steps, &self.query, &self.decoder_attention);
        s.push_str("</svg>\n");
        s
    }
}

fn write_row(s: &mut String, label: &str, row: &[f64]) {
    let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
    let sum: f64 = row.iter().sum();
    let _ = writeln!(s, "{label}\t{}\t# sum={sum:.6}", cells.join("\t"));
}

fn panel(s: &mut String, x0: usize, y0: usize, title: &str, rows: &[String], cols: &[String], m: &[Vec<f64>]) {
    const CELL: usize = 28;
    const LABEL: usize = 110;
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-weight="bold">{title}</text>"#, x0 + 4, y0 - 96);
    for (j, c) in cols.iter().enumerate() {
        let x = x0 + LABEL + j * CELL + CELL / 2;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" transform="rotate(-60 {x} {})">{}</text>"#,
            y0 - 4,
            y0 - 4,
            escape(c)
        );
    }
    for (i, r) in rows.iter().enumerate() {
        let y = y0 + i * CELL;
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, x0 + 4, y + CELL / 2 + 4, escape(r));
        let Some(weights) = m.get(i) else { continue };
        for (j, &w) in weights.iter().enumerate() {
            let shade = (255.0 * (1.0 - w.clamp(0.0, 1.0))).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({shade},{shade},255)" stroke="rgb(204,204,204)"><title>{w:.4}</title></rect>"#,
                x0 + LABEL + j * CELL
            );
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> AttentionTrace {
        AttentionTrace {
            query: vec!["dax".into(), "<eos>".into()],
            support: vec!["wif".into(), "lug".into()],
            memory_attention: vec![vec![0.5, 0.5], vec![0.25, 0.75]],
            decoder_steps: vec!["blue".into(), "<eos>".into()],
            decoder_attention: vec![vec![0.9, 0.1], vec![0.3, 0.7]],
        }
    }

    #[test]
    fn text_export_lists_sums() {
        let t = sample().to_text();
        assert!(t.contains("memory_attention\t2x2"));
        assert!(t.contains("dax\t0.500000\t0.500000\t# sum=1.000000"));
        assert!(t.contains("decoder_attention\t2x2"));
        assert!(sample().max_row_error() < 1e-12);
    }

    #[test]
    fn svg_is_well_formed() {
        let svg = sample().to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect").count(), 8);
        assert!(svg.contains("&lt;eos&gt;"));
    }
}
